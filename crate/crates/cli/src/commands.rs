use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anchordiff::stats::{self, average_histograms, compare_runs, early_decode_histogram, eot_ratio};
use anchordiff::trace::DecodeTrace;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

use crate::args::{DecodeArgs, StatsArgs, SweepArgs};
use crate::config::{read_json, resolve, Backend, Run};
use crate::error::{CliError, CliResult};
use crate::run::{execute, per_seed_path, read_trace, write_table, write_trace};

const PRESET_GRID: &str = include_str!("../presets/sweep_grid.json");

fn run_from_trace(args: &DecodeArgs, path: &PathBuf) -> CliResult<Run> {
    let trace = read_trace(path)?;
    let header = trace.header;
    let decode = header.decode_config()?;
    let backend = match (&args.run.model, &header.synthetic) {
        (Some(spec), _) => Backend::parse(spec, &PathBuf::new())?,
        (None, Some(model)) => Backend::Synthetic(model.clone()),
        (None, None) => Backend::parse(&header.model, &PathBuf::new()).map_err(|_| {
            CliError::config(format!(
                "trace was produced by {:?}; pass --model to choose a backend",
                header.model
            ))
        })?,
    };
    Ok(Run {
        seeds: vec![decode.seed],
        decode,
        backend,
    })
}

pub fn decode(args: &DecodeArgs) -> CliResult<()> {
    let run = match &args.from_trace {
        Some(path) => run_from_trace(args, path)?,
        None => resolve(&args.run)?,
    };
    let many = run.seeds.len() > 1;
    let stdout = std::io::stdout();
    for &seed in &run.seeds {
        let (out, table) = execute(&run, seed, args.record.is_some())?;
        if let Some(path) = &args.trace {
            write_trace(&per_seed_path(path, seed, many), &out.trace)?;
        }
        if let (Some(path), Some(table)) = (&args.record, &table) {
            write_table(&per_seed_path(path, seed, many), table)?;
        }
        let vocab = &run.decode.vocab;
        let mut line = json!({
            "seed": seed,
            "tokens": out.tokens,
            "eot_ratio": eot_ratio(&out.tokens, vocab.eot_id),
        });
        if vocab.tokens.is_some() {
            let text: Vec<String> = out.tokens.iter().map(|&t| vocab.display(t)).collect();
            line["text"] = json!(text.join(" "));
        }
        writeln!(stdout.lock(), "{line}").map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Grid {
    kappa: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
    gamma: Option<Vec<f64>>,
}

#[derive(Debug)]
struct SweepRow {
    kappa: f64,
    beta: f64,
    gamma: f64,
    runs: usize,
    eot_ratio: Option<f64>,
    anchor_concentration: Option<f64>,
    runtime_ms: u128,
    status: String,
}

impl SweepRow {
    fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},\"{}\"",
            self.kappa,
            self.beta,
            self.gamma,
            self.runs,
            opt(self.eot_ratio),
            opt(self.anchor_concentration),
            self.runtime_ms,
            self.status.replace('"', "\"\"")
        )
    }
}

fn grid_cells(grid: Grid, base: &Run) -> CliResult<Vec<(f64, f64, f64)>> {
    if grid.kappa.is_none() && grid.beta.is_none() && grid.gamma.is_none() {
        return Err(CliError::config("sweep grid is empty"));
    }
    let m = base.decode.modulation.unwrap_or_default();
    let axis = |name: &str, v: Option<Vec<f64>>, fallback: f64| match v {
        Some(v) if v.is_empty() => Err(CliError::config(format!("grid axis {name} is empty"))),
        Some(v) => Ok(v),
        None => Ok(vec![fallback]),
    };
    let kappas = axis("kappa", grid.kappa, m.kappa)?;
    let betas = axis("beta", grid.beta, m.beta)?;
    let gammas = axis("gamma", grid.gamma, m.gamma)?;
    let mut cells = Vec::new();
    for &k in &kappas {
        for &b in &betas {
            for &g in &gammas {
                cells.push((k, b, g));
            }
        }
    }
    Ok(cells)
}

fn sweep_cell(base: &Run, cell: (f64, f64, f64), bins: usize, early: f64) -> (SweepRow, Option<CliError>) {
    let start = Instant::now();
    let mut run = base.clone();
    let (kappa, beta, gamma) = cell;
    let mut m = run.decode.modulation.unwrap_or_default();
    m.kappa = kappa;
    m.beta = beta;
    m.gamma = gamma;
    run.decode.modulation = Some(m);

    let outcome = (|| -> CliResult<(f64, Option<f64>)> {
        m.validate()?;
        let mut ratios = Vec::new();
        let mut hists = Vec::new();
        for &seed in &run.seeds {
            let (out, _) = execute(&run, seed, false)?;
            ratios.push(eot_ratio(&out.tokens, run.decode.vocab.eot_id));
            hists.push(early_decode_histogram(&out.trace, bins, early)?);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        Ok((mean, average_histograms(&hists)?.anchor_concentration()))
    })();
    let mut row = SweepRow {
        kappa,
        beta,
        gamma,
        runs: run.seeds.len(),
        eot_ratio: None,
        anchor_concentration: None,
        runtime_ms: 0,
        status: "ok".into(),
    };
    let err = match outcome {
        Ok((ratio, conc)) => {
            row.eot_ratio = Some(ratio);
            row.anchor_concentration = conc;
            None
        }
        Err(e) => {
            row.status = e.to_string();
            Some(e)
        }
    };
    row.runtime_ms = start.elapsed().as_millis();
    (row, err)
}

pub fn sweep(args: &SweepArgs) -> CliResult<()> {
    let base = resolve(&args.run)?;
    if base.decode.modulation.is_none() {
        return Err(CliError::config("a sweep varies modulation; drop --no-modulation"));
    }
    let grid: Grid = match &args.grid {
        Some(path) => read_json(path)?,
        None => serde_json::from_str(PRESET_GRID).expect("preset grid parses"),
    };
    let cells = grid_cells(grid, &base)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config(e.to_string()))?;
    let results: Vec<(SweepRow, Option<CliError>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| sweep_cell(&base, cell, args.bins, args.early_fraction))
            .collect()
    });

    let mut csv = String::from("kappa,beta,gamma,runs,eot_ratio,anchor_concentration,runtime_ms,status\n");
    for (row, _) in &results {
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    match &args.out {
        Some(path) => fs::write(path, csv).map_err(|e| CliError::io(path, e))?,
        None => print!("{csv}"),
    }
    let failures: Vec<&CliError> = results.iter().filter_map(|(_, e)| e.as_ref()).collect();
    match failures.first() {
        None => Ok(()),
        Some(first) => {
            let msg = format!("{} of {} sweep cells failed; first: {first}", failures.len(), results.len());
            Err(match first {
                CliError::Config(_) => CliError::Config(msg),
                CliError::Denoiser(_) => CliError::Denoiser(msg),
                CliError::Io(_) => CliError::Io(msg),
            })
        }
    }
}

pub fn stats(args: &StatsArgs) -> CliResult<()> {
    let traces: Vec<DecodeTrace> = args.traces.iter().map(|p| read_trace(p)).collect::<CliResult<_>>()?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    let mut hists = Vec::new();
    for (path, trace) in args.traces.iter().zip(&traces) {
        let report = stats::report(trace, args.bins, args.early_fraction)?;
        let line = json!({
            "trace": path.display().to_string(),
            "anchor_concentration": report.histogram.anchor_concentration(),
            "report": report,
        });
        writeln!(out, "{line}").map_err(io)?;
        hists.push(report.histogram);
    }
    if args.compare {
        let [a, b] = traces.as_slice() else {
            return Err(CliError::config("--compare needs exactly two traces"));
        };
        let cmp = compare_runs(a, b, args.bins, args.early_fraction)?;
        writeln!(out, "{}", json!({ "comparison": cmp })).map_err(io)?;
    }
    if let Some(path) = &args.histogram_csv {
        let length = traces[0].length();
        if traces.iter().any(|t| t.length() != length) {
            return Err(CliError::config("histogram CSV needs traces of one length"));
        }
        let csv = average_histograms(&hists)?.to_csv(length);
        fs::write(path, csv).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
