use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anchordiff::trace::DecodeTrace;
use anchordiff::{decode, DecodeOutput, PredictionTable, Recorder};

use crate::config::{Backend, Run};
use crate::error::{CliError, CliResult};

/// Runs `run` once with `seed`, optionally recording the denoiser's answers.
pub fn execute(run: &Run, seed: u64, record: bool) -> CliResult<(DecodeOutput, Option<PredictionTable>)> {
    let mut cfg = run.decode.clone();
    cfg.seed = seed;
    let mut denoiser = run.backend.open(&cfg.vocab)?;
    let (mut out, table) = if record {
        let mut rec = Recorder::new(denoiser);
        let out = decode(&cfg, &mut rec)?;
        (out, Some(rec.into_table()))
    } else {
        (decode(&cfg, &mut denoiser)?, None)
    };
    if let Backend::Synthetic(model) = &run.backend {
        out.trace.header.synthetic = Some(model.clone());
    }
    Ok((out, table))
}

pub fn read_trace(path: &Path) -> CliResult<DecodeTrace> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    DecodeTrace::read_jsonl(BufReader::new(file))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_trace(path: &Path, trace: &DecodeTrace) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    trace
        .write_jsonl(BufWriter::new(file))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_table(path: &Path, table: &PredictionTable) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    table
        .write_jsonl(BufWriter::new(file))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// `out.jsonl` -> `out.seed7.jsonl` when a run has several seeds.
pub fn per_seed_path(path: &Path, seed: u64, many: bool) -> PathBuf {
    if !many {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}.seed{seed}"),
    };
    path.with_file_name(name)
}
