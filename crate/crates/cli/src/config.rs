//! Run configuration: a JSON file whose keys mirror the flags, overridden by
//! the flags themselves.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anchordiff::remote::ENDPOINT_ENV;
use anchordiff::{
    AnchorSpec, DecodeConfig, DecodeMode, Denoiser, ModulationParams, PredictionTable,
    RemoteDenoiser, Strategy, SyntheticModelConfig, TableDenoiser, TieBreak, TokenId, Vocabulary,
};
use serde::Deserialize;
use serde_json::Value;

use crate::args::RunArgs;
use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    /// Inline synthetic model, instead of `model`.
    pub synthetic: Option<Value>,
    pub length: Option<usize>,
    pub steps: Option<usize>,
    pub strategy: Option<String>,
    pub anchor_file: Option<PathBuf>,
    pub anchor_tokens: Option<Vec<u32>>,
    pub anchor_offset: Option<usize>,
    pub anchor_display: Option<String>,
    pub kappa: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(default)]
    pub no_modulation: bool,
    #[serde(default)]
    pub no_progress_dependence: bool,
    #[serde(default)]
    pub eot_suppression: bool,
    #[serde(default)]
    pub eot_hard_ban: bool,
    pub block_size: Option<usize>,
    pub seed: Option<u64>,
    pub repeat: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub tie_break: Option<String>,
    pub top_k: Option<usize>,
    pub prompt: Option<Vec<u32>>,
    pub vocab_size: Option<u32>,
    pub mask_id: Option<u32>,
    pub eot_id: Option<u32>,
}

#[derive(Debug, Clone)]
pub enum Backend {
    Synthetic(SyntheticModelConfig),
    Remote(String),
    Table(PathBuf),
}

impl Backend {
    /// Parses a `kind:target` model spec. Relative paths resolve against `base`.
    pub fn parse(spec: &str, base: &Path) -> CliResult<Self> {
        let (kind, target) = spec.split_once(':').unwrap_or((spec, ""));
        match kind {
            "synthetic" => {
                let path = base.join(target);
                let raw: Value = read_json(&path)?;
                let model = synthetic_from_json(raw)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                model.validate()?;
                Ok(Backend::Synthetic(model))
            }
            "remote" => match std::env::var(ENDPOINT_ENV) {
                Ok(addr) if !addr.is_empty() => Ok(Backend::Remote(addr)),
                _ if target.is_empty() => Err(CliError::config(format!(
                    "remote model needs an address (remote:<host:port> or {ENDPOINT_ENV})"
                ))),
                _ => Ok(Backend::Remote(target.to_string())),
            },
            "table" => Ok(Backend::Table(base.join(target))),
            _ => Err(CliError::config(format!(
                "unknown model {spec:?}; expected synthetic:<file>, remote:<addr> or table:<file>"
            ))),
        }
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        match self {
            Backend::Synthetic(m) => Some(&m.vocab),
            _ => None,
        }
    }

    /// Opens a fresh denoiser; every sweep cell gets its own.
    pub fn open(&self, vocab: &Vocabulary) -> CliResult<Box<dyn Denoiser>> {
        match self {
            Backend::Synthetic(m) => Ok(Box::new(anchordiff::SyntheticDenoiser::new(m.clone())?)),
            Backend::Remote(addr) => RemoteDenoiser::connect(addr)
                .map(|d| Box::new(d) as Box<dyn Denoiser>)
                .map_err(|e| CliError::Denoiser(e.to_string())),
            Backend::Table(path) => {
                let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
                let table = PredictionTable::read_jsonl(std::io::BufReader::new(file))
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                Ok(Box::new(
                    TableDenoiser::new(table, path.display().to_string()).with_vocabulary(vocab.clone()),
                ))
            }
        }
    }
}

/// Accepts either a full synthetic model or a template without `target`:
/// `{"vocab": ..., "length": 64, "eot_suffix": 8, "eot_boost": 0.5, ...}`.
/// A template starts from a cycling content target followed by `eot_suffix`
/// EOT slots; the remaining keys override that model's fields.
pub fn synthetic_from_json(raw: Value) -> Result<SyntheticModelConfig, String> {
    let Value::Object(mut fields) = raw else {
        return Err("synthetic model must be a JSON object".into());
    };
    if fields.contains_key("target") {
        return serde_json::from_value(Value::Object(fields)).map_err(|e| e.to_string());
    }
    let take_usize = |fields: &mut serde_json::Map<String, Value>, key: &str| -> Result<Option<usize>, String> {
        match fields.remove(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|n| Some(n as usize))
                .ok_or_else(|| format!("`{key}` must be a non-negative integer")),
        }
    };
    let length = take_usize(&mut fields, "length")?.ok_or("template needs `target` or `length`")?;
    let eot_suffix = take_usize(&mut fields, "eot_suffix")?.unwrap_or(0);
    let vocab: Vocabulary = serde_json::from_value(fields.get("vocab").cloned().ok_or("missing `vocab`")?)
        .map_err(|e| e.to_string())?;
    vocab.validate().map_err(|e| e.to_string())?;
    if eot_suffix > length {
        return Err(format!("eot_suffix {eot_suffix} exceeds length {length}"));
    }
    let Value::Object(mut merged) = serde_json::to_value(SyntheticModelConfig::with_eot_suffix(vocab, length, eot_suffix))
        .map_err(|e| e.to_string())?
    else {
        unreachable!("model serializes to an object")
    };
    merged.extend(fields);
    serde_json::from_value(Value::Object(merged)).map_err(|e| e.to_string())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Everything needed to execute a run.
#[derive(Debug, Clone)]
pub struct Run {
    pub decode: DecodeConfig,
    pub backend: Backend,
    pub seeds: Vec<u64>,
}

fn tie_break(s: &str) -> CliResult<TieBreak> {
    match s {
        "lowest-index" | "lowest_index" => Ok(TieBreak::LowestIndex),
        "seeded" => Ok(TieBreak::Seeded),
        other => Err(CliError::config(format!("unknown tie break {other:?}"))),
    }
}

fn tokens(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().copied().map(TokenId).collect()
}

pub fn resolve(args: &RunArgs) -> CliResult<Run> {
    let (file, base) = match &args.config {
        Some(path) => {
            let file: FileConfig = read_json(path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (file, base)
        }
        None => (FileConfig::default(), PathBuf::new()),
    };
    let cwd = PathBuf::new();

    let backend = match (&args.model, &file.model, &file.synthetic) {
        (Some(spec), _, _) => Backend::parse(spec, &cwd)?,
        (None, Some(_), Some(_)) => {
            return Err(CliError::config("config sets both `model` and `synthetic`; pick one backend"))
        }
        (None, Some(spec), None) => Backend::parse(spec, &base)?,
        (None, None, Some(raw)) => {
            let model = synthetic_from_json(raw.clone()).map_err(CliError::config)?;
            model.validate()?;
            Backend::Synthetic(model)
        }
        (None, None, None) => return Err(CliError::config("no model selected (--model)")),
    };

    let vocab = match backend.vocabulary() {
        Some(v) => v.clone(),
        None => {
            let size = args.vocab_size.or(file.vocab_size);
            let mask = args.mask_id.or(file.mask_id);
            let eot = args.eot_id.or(file.eot_id);
            match (size, mask, eot) {
                (Some(size), Some(mask), Some(eot)) => Vocabulary::new(size, TokenId(mask), TokenId(eot))?,
                _ => {
                    return Err(CliError::config(
                        "remote and table models need --vocab-size, --mask-id and --eot-id",
                    ))
                }
            }
        }
    };

    let length = match (args.length.or(file.length), &backend) {
        (Some(l), _) => l,
        (None, Backend::Synthetic(m)) => m.length(),
        (None, _) => return Err(CliError::config("--length is required for this model")),
    };
    if let Backend::Synthetic(m) = &backend {
        if m.length() != length {
            return Err(CliError::config(format!(
                "synthetic target has {} positions, run length is {length}",
                m.length()
            )));
        }
    }
    let mut decode = DecodeConfig::new(length, vocab);
    if let Some(steps) = args.steps.or(file.steps) {
        decode.steps = steps;
    }
    if let Some(s) = args.strategy.as_ref().or(file.strategy.as_ref()) {
        decode.strategy = Strategy::from_str(s)?;
    }

    let anchor_from_file = |path: &Path| -> CliResult<AnchorSpec> { read_json(path) };
    let mut anchor = if let Some(ids) = &args.anchor_tokens {
        AnchorSpec::new(tokens(ids), AnchorSpec::none().offset_from_end)
    } else if let Some(path) = &args.anchor_file {
        anchor_from_file(path)?
    } else if let Some(ids) = &file.anchor_tokens {
        let mut a = AnchorSpec::new(tokens(ids), AnchorSpec::none().offset_from_end);
        a.display = file.anchor_display.clone();
        a
    } else if let Some(path) = &file.anchor_file {
        anchor_from_file(&base.join(path))?
    } else {
        AnchorSpec::none()
    };
    if let Some(offset) = args.anchor_offset.or(file.anchor_offset) {
        anchor.offset_from_end = offset;
    }
    decode.anchor = anchor;

    if !(args.no_modulation || file.no_modulation) {
        let defaults = ModulationParams::default();
        decode.modulation = Some(ModulationParams {
            kappa: args.kappa.or(file.kappa).unwrap_or(defaults.kappa),
            beta: args.beta.or(file.beta).unwrap_or(defaults.beta),
            gamma: args.gamma.or(file.gamma).unwrap_or(defaults.gamma),
            progress_dependent: !(args.no_progress_dependence || file.no_progress_dependence),
        });
    }
    decode.eot_suppression = args.eot_suppression || file.eot_suppression;
    decode.eot_hard_ban = args.eot_hard_ban || file.eot_hard_ban;
    if let Some(block_size) = args.block_size.or(file.block_size) {
        decode.mode = DecodeMode::SemiAr { block_size };
    }
    if let Some(t) = args.tie_break.as_ref().or(file.tie_break.as_ref()) {
        decode.tie_break = tie_break(t)?;
    }
    if let Some(k) = args.top_k.or(file.top_k) {
        decode.top_k = k;
    }
    if let Some(p) = args.prompt.as_ref().or(file.prompt.as_ref()) {
        decode.prompt = tokens(p);
    }

    let seed = args.seed.or(file.seed).unwrap_or(0);
    let seeds = match args.seeds.clone().or(file.seeds) {
        Some(s) if s.is_empty() => return Err(CliError::config("seed list is empty")),
        Some(s) => s,
        None => {
            let repeat = args.repeat.or(file.repeat).unwrap_or(1);
            if repeat == 0 {
                return Err(CliError::config("repeat must be at least 1"));
            }
            (0..repeat as u64).map(|i| seed.wrapping_add(i)).collect()
        }
    };
    decode.seed = seeds[0];
    decode.validate()?;
    Ok(Run { decode, backend, seeds })
}
