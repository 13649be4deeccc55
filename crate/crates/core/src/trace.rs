//! Decode traces and their line-delimited file format.
//!
//! A trace file is one header line (the full run configuration as a JSON
//! object) followed by one JSON object per decoding step with the fields
//! `step`, `masked_before`, `progress`, `selected`, `tokens`, `conf_base` and
//! `conf_mod`. Step floats are written with 9 significant digits; header
//! values are written exactly so that a header alone replays the run.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize, Serializer};

use crate::confidence::{Score, Strategy};
use crate::decode::{DecodeConfig, DecodeMode, TieBreak};
use crate::error::{Error, Result};
use crate::modulation::ModulationParams;
use crate::state::{AnchorSpec, DecidedAt, SequenceState, TokenId, Vocabulary};
use crate::synthetic::SyntheticModelConfig;

pub const TRACE_FORMAT: &str = "anchordiff-trace/1";

/// Rounds to 9 significant decimal digits.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn ser_sig9<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig9(*x))
}

fn ser_scores<S: Serializer>(v: &[(usize, Score)], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rounded: Vec<(usize, Score)> = v
        .iter()
        .map(|&(p, sc)| match sc {
            Score::Value(x) => (p, Score::Value(round_sig9(x))),
            Score::Suppressed => (p, Score::Suppressed),
        })
        .collect();
    rounded.serialize(s)
}

/// Everything that happened at one decoding step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Forward index `T - t`, starting at 0.
    pub step: usize,
    pub masked_before: usize,
    #[serde(serialize_with = "ser_sig9")]
    pub progress: f64,
    /// Positions unmasked at this step, highest score first.
    pub selected: Vec<usize>,
    /// Token written at each selected position, aligned with `selected`.
    pub tokens: Vec<TokenId>,
    /// `(position, score)` for every candidate position.
    #[serde(serialize_with = "ser_scores")]
    pub conf_base: Vec<(usize, Score)>,
    /// Scores after suppression/modulation, the ones selection used.
    #[serde(serialize_with = "ser_scores")]
    pub conf_mod: Vec<(usize, Score)>,
}

/// Run configuration as written on a trace's first line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub length: usize,
    pub steps: usize,
    pub strategy: Strategy,
    pub top_k: usize,
    pub seed: u64,
    pub tie_break: TieBreak,
    pub anchor_tokens: Vec<TokenId>,
    pub anchor_offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_display: Option<String>,
    pub modulation: bool,
    pub kappa: f64,
    pub beta: f64,
    pub gamma: f64,
    pub progress_dependent: bool,
    pub eot_suppression: bool,
    pub eot_hard_ban: bool,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    pub vocab_size: u32,
    pub mask_id: TokenId,
    pub eot_id: TokenId,
    pub prompt: Vec<TokenId>,
    /// Backend identity, e.g. `synthetic:<digest>` or `remote:<addr>`.
    pub model: String,
    /// Full synthetic model configuration, when that backend was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticModelConfig>,
}

impl TraceHeader {
    pub fn new(config: &DecodeConfig, model: String, synthetic: Option<&SyntheticModelConfig>) -> Self {
        let m = config.modulation.unwrap_or_default();
        let (mode, block_size) = match config.mode {
            DecodeMode::NonAr => ("non_ar".to_string(), None),
            DecodeMode::SemiAr { block_size } => ("semi_ar".to_string(), Some(block_size)),
        };
        TraceHeader {
            format: TRACE_FORMAT.to_string(),
            length: config.length,
            steps: config.steps,
            strategy: config.strategy,
            top_k: config.top_k,
            seed: config.seed,
            tie_break: config.tie_break,
            anchor_tokens: config.anchor.tokens.clone(),
            anchor_offset: config.anchor.offset_from_end,
            anchor_display: config.anchor.display.clone(),
            modulation: config.modulation.is_some(),
            kappa: m.kappa,
            beta: m.beta,
            gamma: m.gamma,
            progress_dependent: m.progress_dependent,
            eot_suppression: config.eot_suppression,
            eot_hard_ban: config.eot_hard_ban,
            mode,
            block_size,
            vocab_size: config.vocab.size,
            mask_id: config.vocab.mask_id,
            eot_id: config.vocab.eot_id,
            prompt: config.prompt.clone(),
            model,
            synthetic: synthetic.cloned(),
        }
    }

    pub fn decode_config(&self) -> Result<DecodeConfig> {
        let mode = match (self.mode.as_str(), self.block_size) {
            ("non_ar", _) => DecodeMode::NonAr,
            ("semi_ar", Some(block_size)) => DecodeMode::SemiAr { block_size },
            (other, _) => return Err(Error::config(format!("unknown or incomplete mode {other:?}"))),
        };
        let modulation = self.modulation.then_some(ModulationParams {
            kappa: self.kappa,
            beta: self.beta,
            gamma: self.gamma,
            progress_dependent: self.progress_dependent,
        });
        let vocab = match &self.synthetic {
            Some(s) => s.vocab.clone(),
            None => Vocabulary {
                size: self.vocab_size,
                mask_id: self.mask_id,
                eot_id: self.eot_id,
                tokens: None,
            },
        };
        let config = DecodeConfig {
            length: self.length,
            steps: self.steps,
            strategy: self.strategy,
            anchor: AnchorSpec {
                tokens: self.anchor_tokens.clone(),
                offset_from_end: self.anchor_offset,
                display: self.anchor_display.clone(),
            },
            modulation,
            eot_suppression: self.eot_suppression,
            eot_hard_ban: self.eot_hard_ban,
            mode,
            seed: self.seed,
            tie_break: self.tie_break,
            top_k: self.top_k,
            vocab,
            prompt: self.prompt.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
}

impl DecodeTrace {
    pub fn length(&self) -> usize {
        self.header.length
    }

    pub fn anchor_positions(&self) -> Result<Vec<usize>> {
        let spec = AnchorSpec::new(self.header.anchor_tokens.clone(), self.header.anchor_offset);
        Ok(spec.positions(self.header.length)?.collect())
    }

    /// Rebuilds the final state by replaying every step through `unmask`.
    pub fn replay(&self) -> Result<SequenceState> {
        let vocab = Vocabulary {
            size: self.header.vocab_size,
            mask_id: self.header.mask_id,
            eot_id: self.header.eot_id,
            tokens: None,
        };
        let anchor = AnchorSpec::new(self.header.anchor_tokens.clone(), self.header.anchor_offset);
        let mut state = SequenceState::init(self.header.length, &anchor, &vocab)?;
        state.begin(self.steps.len());
        for rec in &self.steps {
            if rec.selected.len() != rec.tokens.len() {
                return Err(Error::contract(format!(
                    "step {}: {} positions but {} tokens",
                    rec.step,
                    rec.selected.len(),
                    rec.tokens.len()
                )));
            }
            let assignments: Vec<(usize, TokenId)> =
                rec.selected.iter().copied().zip(rec.tokens.iter().copied()).collect();
            state.unmask(&assignments)?;
        }
        Ok(state)
    }

    /// Step at which each position was decided.
    pub fn decided_at(&self) -> Result<Vec<Option<DecidedAt>>> {
        Ok(self.replay()?.decided_at().to_vec())
    }

    pub fn final_tokens(&self) -> Result<Vec<TokenId>> {
        self.replay()?
            .tokens()
            .ok_or_else(|| Error::contract("trace leaves masked positions"))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for rec in &self.steps {
            serde_json::to_writer(&mut out, rec).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Parses a trace file. Errors name the offending 1-based line.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| Error::TraceFormat {
                line: line_no,
                message: e.to_string(),
            };
            if header.is_none() {
                let h: TraceHeader = serde_json::from_str(&line).map_err(bad)?;
                if h.format != TRACE_FORMAT {
                    return Err(Error::TraceFormat {
                        line: line_no,
                        message: format!("unsupported trace format {:?}", h.format),
                    });
                }
                header = Some(h);
            } else {
                let rec: StepRecord = serde_json::from_str(&line).map_err(bad)?;
                if rec.step != steps.len() {
                    return Err(Error::TraceFormat {
                        line: line_no,
                        message: format!("expected step {}, found {}", steps.len(), rec.step),
                    });
                }
                steps.push(rec);
            }
        }
        let header = header.ok_or(Error::TraceFormat {
            line: 1,
            message: "empty trace".into(),
        })?;
        Ok(DecodeTrace { header, steps })
    }
}
