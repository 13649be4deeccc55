//! The decoding loop.
//!
//! Every step queries the denoiser once on the current partially masked
//! response, scores the candidate positions, optionally reweights them near
//! the suffix anchor and/or pushes argmax-EOT positions to the bottom, then
//! unmasks the `k_t` best candidates with their argmax tokens. Ties go to the
//! lowest position unless seeded tie-breaking is requested.
//!
//! Fully non-autoregressive runs treat the whole response as one candidate
//! pool. Semi-autoregressive runs restrict candidates to the active block and
//! move left to right.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::confidence::{base_confidence, eot_suppress, ConfidenceVector, Score, Strategy};
use crate::denoiser::{Denoiser, DenoiserRequest, DenoiserResponse};
use crate::error::{DenoiserError, Error, Result};
use crate::modulation::{compute_weights, modulate, ModulationParams, WeightField};
use crate::rng::{draw_u64, TIE_BREAK_STREAM};
use crate::schedule::{block_budgets, schedule_counts};
use crate::state::{AnchorSpec, SequenceState, TokenId, Vocabulary};
use crate::synthetic::{SyntheticDenoiser, SyntheticModelConfig};
use crate::trace::{DecodeTrace, StepRecord, TraceHeader};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    NonAr,
    SemiAr { block_size: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Equal scores resolve to the lowest position.
    #[default]
    LowestIndex,
    /// Equal scores resolve by a seeded draw per `(step, position)`.
    Seeded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub length: usize,
    /// Step budget `T`.
    pub steps: usize,
    pub strategy: Strategy,
    pub anchor: AnchorSpec,
    /// `None` disables confidence modulation.
    pub modulation: Option<ModulationParams>,
    pub eot_suppression: bool,
    /// Never decode EOT at a suppressed position; take the best other token.
    pub eot_hard_ban: bool,
    pub mode: DecodeMode,
    pub seed: u64,
    pub tie_break: TieBreak,
    pub top_k: usize,
    pub vocab: Vocabulary,
    pub prompt: Vec<TokenId>,
}

impl DecodeConfig {
    /// Plain top-probability, non-AR run with `T = L / 2` and no anchor.
    pub fn new(length: usize, vocab: Vocabulary) -> Self {
        DecodeConfig {
            length,
            steps: (length / 2).max(1),
            strategy: Strategy::TopProbability,
            anchor: AnchorSpec::none(),
            modulation: None,
            eot_suppression: false,
            eot_hard_ban: false,
            mode: DecodeMode::NonAr,
            seed: 0,
            tie_break: TieBreak::LowestIndex,
            top_k: 2,
            vocab,
            prompt: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        if self.length == 0 {
            return Err(Error::config("response length must be positive"));
        }
        if self.top_k < 2 {
            return Err(Error::config("top_k must be at least 2"));
        }
        if let Some(t) = self.prompt.iter().find(|t| !self.vocab.contains(**t)) {
            return Err(Error::config(format!("prompt token {} outside the vocabulary", t.0)));
        }
        if let Some(m) = &self.modulation {
            m.validate()?;
        }
        if self.eot_hard_ban && !self.eot_suppression {
            return Err(Error::config("eot_hard_ban requires eot_suppression"));
        }
        SequenceState::init(self.length, &self.anchor, &self.vocab)?;
        self.plan().map(|_| ())
    }

    /// Candidate range and unmask count for each step.
    fn plan(&self) -> Result<Vec<(Range<usize>, usize)>> {
        match self.mode {
            DecodeMode::NonAr => Ok(schedule_counts(self.length, self.steps, self.anchor.len())?
                .into_iter()
                .map(|k| (0..self.length, k))
                .collect()),
            DecodeMode::SemiAr { block_size } => {
                if !self.anchor.is_empty() {
                    return Err(Error::config("semi-AR decoding runs without a suffix anchor"));
                }
                let mut plan = Vec::with_capacity(self.steps);
                for block in block_budgets(self.length, block_size, self.steps)? {
                    for k in schedule_counts(block.positions.len(), block.steps, 0)? {
                        plan.push((block.positions.clone(), k));
                    }
                }
                Ok(plan)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<TokenId>,
    pub trace: DecodeTrace,
}

/// Picks `k` positions by descending score.
pub fn select_positions(
    scores: &ConfidenceVector,
    k: usize,
    tie_break: TieBreak,
    seed: u64,
    step: usize,
    length: usize,
) -> Vec<usize> {
    let mut ranked: Vec<(usize, Score, u64)> = scores
        .entries
        .iter()
        .map(|(&pos, &score)| {
            let jitter = match tie_break {
                TieBreak::LowestIndex => 0,
                TieBreak::Seeded => {
                    draw_u64(seed, TIE_BREAK_STREAM, (step * length + pos) as u64)
                }
            };
            (pos, score, jitter)
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.2.cmp(&b.2))
            .then(a.0.cmp(&b.0))
    });
    ranked.into_iter().take(k).map(|(pos, _, _)| pos).collect()
}

fn restrict(conf: ConfidenceVector, range: &Range<usize>) -> ConfidenceVector {
    if range.start == 0 && conf.entries.keys().all(|p| *p < range.end) {
        return conf;
    }
    ConfidenceVector {
        strategy: conf.strategy,
        entries: conf.entries.into_iter().filter(|(p, _)| range.contains(p)).collect(),
    }
}

fn decoded_token(resp: &DenoiserResponse, pos: usize, suppressed: bool, config: &DecodeConfig) -> TokenId {
    let preds = resp.get(pos).expect("validated coverage");
    let eot = config.vocab.eot_id;
    if config.eot_hard_ban && suppressed && preds[0].token == eot {
        if let Some(p) = preds.iter().find(|p| p.token != eot) {
            return p.token;
        }
    }
    preds[0].token
}

fn check_vocab<D: Denoiser>(config: &DecodeConfig, denoiser: &D) -> Result<()> {
    if let Some(v) = denoiser.vocabulary() {
        if v.size != config.vocab.size || v.mask_id != config.vocab.mask_id || v.eot_id != config.vocab.eot_id {
            return Err(Error::config(format!(
                "denoiser vocabulary (size {}, mask {}, eot {}) does not match the run (size {}, mask {}, eot {})",
                v.size, v.mask_id.0, v.eot_id.0, config.vocab.size, config.vocab.mask_id.0, config.vocab.eot_id.0
            )));
        }
    }
    Ok(())
}

/// Decodes a full response in exactly `config.steps` steps.
pub fn decode<D: Denoiser>(config: &DecodeConfig, denoiser: &mut D) -> Result<DecodeOutput> {
    config.validate()?;
    check_vocab(config, denoiser)?;
    let plan = config.plan()?;

    let mut state = SequenceState::init(config.length, &config.anchor, &config.vocab)?;
    state.begin(config.steps);
    let weights = match &config.modulation {
        Some(m) => compute_weights(config.length, state.anchor_positions(), m),
        None => WeightField::zeros(config.length),
    };

    let mut records = Vec::with_capacity(config.steps);
    for (candidates, k) in plan {
        let step = state.forward_step();
        let fail = |source: DenoiserError| Error::Denoiser { step, source };

        let masked_before = state.masked_count();
        let progress = state.progress();
        let request = DenoiserRequest::new(config.prompt.clone(), state.slots().to_vec(), config.top_k)
            .map_err(fail)?;
        let resp = denoiser.predict(&request).map_err(fail)?;
        resp.validate(&request).map_err(fail)?;
        if let Some((pos, _)) = resp
            .iter()
            .find(|(_, preds)| !config.vocab.is_content(preds[0].token))
        {
            return Err(fail(DenoiserError::Malformed(format!(
                "position {pos}: argmax token is the mask token or out of range"
            ))));
        }

        let base = restrict(base_confidence(config.strategy, &resp, config.seed, step)?, &candidates);
        let mut scored = base.clone();
        if let Some(m) = &config.modulation {
            scored = modulate(&scored, &weights, progress, m);
        }
        if config.eot_suppression {
            scored = eot_suppress(&scored, &resp, config.vocab.eot_id);
        }

        let selected = select_positions(&scored, k, config.tie_break, config.seed, step, config.length);
        if selected.len() != k {
            return Err(Error::contract(format!(
                "step {step}: schedule asks for {k} positions but only {} are candidates",
                selected.len()
            )));
        }
        let tokens: Vec<TokenId> = selected
            .iter()
            .map(|&pos| {
                let suppressed = scored.get(pos).is_some_and(Score::is_suppressed);
                decoded_token(&resp, pos, suppressed, config)
            })
            .collect();
        let assignments: Vec<(usize, TokenId)> = selected.iter().copied().zip(tokens.iter().copied()).collect();
        state.unmask(&assignments)?;

        records.push(StepRecord {
            step,
            masked_before,
            progress,
            selected,
            tokens,
            conf_base: base.entries.into_iter().collect(),
            conf_mod: scored.entries.into_iter().collect(),
        });
    }

    let tokens = state
        .tokens()
        .ok_or_else(|| Error::contract("positions left masked after the final step"))?;
    Ok(DecodeOutput {
        tokens,
        trace: DecodeTrace {
            header: TraceHeader::new(config, denoiser.identity(), None),
            steps: records,
        },
    })
}

/// Block-by-block decoding; `config.mode` must be [`DecodeMode::SemiAr`].
pub fn decode_semi_ar<D: Denoiser>(config: &DecodeConfig, denoiser: &mut D) -> Result<DecodeOutput> {
    if !matches!(config.mode, DecodeMode::SemiAr { .. }) {
        return Err(Error::config("decode_semi_ar needs a semi_ar mode"));
    }
    decode(config, denoiser)
}

/// Runs `config` against the synthetic model and embeds the model in the
/// trace header so the header alone can reproduce the run.
pub fn decode_synthetic(config: &DecodeConfig, model: &SyntheticModelConfig) -> Result<DecodeOutput> {
    if model.length() != config.length {
        return Err(Error::config(format!(
            "synthetic target has {} positions, run length is {}",
            model.length(),
            config.length
        )));
    }
    let mut denoiser = SyntheticDenoiser::new(model.clone())?;
    let mut out = decode(config, &mut denoiser)?;
    out.trace.header.synthetic = Some(model.clone());
    Ok(out)
}

/// Re-executes the run described by a trace header (synthetic backend only).
pub fn rerun_header(header: &TraceHeader) -> Result<DecodeOutput> {
    let model = header
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::config("trace header carries no synthetic model; cannot replay"))?;
    decode_synthetic(&header.decode_config()?, model)
}
