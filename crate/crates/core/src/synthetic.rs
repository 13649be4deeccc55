//! Table-driven toy denoiser that exhibits confidence failure modes on demand.
//!
//! The model always predicts a hidden target completion. Its confidence at a
//! masked position is
//!
//! ```text
//! q_i = clamp(base_conf
//!             + context_gain * decided_neighbors(i, W) / (2W)
//!             + eot_boost   * [target(i) == EOT]
//!             + anchor_pull * [an anchor token is decided within W of i], 0, 1)
//! ```
//!
//! so resolved context, EOT overconfidence and anchor-induced local
//! overconfidence are independent knobs. With `eot_cascade` enabled, a masked
//! position whose nearest decided right neighbour (within `W`) is EOT predicts
//! EOT as well, which is how early tail EOTs truncate a response.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserRequest, DenoiserResponse, Prediction};
use crate::error::{DenoiserError, Error, Result};
use crate::rng::{draw_u64, DISTRACTOR_STREAM};
use crate::state::{TokenId, Vocabulary};

/// Share of the non-top-1 mass given to the runner-up.
const RUNNER_UP_SHARE: f64 = 0.9;
/// Decay between successive distractors past the runner-up.
const DISTRACTOR_DECAY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelConfig {
    pub vocab: Vocabulary,
    /// Hidden completion, one token per response position.
    pub target: Vec<TokenId>,
    pub context_window: usize,
    pub base_conf: f64,
    #[serde(default)]
    pub context_gain: f64,
    #[serde(default)]
    pub eot_boost: f64,
    #[serde(default)]
    pub anchor_pull: f64,
    /// Tokens that trigger `anchor_pull` when decided nearby.
    #[serde(default)]
    pub anchor_tokens: Vec<TokenId>,
    #[serde(default)]
    pub eot_cascade: bool,
    pub noise_vocab: Vec<TokenId>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticModelConfig {
    /// Target of `content_len` distinct-ish content tokens followed by an EOT
    /// suffix, padded to `length`.
    pub fn with_eot_suffix(vocab: Vocabulary, length: usize, eot_suffix: usize) -> Self {
        let eot = vocab.eot_id;
        let first_content = (0..vocab.size)
            .map(TokenId)
            .filter(|&t| t != vocab.mask_id && t != eot)
            .collect::<Vec<_>>();
        let target = (0..length)
            .map(|i| {
                if i + eot_suffix >= length {
                    eot
                } else {
                    first_content[i % first_content.len()]
                }
            })
            .collect();
        let noise_vocab = first_content.iter().rev().take(4).copied().collect();
        SyntheticModelConfig {
            vocab,
            target,
            context_window: 4,
            base_conf: 0.4,
            context_gain: 0.0,
            eot_boost: 0.0,
            anchor_pull: 0.0,
            anchor_tokens: Vec::new(),
            eot_cascade: false,
            noise_vocab,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        if self.target.is_empty() {
            return Err(Error::config("synthetic target must not be empty"));
        }
        if let Some(t) = self.target.iter().find(|&&t| !self.vocab.is_content(t)) {
            return Err(Error::config(format!(
                "synthetic target token {} is the mask token or out of range",
                t.0
            )));
        }
        if self.context_window == 0 {
            return Err(Error::config("context_window must be positive"));
        }
        if !(self.base_conf > 0.0 && self.base_conf < 1.0) {
            return Err(Error::config("base_conf must lie in (0, 1)"));
        }
        for (name, v) in [
            ("context_gain", self.context_gain),
            ("eot_boost", self.eot_boost),
            ("anchor_pull", self.anchor_pull),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
            if self.base_conf + v > 1.0 {
                return Err(Error::config(format!("base_conf + {name} must not exceed 1")));
            }
        }
        let mut noise = self.noise_vocab.clone();
        noise.sort();
        noise.dedup();
        if noise.len() < 2 {
            return Err(Error::config("noise_vocab needs at least two distinct tokens"));
        }
        if let Some(t) = noise.iter().find(|&&t| !self.vocab.is_content(t)) {
            return Err(Error::config(format!(
                "noise token {} is the mask token or out of range",
                t.0
            )));
        }
        Ok(())
    }

    pub fn length(&self) -> usize {
        self.target.len()
    }

    /// Token the model predicts at masked position `pos` given `slots`.
    pub fn predicted_token(&self, slots: &[Option<TokenId>], pos: usize) -> TokenId {
        if self.eot_cascade {
            let w = self.context_window;
            let right = slots
                .iter()
                .enumerate()
                .skip(pos + 1)
                .find_map(|(j, s)| s.map(|t| (j, t)));
            if let Some((j, t)) = right {
                if t == self.vocab.eot_id && j - pos <= w {
                    return self.vocab.eot_id;
                }
            }
        }
        self.target[pos]
    }

    /// Top-1 confidence `q` at masked position `pos`.
    pub fn confidence(&self, slots: &[Option<TokenId>], pos: usize) -> f64 {
        let w = self.context_window;
        let lo = pos.saturating_sub(w);
        let hi = (pos + w).min(slots.len() - 1);
        let neighbors = || (lo..=hi).filter(move |&j| j != pos).filter_map(|j| slots[j]);
        let decided = neighbors().count();
        let near_anchor = neighbors().any(|t| self.anchor_tokens.contains(&t));
        let is_eot = self.target[pos] == self.vocab.eot_id;

        let mut q = self.base_conf + self.context_gain * decided as f64 / (2 * w) as f64;
        if is_eot {
            q += self.eot_boost;
        }
        if near_anchor {
            q += self.anchor_pull;
        }
        q.clamp(0.0, 1.0)
    }

    fn noise_tokens(&self) -> Vec<TokenId> {
        let mut noise = self.noise_vocab.clone();
        noise.sort();
        noise.dedup();
        noise
    }

    fn distractor_start(&self, pos: usize, noise_len: usize) -> usize {
        (draw_u64(self.seed, DISTRACTOR_STREAM, pos as u64) % noise_len as u64) as usize
    }

    fn distractors(noise: &[TokenId], start: usize, exclude: TokenId, count: usize) -> Vec<TokenId> {
        noise
            .iter()
            .cycle()
            .skip(start)
            .take(noise.len())
            .copied()
            .filter(|&t| t != exclude)
            .take(count)
            .collect()
    }

    pub fn predict(&self, request: &DenoiserRequest) -> Result<DenoiserResponse, DenoiserError> {
        let noise = self.noise_tokens();
        if noise.len() < 2 {
            return Err(DenoiserError::Precondition(
                "noise_vocab needs at least two distinct tokens".into(),
            ));
        }
        let starts: Vec<usize> = (0..self.target.len())
            .map(|pos| self.distractor_start(pos, noise.len()))
            .collect();
        self.predict_with(request, &noise, &starts)
    }

    fn predict_with(
        &self,
        request: &DenoiserRequest,
        noise: &[TokenId],
        starts: &[usize],
    ) -> Result<DenoiserResponse, DenoiserError> {
        request.check()?;
        if request.response_slots.len() != self.target.len() {
            return Err(DenoiserError::Precondition(format!(
                "request has {} slots, synthetic target has {}",
                request.response_slots.len(),
                self.target.len()
            )));
        }
        let slots = &request.response_slots;
        let mut out = BTreeMap::new();
        for pos in request.masked_positions() {
            let token = self.predicted_token(slots, pos);
            let q = self.confidence(slots, pos);
            let others = Self::distractors(noise, starts[pos], token, request.top_k - 1);
            if others.len() + 1 < request.top_k {
                return Err(DenoiserError::Precondition(format!(
                    "top_k {} exceeds the distinct distractors available",
                    request.top_k
                )));
            }
            // Runner-up stays strictly below q for every q in (0, 1).
            let runner_up = RUNNER_UP_SHARE * q.min(1.0 - q);
            let mut tail: Vec<Prediction> = others
                .into_iter()
                .enumerate()
                .map(|(j, t)| Prediction::new(t, runner_up * DISTRACTOR_DECAY.powi(j as i32)))
                .collect();
            tail.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.token.cmp(&b.token)));
            let mut preds = Vec::with_capacity(request.top_k);
            preds.push(Prediction::new(token, q));
            preds.extend(tail);
            out.insert(pos, preds);
        }
        Ok(DenoiserResponse::new(out))
    }

    /// Stable digest of the configuration (FNV-1a over its JSON form).
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDenoiser {
    config: SyntheticModelConfig,
    noise: Vec<TokenId>,
    starts: Vec<usize>,
}

impl SyntheticDenoiser {
    pub fn new(config: SyntheticModelConfig) -> Result<Self> {
        config.validate()?;
        let noise = config.noise_tokens();
        let starts = (0..config.target.len())
            .map(|pos| config.distractor_start(pos, noise.len()))
            .collect();
        Ok(SyntheticDenoiser { config, noise, starts })
    }

    pub fn config(&self) -> &SyntheticModelConfig {
        &self.config
    }
}

impl Denoiser for SyntheticDenoiser {
    fn predict(&mut self, request: &DenoiserRequest) -> Result<DenoiserResponse, DenoiserError> {
        self.config.predict_with(request, &self.noise, &self.starts)
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        Some(&self.config.vocab)
    }

    fn identity(&self) -> String {
        format!("synthetic:{}", self.config.digest())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EOT: TokenId = TokenId(1);

    fn vocab() -> Vocabulary {
        Vocabulary::new(64, TokenId(0), EOT).unwrap()
    }

    fn model(length: usize, eot_suffix: usize) -> SyntheticModelConfig {
        SyntheticModelConfig::with_eot_suffix(vocab(), length, eot_suffix)
    }

    fn all_masked(len: usize) -> DenoiserRequest {
        DenoiserRequest::new(vec![], vec![None; len], 2).unwrap()
    }

    #[test]
    fn test_base_confidence_with_no_context() {
        let cfg = model(8, 2);
        let resp = cfg.predict(&all_masked(8)).unwrap();
        let top = resp.get(0).unwrap()[0];
        assert_eq!(top.token, cfg.target[0]);
        assert_eq!(top.prob, 0.4);
        resp.validate(&all_masked(8)).unwrap();
    }

    #[test]
    fn test_eot_boost_on_suffix() {
        let mut cfg = model(8, 2);
        cfg.eot_boost = 0.5;
        let resp = cfg.predict(&all_masked(8)).unwrap();
        let top = resp.get(7).unwrap()[0];
        assert_eq!(top.token, EOT);
        assert!((top.prob - 0.9).abs() < 1e-15);
        assert_eq!(resp.get(5).unwrap()[0].prob, 0.4);
    }

    #[test]
    fn test_anchor_pull_near_anchor() {
        let mut cfg = model(32, 4);
        cfg.anchor_pull = 0.5;
        cfg.anchor_tokens = vec![TokenId(60), TokenId(61)];
        let mut slots = vec![None; 32];
        slots[10] = Some(TokenId(60));
        slots[11] = Some(TokenId(61));
        let req = DenoiserRequest::new(vec![], slots, 2).unwrap();
        let resp = cfg.predict(&req).unwrap();
        assert!(resp.get(9).unwrap()[0].prob >= 0.9);
        assert!(resp.get(12).unwrap()[0].prob >= 0.9);
        assert_eq!(resp.get(20).unwrap()[0].prob, 0.4);
    }

    #[test]
    fn test_runner_up_below_top() {
        let mut cfg = model(16, 4);
        cfg.eot_boost = 0.6;
        let resp = cfg.predict(&all_masked(16)).unwrap();
        for (_, preds) in resp.iter() {
            assert!(preds[1].prob < preds[0].prob);
            assert_ne!(preds[0].token, preds[1].token);
        }
        // literal (1 - q) * 0.9 once q >= 0.5
        let eot = resp.get(15).unwrap();
        assert!((eot[1].prob - 0.9 * (1.0 - eot[0].prob)).abs() < 1e-15);
    }

    #[test]
    fn test_top_k_larger_than_two() {
        let cfg = model(8, 2);
        let req = DenoiserRequest::new(vec![], vec![None; 8], 4).unwrap();
        let resp = cfg.predict(&req).unwrap();
        resp.validate(&req).unwrap();
        let req = DenoiserRequest::new(vec![], vec![None; 8], 6).unwrap();
        assert!(cfg.predict(&req).is_err());
    }

    #[test]
    fn test_length_mismatch() {
        let cfg = model(8, 2);
        assert!(matches!(
            cfg.predict(&all_masked(9)),
            Err(DenoiserError::Precondition(_))
        ));
    }

    #[test]
    fn test_eot_cascade_blocked_by_content() {
        let mut cfg = model(12, 2);
        cfg.eot_cascade = true;
        let mut slots = vec![None; 12];
        slots[10] = Some(EOT);
        assert_eq!(cfg.predicted_token(&slots, 9), EOT);
        assert_eq!(cfg.predicted_token(&slots, 6), EOT);
        assert_eq!(cfg.predicted_token(&slots, 5), cfg.target[5]);
        slots[8] = Some(TokenId(40));
        assert_eq!(cfg.predicted_token(&slots, 7), cfg.target[7]);
    }

    #[test]
    fn test_invalid_configs() {
        let mut cfg = model(8, 2);
        cfg.eot_boost = 0.7;
        assert!(cfg.validate().is_err());
        let mut cfg = model(8, 2);
        cfg.noise_vocab = vec![TokenId(5), TokenId(5)];
        assert!(cfg.validate().is_err());
        let mut cfg = model(8, 2);
        cfg.base_conf = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn test_determinism_bytes() {
        let mut cfg = model(16, 3);
        cfg.context_gain = 0.3;
        cfg.seed = 99;
        let mut slots = vec![None; 16];
        slots[3] = Some(TokenId(9));
        let req = DenoiserRequest::new(vec![], slots, 3).unwrap();
        let a = serde_json::to_string(&cfg.predict(&req).unwrap()).unwrap();
        let b = serde_json::to_string(&cfg.clone().predict(&req).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn prop_extra_neighbor_never_lowers_confidence(
            decided in proptest::collection::vec(any::<bool>(), 20),
            pos in 0usize..20,
            extra in 0usize..20,
            w in 1usize..6,
            gain in 0.0f64..0.5,
        ) {
            let mut cfg = model(20, 4);
            cfg.context_window = w;
            cfg.context_gain = gain;
            cfg.eot_boost = 0.3;
            let mut slots: Vec<Option<TokenId>> = decided
                .iter()
                .enumerate()
                .map(|(i, &d)| d.then_some(cfg.target[i]))
                .collect();
            slots[pos] = None;
            prop_assume!(extra != pos && slots[extra].is_none());
            let before = cfg.confidence(&slots, pos);
            slots[extra] = Some(cfg.target[extra]);
            prop_assert!(cfg.confidence(&slots, pos) >= before);
        }
    }
}
