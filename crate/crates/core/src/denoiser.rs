//! The contract every denoiser backend fulfills.
//!
//! A denoiser sees the partially masked response and returns, for each masked
//! position, its `top_k` most probable tokens in descending order. Only the top
//! pairs travel: confidence strategies need the top-1 probability, the top-2
//! gap and the argmax identity, nothing more.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::DenoiserError;
use crate::state::{TokenId, Vocabulary};

/// Slack allowed on the sum of reported probabilities at one position.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserRequest {
    pub prompt_tokens: Vec<TokenId>,
    /// `None` marks a masked slot.
    pub response_slots: Vec<Option<TokenId>>,
    pub top_k: usize,
}

impl DenoiserRequest {
    pub fn new(
        prompt_tokens: Vec<TokenId>,
        response_slots: Vec<Option<TokenId>>,
        top_k: usize,
    ) -> Result<Self, DenoiserError> {
        let req = DenoiserRequest {
            prompt_tokens,
            response_slots,
            top_k,
        };
        req.check()?;
        Ok(req)
    }

    pub fn check(&self) -> Result<(), DenoiserError> {
        if self.top_k < 2 {
            return Err(DenoiserError::Precondition(format!(
                "top_k must be at least 2, got {}",
                self.top_k
            )));
        }
        if self.response_slots.iter().all(Option::is_some) {
            return Err(DenoiserError::Precondition(
                "request has no masked slots".into(),
            ));
        }
        Ok(())
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.response_slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_none().then_some(i))
    }
}

/// One `(token, probability)` pair; serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(TokenId, f64)", into = "(TokenId, f64)")]
pub struct Prediction {
    pub token: TokenId,
    pub prob: f64,
}

impl Prediction {
    pub fn new(token: TokenId, prob: f64) -> Self {
        Prediction { token, prob }
    }
}

impl From<(TokenId, f64)> for Prediction {
    fn from((token, prob): (TokenId, f64)) -> Self {
        Prediction { token, prob }
    }
}

impl From<Prediction> for (TokenId, f64) {
    fn from(p: Prediction) -> Self {
        (p.token, p.prob)
    }
}

/// Per-position top-k predictions, keyed by response position.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenoiserResponse {
    predictions: BTreeMap<usize, Vec<Prediction>>,
}

impl DenoiserResponse {
    pub fn new(predictions: BTreeMap<usize, Vec<Prediction>>) -> Self {
        DenoiserResponse { predictions }
    }

    pub fn get(&self, pos: usize) -> Option<&[Prediction]> {
        self.predictions.get(&pos).map(Vec::as_slice)
    }

    /// The decoded token at `pos`: always the first pair.
    pub fn argmax(&self, pos: usize) -> Option<TokenId> {
        self.predictions
            .get(&pos)
            .and_then(|p| p.first())
            .map(|p| p.token)
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.predictions.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[Prediction])> {
        self.predictions.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn into_inner(self) -> BTreeMap<usize, Vec<Prediction>> {
        self.predictions
    }

    /// Checks the response against the request it answers: exact coverage of
    /// the masked slots, `top_k` pairs per position, valid descending
    /// probabilities with ties ordered by token id, and distinct tokens.
    pub fn validate(&self, request: &DenoiserRequest) -> Result<(), DenoiserError> {
        let expected: Vec<usize> = request.masked_positions().collect();
        let missing: Vec<usize> = expected
            .iter()
            .copied()
            .filter(|p| !self.predictions.contains_key(p))
            .collect();
        let unexpected: Vec<usize> = self
            .predictions
            .keys()
            .copied()
            .filter(|p| request.response_slots.get(*p).is_none_or(Option::is_some))
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            return Err(DenoiserError::Coverage {
                missing,
                unexpected,
            });
        }
        for (&pos, preds) in &self.predictions {
            if preds.len() != request.top_k {
                return Err(DenoiserError::Malformed(format!(
                    "position {pos}: expected {} pairs, got {}",
                    request.top_k,
                    preds.len()
                )));
            }
            let mut sum = 0.0;
            for (j, p) in preds.iter().enumerate() {
                if !p.prob.is_finite() || !(0.0..=1.0).contains(&p.prob) {
                    return Err(DenoiserError::Malformed(format!(
                        "position {pos}: probability {} outside [0, 1]",
                        p.prob
                    )));
                }
                sum += p.prob;
                if preds[..j].iter().any(|q| q.token == p.token) {
                    return Err(DenoiserError::Malformed(format!(
                        "position {pos}: token {} listed twice",
                        p.token.0
                    )));
                }
                if j > 0 {
                    let prev = preds[j - 1];
                    if prev.prob < p.prob || (prev.prob == p.prob && prev.token > p.token) {
                        return Err(DenoiserError::Malformed(format!(
                            "position {pos}: pairs not sorted by descending probability / ascending token id"
                        )));
                    }
                }
            }
            if sum > 1.0 + PROB_SUM_TOLERANCE {
                return Err(DenoiserError::Malformed(format!(
                    "position {pos}: probabilities sum to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// A source of per-position predictions for a partially masked response.
pub trait Denoiser {
    fn predict(&mut self, request: &DenoiserRequest) -> Result<DenoiserResponse, DenoiserError>;

    /// Vocabulary the backend was built for, when it knows one.
    fn vocabulary(&self) -> Option<&Vocabulary> {
        None
    }

    /// Short description recorded in trace headers.
    fn identity(&self) -> String;
}

impl<D: Denoiser + ?Sized> Denoiser for &mut D {
    fn predict(&mut self, request: &DenoiserRequest) -> Result<DenoiserResponse, DenoiserError> {
        (**self).predict(request)
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        (**self).vocabulary()
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict(&mut self, request: &DenoiserRequest) -> Result<DenoiserResponse, DenoiserError> {
        (**self).predict(request)
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        (**self).vocabulary()
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}
