//! Anchor-proximity weights and progress-dependent confidence reweighting.
//!
//! The weight of position `i` is `min(1, beta * max_a exp(-|i - a| / kappa))`
//! over anchor positions `a`, and a base score `c` becomes
//! `c * (1 - w * (1 - p)^gamma)` at decoding progress `p`. Early on, scores
//! near the anchor are pushed down; by `p = 1` the base score is restored.

use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceVector, Score};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationParams {
    /// Spatial decay away from the anchor.
    pub kappa: f64,
    /// Overall strength, clipped so weights never exceed 1.
    pub beta: f64,
    /// How quickly the down-weighting relaxes with progress.
    pub gamma: f64,
    /// When false the factor is the constant `1 - w`.
    #[serde(default = "default_true")]
    pub progress_dependent: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ModulationParams {
    fn default() -> Self {
        ModulationParams {
            kappa: 14.0,
            beta: 1.3,
            gamma: 0.85,
            progress_dependent: true,
        }
    }
}

impl ModulationParams {
    pub fn new(kappa: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = ModulationParams {
            kappa,
            beta,
            gamma,
            progress_dependent: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa", self.kappa), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Multiplier applied to a base score with weight `w` at progress `p`.
    pub fn factor(&self, w: f64, p: f64) -> f64 {
        if self.progress_dependent {
            1.0 - w * (1.0 - p).powf(self.gamma)
        } else {
            1.0 - w
        }
    }
}

/// Per-position anchor-proximity weights for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    w: Vec<f64>,
}

impl WeightField {
    pub fn zeros(length: usize) -> Self {
        WeightField { w: vec![0.0; length] }
    }

    pub fn get(&self, pos: usize) -> f64 {
        self.w[pos]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub fn compute_weights(length: usize, anchors: &[usize], params: &ModulationParams) -> WeightField {
    if anchors.is_empty() {
        return WeightField::zeros(length);
    }
    let w = (0..length)
        .map(|i| {
            let nearest = anchors
                .iter()
                .map(|&a| (-(i.abs_diff(a) as f64) / params.kappa).exp())
                .fold(0.0_f64, f64::max);
            (params.beta * nearest).min(1.0)
        })
        .collect();
    WeightField { w }
}

/// Reweights finite scores; suppressed entries pass through unchanged.
pub fn modulate(
    conf: &ConfidenceVector,
    weights: &WeightField,
    progress: f64,
    params: &ModulationParams,
) -> ConfidenceVector {
    let entries = conf
        .entries
        .iter()
        .map(|(&pos, &score)| {
            let out = match score {
                Score::Value(c) => Score::Value(c * params.factor(weights.get(pos), progress)),
                Score::Suppressed => Score::Suppressed,
            };
            (pos, out)
        })
        .collect();
    ConfidenceVector {
        strategy: conf.strategy,
        entries,
    }
}
