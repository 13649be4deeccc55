//! Base confidence scores per masked position, and the EOT-suppression
//! transform.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::denoiser::DenoiserResponse;
use crate::error::{Error, Result};
use crate::rng::draw_unit;
use crate::state::TokenId;

/// A confidence score. `Suppressed` sorts below every finite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    Value(f64),
    Suppressed,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Suppressed => None,
        }
    }

    pub fn is_suppressed(self) -> bool {
        matches!(self, Score::Suppressed)
    }

    pub fn total_cmp(&self, other: &Score) -> Ordering {
        match (self, other) {
            (Score::Suppressed, Score::Suppressed) => Ordering::Equal,
            (Score::Suppressed, Score::Value(_)) => Ordering::Less,
            (Score::Value(_), Score::Suppressed) => Ordering::Greater,
            (Score::Value(a), Score::Value(b)) => a.total_cmp(b),
        }
    }
}

const SUPPRESSED_TAG: &str = "suppressed";

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Score::Value(v) => s.serialize_f64(*v),
            Score::Suppressed => s.serialize_str(SUPPRESSED_TAG),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Score::Value(v)),
            Raw::Tag(t) if t == SUPPRESSED_TAG => Ok(Score::Suppressed),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("unknown score tag {t:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[serde(alias = "top-prob", alias = "top_prob")]
    TopProbability,
    #[serde(alias = "top-margin")]
    TopMargin,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::TopProbability, Strategy::TopMargin, Strategy::Random];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::TopProbability => "top_probability",
            Strategy::TopMargin => "top_margin",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top_probability" | "top-probability" | "top-prob" | "top_prob" => {
                Ok(Strategy::TopProbability)
            }
            "top_margin" | "top-margin" => Ok(Strategy::TopMargin),
            "random" => Ok(Strategy::Random),
            other => Err(Error::config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Scores keyed by masked position.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceVector {
    pub strategy: Strategy,
    pub entries: BTreeMap<usize, Score>,
}

impl ConfidenceVector {
    pub fn get(&self, pos: usize) -> Option<Score> {
        self.entries.get(&pos).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Top-1 probability at every covered position.
pub fn top_probability(resp: &DenoiserResponse) -> ConfidenceVector {
    let entries = resp
        .iter()
        .map(|(pos, preds)| (pos, Score::Value(preds.first().map_or(0.0, |p| p.prob))))
        .collect();
    ConfidenceVector {
        strategy: Strategy::TopProbability,
        entries,
    }
}

/// Gap between the two highest probabilities at every covered position.
pub fn top_margin(resp: &DenoiserResponse) -> Result<ConfidenceVector> {
    let mut entries = BTreeMap::new();
    for (pos, preds) in resp.iter() {
        match preds {
            [first, second, ..] => {
                entries.insert(pos, Score::Value(first.prob - second.prob));
            }
            _ => {
                return Err(Error::contract(format!(
                    "top-margin needs two predictions at position {pos}, got {}",
                    preds.len()
                )))
            }
        }
    }
    Ok(ConfidenceVector {
        strategy: Strategy::TopMargin,
        entries,
    })
}

/// Uniform `[0, 1)` score per position, addressed by `(seed, step, position)`.
pub fn random_scores(masked: &[usize], seed: u64, step: usize) -> ConfidenceVector {
    let entries = masked
        .iter()
        .map(|&pos| (pos, Score::Value(draw_unit(seed, step as u64, pos as u64))))
        .collect();
    ConfidenceVector {
        strategy: Strategy::Random,
        entries,
    }
}

/// Base scores for `strategy` over the positions covered by `resp`.
pub fn base_confidence(
    strategy: Strategy,
    resp: &DenoiserResponse,
    seed: u64,
    step: usize,
) -> Result<ConfidenceVector> {
    match strategy {
        Strategy::TopProbability => Ok(top_probability(resp)),
        Strategy::TopMargin => top_margin(resp),
        Strategy::Random => {
            let masked: Vec<usize> = resp.positions().collect();
            Ok(random_scores(&masked, seed, step))
        }
    }
}

/// Sends every position whose argmax token is `eot` to the bottom of the
/// selection order. Other scores are untouched.
pub fn eot_suppress(conf: &ConfidenceVector, resp: &DenoiserResponse, eot: TokenId) -> ConfidenceVector {
    let entries = conf
        .entries
        .iter()
        .map(|(&pos, &score)| {
            if resp.argmax(pos) == Some(eot) {
                (pos, Score::Suppressed)
            } else {
                (pos, score)
            }
        })
        .collect();
    ConfidenceVector {
        strategy: conf.strategy,
        entries,
    }
}
