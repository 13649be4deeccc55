//! Decoding state: token slots, mask bookkeeping, anchor placement and progress.
//!
//! Positions are response-relative (`0..L`); the prompt never appears here and
//! is handed to the denoiser as opaque context.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a denoiser vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub size: u32,
    pub mask_id: TokenId,
    pub eot_id: TokenId,
    /// Optional display strings, indexed by token id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
}

impl Vocabulary {
    pub fn new(size: u32, mask_id: TokenId, eot_id: TokenId) -> Result<Self> {
        let vocab = Vocabulary {
            size,
            mask_id,
            eot_id,
            tokens: None,
        };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::config("vocabulary size must be positive"));
        }
        if self.mask_id == self.eot_id {
            return Err(Error::config("mask_id and eot_id must differ"));
        }
        if !self.contains(self.mask_id) || !self.contains(self.eot_id) {
            return Err(Error::config(format!(
                "mask_id {} / eot_id {} out of range for vocabulary of size {}",
                self.mask_id.0, self.eot_id.0, self.size
            )));
        }
        if let Some(tokens) = &self.tokens {
            if tokens.len() != self.size as usize {
                return Err(Error::config(format!(
                    "token table has {} entries, vocabulary size is {}",
                    tokens.len(),
                    self.size
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, token: TokenId) -> bool {
        token.0 < self.size
    }

    /// Token usable as decoded content: in range and not the mask token.
    pub fn is_content(&self, token: TokenId) -> bool {
        self.contains(token) && token != self.mask_id
    }

    pub fn display(&self, token: TokenId) -> String {
        self.tokens
            .as_ref()
            .and_then(|t| t.get(token.0 as usize).cloned())
            .unwrap_or_else(|| token.to_string())
    }
}

pub const DEFAULT_ANCHOR_OFFSET: usize = 20;

/// Suffix anchor tokens and where they go.
///
/// `offset_from_end` counts the masked positions left after the anchor's last
/// token, so the anchor ends at `L - offset_from_end - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    #[serde(default)]
    pub tokens: Vec<TokenId>,
    #[serde(default = "default_offset")]
    pub offset_from_end: usize,
    /// Human-readable form of the anchor, e.g. the phrase it was tokenized from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<String>,
}

fn default_offset() -> usize {
    DEFAULT_ANCHOR_OFFSET
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec::none()
    }
}

impl AnchorSpec {
    pub fn none() -> Self {
        AnchorSpec {
            tokens: Vec::new(),
            offset_from_end: DEFAULT_ANCHOR_OFFSET,
            display: None,
        }
    }

    pub fn new(tokens: Vec<TokenId>, offset_from_end: usize) -> Self {
        AnchorSpec {
            tokens,
            offset_from_end,
            display: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Response positions occupied by the anchor for a response of `length`.
    pub fn positions(&self, length: usize) -> Result<Range<usize>> {
        if self.tokens.is_empty() {
            return Ok(0..0);
        }
        let needed = self.offset_from_end + self.tokens.len();
        if needed > length {
            return Err(Error::config(format!(
                "anchor of {} tokens with offset {} does not fit in a response of length {}",
                self.tokens.len(),
                self.offset_from_end,
                length
            )));
        }
        let start = length - needed;
        Ok(start..start + self.tokens.len())
    }
}

/// When a slot was decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedAt {
    /// Pre-filled before decoding (anchor tokens).
    Init,
    /// Forward step index, `0..T`.
    Step(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceState {
    slots: Vec<Option<TokenId>>,
    decided_at: Vec<Option<DecidedAt>>,
    anchor_positions: Vec<usize>,
    masked: usize,
    total_steps: usize,
    remaining_steps: usize,
}

impl SequenceState {
    /// Masked response of `length` slots with the anchor inserted.
    pub fn init(length: usize, anchor: &AnchorSpec, vocab: &Vocabulary) -> Result<Self> {
        if length == 0 {
            return Err(Error::config("response length must be positive"));
        }
        vocab.validate()?;
        for &t in &anchor.tokens {
            if !vocab.is_content(t) {
                return Err(Error::config(format!(
                    "anchor token {} is the mask token or outside the vocabulary",
                    t.0
                )));
            }
        }
        let range = anchor.positions(length)?;
        let mut slots = vec![None; length];
        let mut decided_at = vec![None; length];
        for (pos, &tok) in range.clone().zip(&anchor.tokens) {
            slots[pos] = Some(tok);
            decided_at[pos] = Some(DecidedAt::Init);
        }
        Ok(SequenceState {
            slots,
            decided_at,
            anchor_positions: range.collect(),
            masked: length - anchor.len(),
            total_steps: 0,
            remaining_steps: 0,
        })
    }

    /// Arms the step countdown at `steps` (the budget `T`).
    pub fn begin(&mut self, steps: usize) {
        self.total_steps = steps;
        self.remaining_steps = steps;
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Option<TokenId>] {
        &self.slots
    }

    pub fn decided_at(&self) -> &[Option<DecidedAt>] {
        &self.decided_at
    }

    pub fn anchor_positions(&self) -> &[usize] {
        &self.anchor_positions
    }

    pub fn masked_count(&self) -> usize {
        self.masked
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_none().then_some(i))
            .collect()
    }

    pub fn is_masked(&self, pos: usize) -> bool {
        self.slots.get(pos).is_some_and(Option::is_none)
    }

    /// Countdown value `t`, from `T` down to 0.
    pub fn remaining_steps(&self) -> usize {
        self.remaining_steps
    }

    /// Forward index of the step about to run (`T - t`).
    pub fn forward_step(&self) -> usize {
        self.total_steps - self.remaining_steps
    }

    /// Decoding progress `1 - m/L`, counting anchor slots in `L`.
    pub fn progress(&self) -> f64 {
        1.0 - self.masked as f64 / self.slots.len() as f64
    }

    /// Fills the given masked slots and closes the current step.
    pub fn unmask(&mut self, assignments: &[(usize, TokenId)]) -> Result<()> {
        let mut seen = vec![false; self.slots.len()];
        for &(pos, _) in assignments {
            if pos >= self.slots.len() {
                return Err(Error::contract(format!("position {pos} is out of range")));
            }
            if seen[pos] {
                return Err(Error::contract(format!("position {pos} assigned twice")));
            }
            if self.slots[pos].is_some() {
                return Err(Error::contract(format!("position {pos} is not masked")));
            }
            seen[pos] = true;
        }
        let step = self.forward_step();
        for &(pos, tok) in assignments {
            self.slots[pos] = Some(tok);
            self.decided_at[pos] = Some(DecidedAt::Step(step));
        }
        self.masked -= assignments.len();
        self.remaining_steps = self.remaining_steps.saturating_sub(1);
        Ok(())
    }

    /// Final tokens; `None` while any slot is still masked.
    pub fn tokens(&self) -> Option<Vec<TokenId>> {
        self.slots.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(100, TokenId(0), TokenId(1)).unwrap()
    }

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().copied().map(TokenId).collect()
    }

    #[test]
    fn test_vocabulary_rejects_equal_special_tokens() {
        assert!(Vocabulary::new(10, TokenId(3), TokenId(3)).is_err());
        assert!(Vocabulary::new(10, TokenId(3), TokenId(10)).is_err());
    }

    #[test]
    fn test_anchor_placement_l256() {
        let anchor = AnchorSpec::new(ids(&[10, 11, 12]), 20);
        let state = SequenceState::init(256, &anchor, &vocab()).unwrap();
        assert_eq!(state.anchor_positions(), &[233, 234, 235]);
        assert_eq!(state.masked_count(), 253);
        // exactly 20 masked positions after the anchor
        assert_eq!(state.masked_positions().iter().filter(|&&p| p > 235).count(), 20);
        assert!((state.progress() - 3.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn test_empty_anchor_all_masked() {
        let state = SequenceState::init(8, &AnchorSpec::none(), &vocab()).unwrap();
        assert_eq!(state.masked_count(), 8);
        assert!(state.anchor_positions().is_empty());
        assert_eq!(state.progress(), 0.0);
    }

    #[test]
    fn test_anchor_too_long_is_config_error() {
        let anchor = AnchorSpec::new(ids(&[5, 5, 5, 5, 5]), 0);
        let err = SequenceState::init(4, &anchor, &vocab()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn test_anchor_mask_token_rejected() {
        let anchor = AnchorSpec::new(ids(&[0]), 2);
        assert!(SequenceState::init(8, &anchor, &vocab()).is_err());
    }

    #[test]
    fn test_progress_half() {
        let mut state = SequenceState::init(10, &AnchorSpec::none(), &vocab()).unwrap();
        state.begin(5);
        let assign: Vec<_> = (0..5).map(|i| (i, TokenId(7))).collect();
        state.unmask(&assign).unwrap();
        assert_eq!(state.progress(), 0.5);
    }

    #[test]
    fn test_unmask_records_step() {
        let mut state = SequenceState::init(3, &AnchorSpec::none(), &vocab()).unwrap();
        state.begin(3);
        state.unmask(&[(1, TokenId(7))]).unwrap();
        assert_eq!(state.masked_positions(), vec![0, 2]);
        assert_eq!(state.decided_at()[1], Some(DecidedAt::Step(0)));
        state.unmask(&[(0, TokenId(8))]).unwrap();
        assert_eq!(state.decided_at()[0], Some(DecidedAt::Step(1)));
        state.unmask(&[(2, TokenId(9))]).unwrap();
        assert_eq!(state.progress(), 1.0);
        assert_eq!(state.tokens().unwrap(), ids(&[8, 7, 9]));
    }

    #[test]
    fn test_unmask_rejects_anchor_and_duplicates() {
        let anchor = AnchorSpec::new(ids(&[5]), 1);
        let mut state = SequenceState::init(4, &anchor, &vocab()).unwrap();
        state.begin(3);
        assert_eq!(state.anchor_positions(), &[2]);
        assert!(matches!(
            state.unmask(&[(2, TokenId(9))]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            state.unmask(&[(0, TokenId(9)), (0, TokenId(9))]),
            Err(Error::Contract(_))
        ));
        // failed calls leave the state untouched
        assert_eq!(state.masked_count(), 3);
        assert_eq!(state.forward_step(), 0);
    }

    #[test]
    fn test_empty_unmask_only_advances_step() {
        let mut state = SequenceState::init(4, &AnchorSpec::none(), &vocab()).unwrap();
        state.begin(2);
        let before = state.slots().to_vec();
        state.unmask(&[]).unwrap();
        assert_eq!(state.slots(), before.as_slice());
        assert_eq!(state.forward_step(), 1);
    }

    #[test]
    fn test_empty_anchor_matches_plain_mask_init() {
        let a = SequenceState::init(16, &AnchorSpec::none(), &vocab()).unwrap();
        let b = SequenceState::init(16, &AnchorSpec::new(vec![], 3), &vocab()).unwrap();
        assert_eq!(a, b);
        assert!(a.slots().iter().all(Option::is_none));
    }
}
