//! Per-step unmask counts and semi-autoregressive block budgets.

use std::ops::Range;

use crate::error::{Error, Result};

/// Tokens to unmask at each of `steps` steps so that a pool of
/// `length - anchor_len` masked slots is exhausted.
///
/// Each count is `ceil(remaining_masked / remaining_steps)`, so every count is
/// the floor or ceiling of the mean and the result is exactly `length / steps`
/// everywhere when that division is exact.
pub fn schedule_counts(length: usize, steps: usize, anchor_len: usize) -> Result<Vec<usize>> {
    let pool = length
        .checked_sub(anchor_len)
        .ok_or_else(|| Error::config(format!("anchor length {anchor_len} exceeds length {length}")))?;
    if steps == 0 {
        return Err(Error::config("step budget must be at least 1"));
    }
    if steps > pool {
        return Err(Error::config(format!(
            "step budget {steps} exceeds the {pool} masked positions"
        )));
    }
    let mut remaining = pool;
    Ok((0..steps)
        .map(|t| {
            let k = remaining.div_ceil(steps - t);
            remaining -= k;
            k
        })
        .collect())
}

/// One block of a semi-autoregressive run and the steps it receives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockBudget {
    pub positions: Range<usize>,
    pub steps: usize,
}

/// Splits `0..length` into blocks of `block_size` (last block takes the
/// remainder) and apportions `steps` across them in proportion to block size,
/// using the same remaining-over-remaining ceiling rule. Every block gets at
/// least one step and never more steps than positions.
pub fn block_budgets(length: usize, block_size: usize, steps: usize) -> Result<Vec<BlockBudget>> {
    if block_size == 0 {
        return Err(Error::config("block size must be positive"));
    }
    if steps == 0 || steps > length {
        return Err(Error::config(format!(
            "step budget {steps} must lie in 1..={length}"
        )));
    }
    let blocks: Vec<Range<usize>> = (0..length)
        .step_by(block_size)
        .map(|s| s..(s + block_size).min(length))
        .collect();
    if steps < blocks.len() {
        return Err(Error::config(format!(
            "step budget {steps} is smaller than the {} blocks of size {block_size}",
            blocks.len()
        )));
    }
    let mut steps_left = steps;
    let mut len_left = length;
    let n = blocks.len();
    Ok(blocks
        .into_iter()
        .enumerate()
        .map(|(j, positions)| {
            let size = positions.len();
            let blocks_after = n - j - 1;
            let share = if blocks_after == 0 {
                steps_left
            } else {
                (steps_left * size)
                    .div_ceil(len_left)
                    .min(steps_left - blocks_after)
                    .clamp(1, size)
            };
            steps_left -= share;
            len_left -= size;
            BlockBudget {
                positions,
                steps: share,
            }
        })
        .collect())
}
