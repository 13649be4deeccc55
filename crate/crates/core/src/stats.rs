//! Diagnostics over decode traces: EOT ratio, where early decoding happens,
//! and paired-run deltas.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::state::{DecidedAt, TokenId};
use crate::trace::DecodeTrace;

pub const DEFAULT_BIN_COUNT: usize = 32;
pub const DEFAULT_EARLY_FRACTION: f64 = 0.15;

/// Fraction of response positions holding `eot` (anchor slots count in the
/// denominator).
pub fn eot_ratio(tokens: &[TokenId], eot: TokenId) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    tokens.iter().filter(|&&t| t == eot).count() as f64 / tokens.len() as f64
}

/// Number of leading steps that count as "early": `ceil(fraction * steps)`.
pub fn early_step_count(steps: usize, early_fraction: f64) -> usize {
    // guard against 0.15 * 20 = 3.0000000000000004
    ((early_fraction * steps as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Bin index of `pos`; bins have width `floor(L / bin_count)` and the last
/// bin absorbs the remainder.
pub fn bin_of(pos: usize, length: usize, bin_count: usize) -> usize {
    let width = (length / bin_count).max(1);
    (pos / width).min(bin_count - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositionHistogram {
    /// Fraction of early-decoded tokens per bin; all zero if none.
    pub bins: Vec<f64>,
    pub bin_count: usize,
    pub early_fraction: f64,
    pub early_steps: usize,
    pub early_tokens: usize,
    /// Bins that contain an anchor position.
    pub anchor_bins: Vec<usize>,
}

impl PositionHistogram {
    pub fn mass(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn anchor_mass(&self) -> f64 {
        self.anchor_bins.iter().map(|&b| self.bins[b]).sum()
    }

    /// Anchor-bin mass over what a uniform spread would put there. `None`
    /// without anchors.
    pub fn anchor_concentration(&self) -> Option<f64> {
        if self.anchor_bins.is_empty() {
            return None;
        }
        let uniform = self.anchor_bins.len() as f64 / self.bin_count as f64;
        Some(self.anchor_mass() / uniform)
    }

    /// `bin,start,end,fraction,anchor` rows for offline plotting.
    pub fn to_csv(&self, length: usize) -> String {
        let width = (length / self.bin_count).max(1);
        let mut out = String::from("bin,start,end,fraction,anchor\n");
        for (b, frac) in self.bins.iter().enumerate() {
            let start = b * width;
            let end = if b + 1 == self.bin_count { length } else { (b + 1) * width };
            out.push_str(&format!(
                "{b},{start},{end},{frac},{}\n",
                u8::from(self.anchor_bins.contains(&b))
            ));
        }
        out
    }
}

pub fn early_decode_histogram(
    trace: &DecodeTrace,
    bin_count: usize,
    early_fraction: f64,
) -> Result<PositionHistogram> {
    if trace.steps.is_empty() {
        return Err(Error::config("trace has no steps"));
    }
    let length = trace.length();
    if bin_count == 0 || bin_count > length {
        return Err(Error::config(format!(
            "bin count {bin_count} must lie in 1..={length}"
        )));
    }
    if !(0.0..=1.0).contains(&early_fraction) {
        return Err(Error::config("early fraction must lie in [0, 1]"));
    }
    let early_steps = early_step_count(trace.steps.len(), early_fraction);
    let mut counts = vec![0usize; bin_count];
    let mut early_tokens = 0;
    for rec in trace.steps.iter().take(early_steps) {
        for &pos in &rec.selected {
            counts[bin_of(pos, length, bin_count)] += 1;
            early_tokens += 1;
        }
    }
    let bins = counts
        .iter()
        .map(|&c| if early_tokens == 0 { 0.0 } else { c as f64 / early_tokens as f64 })
        .collect();
    let mut anchor_bins: Vec<usize> = trace
        .anchor_positions()?
        .into_iter()
        .map(|p| bin_of(p, length, bin_count))
        .collect();
    anchor_bins.dedup();
    Ok(PositionHistogram {
        bins,
        bin_count,
        early_fraction,
        early_steps,
        early_tokens,
        anchor_bins,
    })
}

/// Per-bin mean of per-trace fractions.
pub fn average_histograms(hists: &[PositionHistogram]) -> Result<PositionHistogram> {
    let first = hists
        .first()
        .ok_or_else(|| Error::config("no histograms to average"))?;
    if hists.iter().any(|h| h.bin_count != first.bin_count) {
        return Err(Error::config("histograms have different bin counts"));
    }
    let n = hists.len() as f64;
    let bins = (0..first.bin_count)
        .map(|b| hists.iter().map(|h| h.bins[b]).sum::<f64>() / n)
        .collect();
    let mut anchor_bins: Vec<usize> = hists.iter().flat_map(|h| h.anchor_bins.clone()).collect();
    anchor_bins.sort_unstable();
    anchor_bins.dedup();
    Ok(PositionHistogram {
        bins,
        bin_count: first.bin_count,
        early_fraction: first.early_fraction,
        early_steps: first.early_steps,
        early_tokens: hists.iter().map(|h| h.early_tokens).sum(),
        anchor_bins,
    })
}

/// Single-trace summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceReport {
    pub length: usize,
    pub steps: usize,
    pub eot_ratio: f64,
    pub histogram: PositionHistogram,
}

pub fn report(trace: &DecodeTrace, bin_count: usize, early_fraction: f64) -> Result<TraceReport> {
    let tokens = trace.final_tokens()?;
    Ok(TraceReport {
        length: trace.length(),
        steps: trace.steps.len(),
        eot_ratio: eot_ratio(&tokens, trace.header.eot_id),
        histogram: early_decode_histogram(trace, bin_count, early_fraction)?,
    })
}

/// Deltas `b - a` between two runs over the same response length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunComparison {
    /// Per position; `None` where either run pre-filled the slot.
    pub decided_at_delta: Vec<Option<i64>>,
    pub eot_ratio_a: f64,
    pub eot_ratio_b: f64,
    pub eot_ratio_delta: f64,
    pub histogram_delta: Vec<f64>,
}

impl RunComparison {
    pub fn is_zero(&self) -> bool {
        self.decided_at_delta.iter().all(|d| d.is_none_or(|v| v == 0))
            && self.eot_ratio_delta == 0.0
            && self.histogram_delta.iter().all(|&d| d == 0.0)
    }
}

pub fn compare_runs(
    a: &DecodeTrace,
    b: &DecodeTrace,
    bin_count: usize,
    early_fraction: f64,
) -> Result<RunComparison> {
    if a.length() != b.length() {
        return Err(Error::config(format!(
            "cannot compare runs of length {} and {}",
            a.length(),
            b.length()
        )));
    }
    let (da, db) = (a.decided_at()?, b.decided_at()?);
    let decided_at_delta = da
        .iter()
        .zip(&db)
        .map(|(x, y)| match (x, y) {
            (Some(DecidedAt::Step(x)), Some(DecidedAt::Step(y))) => Some(*y as i64 - *x as i64),
            _ => None,
        })
        .collect();
    let ra = report(a, bin_count, early_fraction)?;
    let rb = report(b, bin_count, early_fraction)?;
    Ok(RunComparison {
        decided_at_delta,
        eot_ratio_a: ra.eot_ratio,
        eot_ratio_b: rb.eot_ratio,
        eot_ratio_delta: rb.eot_ratio - ra.eot_ratio,
        histogram_delta: rb
            .histogram
            .bins
            .iter()
            .zip(&ra.histogram.bins)
            .map(|(y, x)| y - x)
            .collect(),
    })
}
