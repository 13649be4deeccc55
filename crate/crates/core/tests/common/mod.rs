//! Shared helpers for integration tests: a second, deliberately naive
//! implementation of the decoding loop and the synthetic model, plus a
//! random case generator.
//!
//! Nothing here calls into the engine's scoring, modulation, scheduling or
//! selection code. Only plain data types are shared.

#![allow(dead_code)]

use anchordiff::{
    AnchorSpec, DecodeConfig, DecodeMode, ModulationParams, Score, StepRecord, Strategy,
    SyntheticModelConfig, TieBreak, TokenId, Vocabulary,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MASK: TokenId = TokenId(0);
pub const EOT: TokenId = TokenId(1);

pub fn vocab() -> Vocabulary {
    Vocabulary::new(64, MASK, EOT).unwrap()
}

#[derive(Clone, Debug)]
pub struct Case {
    pub config: DecodeConfig,
    pub model: SyntheticModelConfig,
}

fn raw_draw(key: u64, stream: u64, counter: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(counter) * 2);
    rng.next_u64()
}

fn unit(key: u64, stream: u64, counter: u64) -> f64 {
    (raw_draw(key, stream, counter) >> 11) as f64 / 9_007_199_254_740_992.0
}

struct Oracle<'a> {
    m: &'a SyntheticModelConfig,
}

impl Oracle<'_> {
    fn predicted(&self, slots: &[Option<TokenId>], i: usize) -> TokenId {
        if self.m.eot_cascade {
            for d in 1..=self.m.context_window {
                match slots.get(i + d) {
                    Some(Some(t)) => {
                        return if *t == self.m.vocab.eot_id { *t } else { self.m.target[i] };
                    }
                    Some(None) => continue,
                    None => break,
                }
            }
        }
        self.m.target[i]
    }

    fn q(&self, slots: &[Option<TokenId>], i: usize) -> f64 {
        let w = self.m.context_window;
        let mut decided = 0usize;
        let mut near_anchor = false;
        for j in i.saturating_sub(w)..=(i + w).min(slots.len() - 1) {
            if j == i {
                continue;
            }
            if let Some(t) = &slots[j] {
                decided += 1;
                if self.m.anchor_tokens.iter().any(|a| a == t) {
                    near_anchor = true;
                }
            }
        }
        let mut q = self.m.base_conf + self.m.context_gain * decided as f64 / (2 * w) as f64;
        if self.m.target[i] == self.m.vocab.eot_id {
            q += self.m.eot_boost;
        }
        if near_anchor {
            q += self.m.anchor_pull;
        }
        q.max(0.0).min(1.0)
    }

    /// First distractor at `i`: the runner-up token.
    fn runner_up_token(&self, i: usize, top: TokenId) -> TokenId {
        let mut noise = self.m.noise_vocab.clone();
        noise.sort();
        noise.dedup();
        let n = noise.len();
        let start = (raw_draw(self.m.seed, u64::MAX, i as u64) % n as u64) as usize;
        (0..n)
            .map(|o| noise[(start + o) % n])
            .find(|&t| t != top)
            .unwrap()
    }
}

fn beats(a: (Score, u64, usize), b: (Score, u64, usize)) -> bool {
    let sa = match a.0 {
        Score::Value(x) => Some(x),
        Score::Suppressed => None,
    };
    let sb = match b.0 {
        Score::Value(x) => Some(x),
        Score::Suppressed => None,
    };
    match (sa, sb) {
        (Some(x), Some(y)) if x != y => x > y,
        (Some(_), None) => true,
        (None, Some(_)) => false,
        _ => (a.1, a.2) < (b.1, b.2),
    }
}

/// Per-step counts: the pool split as evenly as possible, larger counts first.
pub fn even_split(pool: usize, steps: usize) -> Vec<usize> {
    let (q, r) = (pool / steps, pool % steps);
    (0..steps).map(|t| if t < r { q + 1 } else { q }).collect()
}

/// Naive weight at `i`: nearest anchor distance, then the clipped exponential.
pub fn naive_weight(i: usize, anchors: &[usize], kappa: f64, beta: f64) -> f64 {
    match anchors.iter().map(|&a| i.abs_diff(a)).min() {
        None => 0.0,
        Some(d) => (beta * (-(d as f64) / kappa).exp()).min(1.0),
    }
}

/// How the oracle turns `(c, w, p)` into a modulated score.
pub type Factor = fn(c: f64, w: f64, p: f64, m: &ModulationParams) -> f64;

pub fn progress_factor(c: f64, w: f64, p: f64, m: &ModulationParams) -> f64 {
    c * (1.0 - w * (1.0 - p).powf(m.gamma))
}

pub fn constant_factor(c: f64, w: f64, _p: f64, _m: &ModulationParams) -> f64 {
    c * (1.0 - w)
}

/// Brute-force run of a non-AR case. Returns the step records the engine
/// should produce.
pub fn simulate(case: &Case) -> Vec<StepRecord> {
    simulate_with(case, None)
}

/// As [`simulate`], with `factor` replacing the modulation rule when given.
pub fn simulate_with(case: &Case, factor: Option<Factor>) -> Vec<StepRecord> {
    let cfg = &case.config;
    assert_eq!(cfg.mode, DecodeMode::NonAr, "oracle covers non-AR runs only");
    let oracle = Oracle { m: &case.model };
    let l = cfg.length;
    let mut slots: Vec<Option<TokenId>> = vec![None; l];
    let mut anchors = Vec::new();
    if !cfg.anchor.tokens.is_empty() {
        let start = l - cfg.anchor.offset_from_end - cfg.anchor.tokens.len();
        for (o, &t) in cfg.anchor.tokens.iter().enumerate() {
            slots[start + o] = Some(t);
            anchors.push(start + o);
        }
    }
    let pool = l - anchors.len();
    let mut out = Vec::new();
    for (step, k) in even_split(pool, cfg.steps).into_iter().enumerate() {
        let masked: Vec<usize> = (0..l).filter(|&i| slots[i].is_none()).collect();
        let p = 1.0 - masked.len() as f64 / l as f64;
        let mut base = Vec::new();
        let mut modded = Vec::new();
        let mut top = Vec::new();
        for &i in &masked {
            let t = oracle.predicted(&slots, i);
            let q = oracle.q(&slots, i);
            let c = match cfg.strategy {
                Strategy::TopProbability => q,
                Strategy::TopMargin => q - 0.9 * q.min(1.0 - q),
                Strategy::Random => unit(cfg.seed, step as u64, i as u64),
            };
            base.push((i, Score::Value(c)));
            let mut s = Score::Value(c);
            if let Some(m) = &cfg.modulation {
                let w = naive_weight(i, &anchors, m.kappa, m.beta);
                let f = factor.unwrap_or(if m.progress_dependent { progress_factor } else { constant_factor });
                s = Score::Value(f(c, w, p, m));
            }
            if cfg.eot_suppression && t == cfg.vocab.eot_id {
                s = Score::Suppressed;
            }
            modded.push((i, s));
            top.push(t);
        }

        let jitter = |i: usize| match cfg.tie_break {
            TieBreak::LowestIndex => 0,
            TieBreak::Seeded => raw_draw(cfg.seed, u64::MAX - 1, (step * l + i) as u64),
        };
        let mut taken = vec![false; masked.len()];
        let mut selected = Vec::new();
        let mut tokens = Vec::new();
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for j in 0..masked.len() {
                if taken[j] {
                    continue;
                }
                let cand = (modded[j].1, jitter(masked[j]), masked[j]);
                if best.is_none_or(|b| beats(cand, (modded[b].1, jitter(masked[b]), masked[b]))) {
                    best = Some(j);
                }
            }
            let j = best.unwrap();
            taken[j] = true;
            let i = masked[j];
            let mut t = top[j];
            if cfg.eot_hard_ban && t == cfg.vocab.eot_id {
                t = oracle.runner_up_token(i, t);
            }
            selected.push(i);
            tokens.push(t);
        }
        for (&i, &t) in selected.iter().zip(&tokens) {
            slots[i] = Some(t);
        }
        out.push(StepRecord {
            step,
            masked_before: masked.len(),
            progress: p,
            selected,
            tokens,
            conf_base: base,
            conf_mod: modded,
        });
    }
    assert!(slots.iter().all(Option::is_some));
    out
}

/// Small deterministic generator for test cases.
pub struct Gen(ChaCha8Rng);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + self.below(hi_inclusive - lo + 1)
    }

    pub fn coin(&mut self) -> bool {
        self.0.next_u64() & 1 == 1
    }

    pub fn u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on `[0, hi)` quantized to multiples of 0.05.
    pub fn knob(&mut self, hi: f64) -> f64 {
        let steps = (hi / 0.05).floor() as usize;
        self.below(steps + 1) as f64 * 0.05
    }

    pub fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        xs[self.below(xs.len())]
    }
}

/// A random synthetic model for a response of `length`.
pub fn random_model(g: &mut Gen, length: usize, anchor_tokens: &[TokenId]) -> SyntheticModelConfig {
    let v = vocab();
    let suffix = g.below(length / 2 + 1);
    let mut m = SyntheticModelConfig::with_eot_suffix(v, length, suffix);
    // sprinkle repeated target tokens so ties and anchor-token hits happen
    for i in 0..length.saturating_sub(suffix) {
        if g.below(4) == 0 {
            m.target[i] = TokenId(2 + g.below(6) as u32);
        }
    }
    m.context_window = g.range(1, 4);
    m.base_conf = g.pick(&[0.2, 0.3, 0.4, 0.5, 0.6]);
    let room = 1.0 - m.base_conf;
    m.context_gain = g.knob(room);
    m.eot_boost = g.knob(room);
    m.anchor_pull = g.knob(room);
    m.anchor_tokens = anchor_tokens.to_vec();
    m.eot_cascade = g.coin();
    m.seed = g.u64() % 1000;
    m
}

/// A random non-AR case with `L <= 16`, `T` in `{L, L/2, L/4}` (feasible
/// ones only) and either no anchor or a two-token anchor.
pub fn random_case(g: &mut Gen) -> Case {
    loop {
        let length = g.range(4, 16);
        let anchored = g.coin();
        let anchor = if anchored {
            let offset = g.range(0, length - 2);
            AnchorSpec::new(vec![TokenId(60), TokenId(61)], offset)
        } else {
            AnchorSpec::none()
        };
        let steps = g.pick(&[length, length / 2, length / 4]);
        if steps == 0 || steps > length - anchor.len() {
            continue;
        }
        let model = random_model(g, length, &anchor.tokens);
        let mut config = DecodeConfig::new(length, vocab());
        config.steps = steps;
        config.strategy = g.pick(&Strategy::ALL);
        config.anchor = anchor;
        if g.coin() {
            config.modulation = Some(ModulationParams {
                kappa: g.pick(&[0.5, 2.0, 12.0, 14.0]),
                beta: g.pick(&[0.5, 1.0, 1.3, 1.5]),
                gamma: g.pick(&[0.5, 0.85, 1.0, 2.0]),
                progress_dependent: g.below(4) != 0,
            });
        }
        config.eot_suppression = g.coin();
        config.eot_hard_ban = config.eot_suppression && g.below(3) == 0;
        config.tie_break = if g.coin() { TieBreak::LowestIndex } else { TieBreak::Seeded };
        config.seed = g.u64() % 10_000;
        return Case { config, model };
    }
}
