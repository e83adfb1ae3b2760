//! Covariate rank weights.
//!
//! A test at covariate rank k with rank probability P(r = k | E) gets weight
//!
//! ```text
//! w_k = (m/α) · Φ̄( E/2 + log(δ / (α·P_k)) / E )
//! ```
//!
//! where δ is chosen so the weights average to one. Binary mode replaces δ by
//! δ·m/m₁. Exact weights solve the stationarity condition under an effect
//! density instead of plugging in the mean effect.

use serde::{Deserialize, Serialize};

use crate::error::{CrwError, Result};
use crate::exec;
use crate::normal;
use crate::quadrature::Rule;
use crate::rankprob::{background_probs, Background, RankDistribution, RankProbMethod};

/// Bracket for the Lagrange normalizer.
pub const DELTA_MIN: f64 = 1e-30;
pub const DELTA_MAX: f64 = 1e30;
/// Contract on |mean(w) − 1|.
pub const DELTA_TOLERANCE: f64 = 1e-6;

const GRID_POINTS: usize = 200;
const MAX_ITERATIONS: usize = 500;
// internal stopping rule, well inside the contract
const TARGET_RESIDUAL: f64 = 1e-13;
const TARGET_LOG_WIDTH: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum WeightMode {
    Continuous,
    /// Fixed effect shared by `m1` alternatives.
    Binary { m1: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub m: usize,
    pub alpha: f64,
    /// E(ε | ε > 0) in continuous mode, the fixed ε in binary mode.
    pub mean_effect: f64,
    pub mode: WeightMode,
}

impl WeightConfig {
    pub fn continuous(m: usize, alpha: f64, mean_effect: f64) -> Result<Self> {
        let cfg = WeightConfig { m, alpha, mean_effect, mode: WeightMode::Continuous };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn binary(m: usize, alpha: f64, effect: f64, m1: usize) -> Result<Self> {
        let cfg = WeightConfig { m, alpha, mean_effect: effect, mode: WeightMode::Binary { m1 } };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(CrwError::InvalidArgument("m must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CrwError::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.mean_effect.is_finite() && self.mean_effect > 0.0) {
            return Err(CrwError::InvalidArgument(format!(
                "mean effect must be positive, got {}",
                self.mean_effect
            )));
        }
        if let WeightMode::Binary { m1 } = self.mode {
            if m1 == 0 || m1 > self.m {
                return Err(CrwError::InvalidArgument(format!("binary mode needs 1 <= m1 <= m, got m1 = {m1}")));
            }
        }
        Ok(())
    }

    /// log of the factor multiplying δ inside the weight's logarithm.
    fn log_delta_scale(&self) -> f64 {
        match self.mode {
            WeightMode::Continuous => 0.0,
            WeightMode::Binary { m1 } => (self.m as f64 / m1 as f64).ln(),
        }
    }

    /// Largest possible weight, m/α.
    pub fn weight_cap(&self) -> f64 {
        self.m as f64 / self.alpha
    }

    /// Φ̄ argument for a rank probability at log δ.
    #[inline]
    fn argument(&self, log_delta: f64, rank_prob: f64) -> f64 {
        let e = self.mean_effect;
        e / 2.0 + (log_delta + self.log_delta_scale() - self.alpha.ln() - rank_prob.ln()) / e
    }
}

/// Per-test weights indexed by covariate rank (index 0 is rank 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn uniform(m: usize) -> Self {
        WeightVector { weights: vec![1.0; m] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,weight\n");
        for (i, w) in self.weights.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, w));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaSolver {
    NewtonRaphson,
    Grid,
    Bisection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSolution {
    pub delta: f64,
    pub solver: DeltaSolver,
    pub iterations: usize,
    pub residual: f64,
    /// Ranks whose probability underflowed to zero and were given weight 0.
    pub zero_prob_ranks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight {
    pub value: f64,
    /// The rank probability was zero, so the weight was set to 0.
    pub zero_prob: bool,
}

/// Weight for a single rank probability at normalizer `delta`.
pub fn weight_at(rank_prob: f64, delta: f64, cfg: &WeightConfig) -> Weight {
    weight_at_log(rank_prob, delta.ln(), cfg)
}

fn weight_at_log(rank_prob: f64, log_delta: f64, cfg: &WeightConfig) -> Weight {
    if rank_prob <= 0.0 {
        return Weight { value: 0.0, zero_prob: true };
    }
    let x = cfg.argument(log_delta, rank_prob);
    Weight { value: cfg.weight_cap() * normal::sf(x), zero_prob: false }
}

/// Mean weight and its derivative with respect to log δ.
fn mean_weight(probs: &[f64], log_delta: f64, cfg: &WeightConfig) -> (f64, f64) {
    let mut sum = 0.0;
    let mut dsum = 0.0;
    for &p in probs {
        if p <= 0.0 {
            continue;
        }
        let x = cfg.argument(log_delta, p);
        sum += normal::sf(x);
        dsum += normal::pdf(x);
    }
    // (1/m)·Σ (m/α)Φ̄(x) = Σ Φ̄(x) / α
    (sum / cfg.alpha, -dsum / (cfg.alpha * cfg.mean_effect))
}

/// Solve for δ, choosing Newton–Raphson (with a bisection safeguard) when the
/// mean effect is at least 1 and a grid pre-scan plus bisection otherwise.
pub fn solve_delta(rank_dist: &RankDistribution, cfg: &WeightConfig) -> Result<DeltaSolution> {
    let solver = if cfg.mean_effect >= 1.0 { DeltaSolver::NewtonRaphson } else { DeltaSolver::Grid };
    solve_delta_with(rank_dist, cfg, solver)
}

/// Solve for δ with an explicitly chosen solver.
pub fn solve_delta_with(
    rank_dist: &RankDistribution,
    cfg: &WeightConfig,
    solver: DeltaSolver,
) -> Result<DeltaSolution> {
    cfg.validate()?;
    let probs = &rank_dist.probs;
    if probs.len() != cfg.m {
        return Err(CrwError::LengthMismatch { expected: cfg.m, got: probs.len() });
    }
    let zero_prob_ranks = probs.iter().filter(|&&p| p <= 0.0).count();
    if zero_prob_ranks == probs.len() {
        return Err(CrwError::Degenerate("every rank probability is zero".into()));
    }
    let f = |s: f64| {
        let (mean, deriv) = mean_weight(probs, s, cfg);
        (mean - 1.0, deriv)
    };

    let mut trace = Vec::new();
    let (mut lo, mut hi) = (DELTA_MIN.ln(), DELTA_MAX.ln());
    let (f_lo, _) = f(lo);
    let (f_hi, _) = f(hi);
    trace.push((lo.exp(), f_lo));
    trace.push((hi.exp(), f_hi));
    if !(f_lo >= 0.0 && f_hi <= 0.0) {
        return Err(CrwError::SolverFailure {
            reason: format!("no sign change of mean weight − 1 on [{DELTA_MIN:e}, {DELTA_MAX:e}]"),
            best_residual: f_lo.abs().min(f_hi.abs()),
            trace,
        });
    }
    let mut iterations = 0;

    if solver == DeltaSolver::Grid {
        // log-spaced scan to seed a tight bracket
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let mut prev = (lo, f_lo);
        for i in 1..GRID_POINTS {
            let s = lo + i as f64 * step;
            let (fs, _) = f(s);
            iterations += 1;
            if fs <= 0.0 {
                lo = prev.0;
                hi = s;
                break;
            }
            prev = (s, fs);
        }
    }

    // Start NR from the closed-form root for uniform rank probabilities.
    let mut s = if solver == DeltaSolver::NewtonRaphson {
        let m = cfg.m as f64;
        let e = cfg.mean_effect;
        let guess = (cfg.alpha / m).ln() + e * (normal::upper_quantile(cfg.alpha / m) - e / 2.0)
            - cfg.log_delta_scale();
        guess.clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    };
    let mut best = (f64::INFINITY, s);

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (fs, dfs) = f(s);
        if trace.len() < 64 {
            trace.push((s.exp(), fs));
        }
        if fs.abs() < best.0 {
            best = (fs.abs(), s);
        }
        if fs.abs() <= TARGET_RESIDUAL {
            break;
        }
        if fs > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        if hi - lo <= TARGET_LOG_WIDTH {
            break;
        }
        let newton = if solver == DeltaSolver::NewtonRaphson && dfs < 0.0 {
            let next = s - fs / dfs;
            (next > lo && next < hi).then_some(next)
        } else {
            None
        };
        s = newton.unwrap_or(0.5 * (lo + hi));
    }

    let (residual, s) = best;
    if residual > DELTA_TOLERANCE {
        return Err(CrwError::SolverFailure {
            reason: format!("no convergence after {iterations} iterations"),
            best_residual: residual,
            trace,
        });
    }
    Ok(DeltaSolution { delta: s.exp(), solver, iterations, residual, zero_prob_ranks })
}

/// CRW weights for every rank.
pub fn crw_weights(
    rank_dist: &RankDistribution,
    cfg: &WeightConfig,
) -> Result<(WeightVector, DeltaSolution)> {
    let solution = solve_delta(rank_dist, cfg)?;
    let weights = weights_for(rank_dist, cfg, &solution);
    Ok((weights, solution))
}

/// Weights at an already solved δ.
pub fn weights_for(
    rank_dist: &RankDistribution,
    cfg: &WeightConfig,
    solution: &DeltaSolution,
) -> WeightVector {
    let log_delta = solution.delta.ln();
    let weights = rank_dist
        .probs
        .iter()
        .map(|&p| weight_at_log(p, log_delta, cfg).value)
        .collect();
    WeightVector { weights }
}

/// Average power Σᵢ Φ̄(z_{αwᵢ/m} − E)·P(rᵢ | E), evaluated at the point effect
/// `cfg.mean_effect`.
pub fn average_power(weights: &WeightVector, rank_dist: &RankDistribution, cfg: &WeightConfig) -> f64 {
    let m = cfg.m as f64;
    weights
        .weights
        .iter()
        .zip(&rank_dist.probs)
        .map(|(&w, &p)| {
            if w <= 0.0 {
                return 0.0;
            }
            let q = (cfg.alpha * w / m).min(1.0);
            normal::sf(normal::upper_quantile(q) - cfg.mean_effect) * p
        })
        .sum()
}

/// Density of the non-zero test effect used by [`exact_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EffectDensity {
    PointMass { effect: f64 },
    /// Normal(mean, sd) restricted to ε > 0.
    TruncatedNormal { mean: f64, sd: f64 },
}

impl EffectDensity {
    /// Quadrature nodes (ε, weight) with weights summing to one.
    pub fn nodes(&self) -> Result<Vec<(f64, f64)>> {
        match *self {
            EffectDensity::PointMass { effect } => {
                if !(effect.is_finite() && effect > 0.0) {
                    return Err(CrwError::InvalidArgument(format!("point-mass effect must be positive, got {effect}")));
                }
                Ok(vec![(effect, 1.0)])
            }
            EffectDensity::TruncatedNormal { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
                    return Err(CrwError::InvalidArgument(format!(
                        "truncated normal needs finite mean and positive sd, got ({mean}, {sd})"
                    )));
                }
                let lo = (mean - 8.0 * sd).max(0.0);
                let hi = mean + 8.0 * sd;
                if hi <= 0.0 {
                    return Err(CrwError::InvalidArgument("truncated normal has no mass above 0".into()));
                }
                let rule = Rule::composite(lo, hi, 4, 8);
                let mut nodes: Vec<(f64, f64)> = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&e, &w)| (e, w * normal::pdf((e - mean) / sd)))
                    .collect();
                let total: f64 = nodes.iter().map(|n| n.1).sum();
                nodes.iter_mut().for_each(|n| n.1 /= total);
                Ok(nodes)
            }
        }
    }
}

/// Rank probabilities of a test as a function of its test effect ε.
pub trait RankProbSource: Sync {
    fn m(&self) -> usize;
    fn rank_probs(&self, effect: f64) -> Result<Vec<f64>>;
}

/// Rank probabilities for a query whose covariate effect is
/// `intercept + slope·ε` (clamped at 0), ranked among `m0` null covariates and
/// `m1 − 1` other alternatives at `tau_alt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateRankSource {
    pub m0: usize,
    pub m1: usize,
    pub tau_alt: f64,
    pub intercept: f64,
    pub slope: f64,
    pub method: RankProbMethod,
}

impl RankProbSource for CovariateRankSource {
    fn m(&self) -> usize {
        self.m0 + self.m1
    }

    fn rank_probs(&self, effect: f64) -> Result<Vec<f64>> {
        if self.m1 == 0 {
            return Err(CrwError::InvalidModel("exact weights need m1 >= 1".into()));
        }
        let bg = Background {
            n0: self.m0,
            n1: self.m1 - 1,
            tau_alt: self.tau_alt,
            tau_query: (self.intercept + self.slope * effect).max(0.0),
        };
        background_probs(&bg, self.method)
    }
}

/// Any closure returning rank probabilities, paired with its length.
pub struct FnRankSource<F> {
    pub m: usize,
    pub f: F,
}

impl<F> RankProbSource for FnRankSource<F>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    fn m(&self) -> usize {
        self.m
    }

    fn rank_probs(&self, effect: f64) -> Result<Vec<f64>> {
        (self.f)(effect)
    }
}

/// Stationarity equation for one rank, written as log Σⱼ exp(cⱼ + z·εⱼ).
struct RankEquation {
    log_coef: Vec<f64>,
    effects: Vec<f64>,
}

impl RankEquation {
    fn value_and_slope(&self, z: f64) -> (f64, f64) {
        let terms: Vec<f64> = self.log_coef.iter().zip(&self.effects).map(|(c, e)| c + z * e).collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut slope = 0.0;
        for (t, e) in terms.iter().zip(&self.effects) {
            let v = (t - max).exp();
            sum += v;
            slope += v * e;
        }
        (max + sum.ln(), slope / sum)
    }

    /// Solve log G(z) = target for z; G is increasing since every ε > 0.
    fn solve(&self, target: f64, rank: usize) -> Result<f64> {
        const Z_BOUND: f64 = 40.0;
        let (lo_val, _) = self.value_and_slope(-Z_BOUND);
        if lo_val >= target {
            return Ok(f64::NEG_INFINITY);
        }
        let (hi_val, _) = self.value_and_slope(Z_BOUND);
        if hi_val <= target {
            return Ok(f64::INFINITY);
        }
        let (mut lo, mut hi) = (-Z_BOUND, Z_BOUND);
        let mut z = 0.0;
        for _ in 0..200 {
            let (v, slope) = self.value_and_slope(z);
            if !v.is_finite() {
                return Err(CrwError::RankSolverFailure { rank, reason: format!("non-finite value at z = {z}") });
            }
            let g = v - target;
            if g.abs() < 1e-13 {
                return Ok(z);
            }
            if g < 0.0 {
                lo = z;
            } else {
                hi = z;
            }
            if hi - lo < 1e-14 {
                return Ok(z);
            }
            let next = z - g / slope;
            z = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        Err(CrwError::RankSolverFailure { rank, reason: "no convergence in 200 iterations".into() })
    }
}

/// Exact weights: for each rank k solve
/// ∫ exp(z_{αw_k/m}·ε − ε²/2)·P(r_k | ε)·f(ε) dε = δ/α for w_k, with δ
/// chosen by bisection so the weights sum to m.
pub fn exact_weights<S: RankProbSource + ?Sized>(
    source: &S,
    density: &EffectDensity,
    cfg: &WeightConfig,
) -> Result<(WeightVector, DeltaSolution)> {
    cfg.validate()?;
    let m = cfg.m;
    if source.m() != m {
        return Err(CrwError::LengthMismatch { expected: m, got: source.m() });
    }
    let nodes = density.nodes()?;
    let tables = exec::map_slice(&nodes, |&(e, _)| source.rank_probs(e));
    let mut per_node = Vec::with_capacity(nodes.len());
    for t in tables {
        let probs = t?;
        if probs.len() != m {
            return Err(CrwError::LengthMismatch { expected: m, got: probs.len() });
        }
        per_node.push(probs);
    }
    let effects: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    let mut zero_prob_ranks = 0;
    let equations: Vec<Option<RankEquation>> = (0..m)
        .map(|k| {
            let log_coef: Vec<f64> = nodes
                .iter()
                .zip(&per_node)
                .map(|(&(e, w), probs)| w.ln() - 0.5 * e * e + probs[k].ln())
                .collect();
            if log_coef.iter().all(|c| *c == f64::NEG_INFINITY) {
                zero_prob_ranks += 1;
                None
            } else {
                Some(RankEquation { log_coef, effects: effects.clone() })
            }
        })
        .collect();
    if zero_prob_ranks == m {
        return Err(CrwError::Degenerate("every rank probability is zero".into()));
    }
    if equations.iter().flatten().any(|eq| eq.log_coef.iter().any(|c| c.is_nan())) {
        return Err(CrwError::NonFinite("rank probability table contains NaN".into()));
    }

    let cap = cfg.weight_cap();
    let scale = cfg.log_delta_scale() - cfg.alpha.ln();
    let weights_at = |log_delta: f64| -> Result<Vec<f64>> {
        let target = log_delta + scale;
        let solved = exec::map_range(m, |k| match &equations[k] {
            None => Ok(0.0),
            Some(eq) => eq.solve(target, k + 1).map(|z| cap * normal::sf(z)),
        });
        solved.into_iter().collect()
    };

    let (mut lo, mut hi) = (DELTA_MIN.ln(), DELTA_MAX.ln());
    let mean_minus_one = |w: &[f64]| w.iter().sum::<f64>() / m as f64 - 1.0;
    let f_lo = mean_minus_one(&weights_at(lo)?);
    let f_hi = mean_minus_one(&weights_at(hi)?);
    if !(f_lo >= 0.0 && f_hi <= 0.0) {
        return Err(CrwError::SolverFailure {
            reason: "exact weights: no sign change on the δ bracket".into(),
            best_residual: f_lo.abs().min(f_hi.abs()),
            trace: vec![(lo.exp(), f_lo), (hi.exp(), f_hi)],
        });
    }
    let mut iterations = 0;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let s = 0.5 * (lo + hi);
        let w = weights_at(s)?;
        let r = mean_minus_one(&w);
        if best.as_ref().is_none_or(|b| r.abs() < b.0) {
            best = Some((r.abs(), s, w));
        }
        if r.abs() <= 1e-10 || hi - lo <= TARGET_LOG_WIDTH {
            break;
        }
        if r > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
    }
    let (residual, s, weights) = best.expect("at least one iteration");
    if residual > 1e-4 {
        return Err(CrwError::SolverFailure {
            reason: format!("exact weights did not normalize after {iterations} iterations"),
            best_residual: residual,
            trace: Vec::new(),
        });
    }
    Ok((
        WeightVector { weights },
        DeltaSolution { delta: s.exp(), solver: DeltaSolver::Bisection, iterations, residual, zero_prob_ranks },
    ))
}

/// Oracle weights ŵᵢ = (m/α)·Φ̄(εᵢ/2 + c/εᵢ)·I(εᵢ > 0), with c chosen so the
/// weights sum to m.
pub fn rdw_weights(effect_sizes: &[f64], alpha: f64) -> Result<WeightVector> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CrwError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if effect_sizes.is_empty() {
        return Err(CrwError::InvalidArgument("no effect sizes".into()));
    }
    if effect_sizes.iter().any(|e| e.is_nan()) {
        return Err(CrwError::InvalidArgument("effect sizes contain NaN".into()));
    }
    if !effect_sizes.iter().any(|&e| e > 0.0) {
        return Err(CrwError::Degenerate("all effect sizes are zero; use unit weights".into()));
    }
    let m = effect_sizes.len() as f64;
    let cap = m / alpha;
    let weights_at = |c: f64| -> Vec<f64> {
        effect_sizes
            .iter()
            .map(|&e| if e > 0.0 { cap * normal::sf(e / 2.0 + c / e) } else { 0.0 })
            .collect()
    };
    let excess = |c: f64| weights_at(c).iter().sum::<f64>() - m;

    let (mut lo, mut hi) = (-1.0, 1.0);
    while excess(lo) < 0.0 {
        lo *= 2.0;
        if lo < -1e12 {
            return Err(CrwError::SolverFailure { reason: "RDW constant: lower bracket".into(), best_residual: excess(lo).abs(), trace: Vec::new() });
        }
    }
    while excess(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(CrwError::SolverFailure { reason: "RDW constant: upper bracket".into(), best_residual: excess(hi).abs(), trace: Vec::new() });
        }
    }
    for _ in 0..300 {
        let c = 0.5 * (lo + hi);
        if excess(c) > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        if hi - lo <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    let mut weights = weights_at(c);
    // the bisection pins the sum to rounding error; remove the remainder
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= m / total);
    Ok(WeightVector { weights })
}
