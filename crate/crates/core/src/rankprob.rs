//! Distribution of a test's covariate rank given its covariate effect size.
//!
//! Covariates are unit-variance normals: nulls centred at 0 and every
//! alternative centred at a common `tau_alt`. For a queried test whose
//! covariate takes value t, the number of nulls and alternatives above t are
//! independent binomials, and its rank is one plus their sum. The rank
//! distribution is the expectation of that pmf over t.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CrwError, Result};
use crate::exec;
use crate::normal;
use crate::quadrature::{NormalQuadrature, Rule};

/// Largest m accepted by [`rank_prob_exact`].
pub const EXACT_CAP: usize = 2000;
/// Below this many tests the normal approximation is flagged.
pub const APPROX_MIN_TESTS: usize = 10;
pub const MIN_MC_DRAWS: usize = 1000;
pub const MIN_GRID_SIZE: usize = 64;

const MC_CHUNK: usize = 4096;
const QUAD_CHUNK: usize = 64;
// binomial terms below exp(-LOG_CUTOFF) of the mode are dropped
const LOG_CUTOFF: f64 = 40.0;
const NORMAL_WINDOW_SD: f64 = 12.0;

/// Standard-normal CDF of a null covariate, F₀(t) = Φ(t).
pub fn null_cdf_at(t: f64) -> f64 {
    normal::cdf(t)
}

/// CDF of an alternative covariate with effect `tau_alt`, F₁(t) = Φ(t − τ).
pub fn alt_cdf_at(t: f64, tau_alt: f64) -> f64 {
    normal::cdf(t - tau_alt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Query {
    Null,
    Alternative,
}

/// Mixture of `m0` null and `m1` alternative covariates, and which kind of
/// test is being ranked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    pub m0: usize,
    pub m1: usize,
    pub tau_alt: f64,
    pub query: Query,
}

impl RankModel {
    pub fn new(m0: usize, m1: usize, tau_alt: f64, query: Query) -> Result<Self> {
        let model = RankModel { m0, m1, tau_alt, query };
        model.validate()?;
        Ok(model)
    }

    pub fn null_query(m0: usize, m1: usize, tau_alt: f64) -> Result<Self> {
        Self::new(m0, m1, tau_alt, Query::Null)
    }

    pub fn alt_query(m0: usize, m1: usize, tau_alt: f64) -> Result<Self> {
        Self::new(m0, m1, tau_alt, Query::Alternative)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m() == 0 {
            return Err(CrwError::InvalidModel("m0 + m1 must be at least 1".into()));
        }
        if !(self.tau_alt.is_finite() && self.tau_alt >= 0.0) {
            return Err(CrwError::InvalidModel(format!(
                "tau_alt must be finite and non-negative, got {}",
                self.tau_alt
            )));
        }
        match self.query {
            Query::Null if self.m0 == 0 => {
                Err(CrwError::InvalidModel("null query requires m0 >= 1".into()))
            }
            Query::Alternative if self.m1 == 0 => Err(CrwError::InvalidModel(
                "alternative query requires m1 >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn m(&self) -> usize {
        self.m0 + self.m1
    }

    /// Effect size of the queried test: 0 or `tau_alt`.
    pub fn tau_query(&self) -> f64 {
        match self.query {
            Query::Null => 0.0,
            Query::Alternative => self.tau_alt,
        }
    }

    pub(crate) fn background(&self) -> Background {
        let (n0, n1) = match self.query {
            Query::Null => (self.m0 - 1, self.m1),
            Query::Alternative => (self.m0, self.m1 - 1),
        };
        Background { n0, n1, tau_alt: self.tau_alt, tau_query: self.tau_query() }
    }
}

/// The other m − 1 covariates plus the queried test's own effect, which may
/// be any real here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Background {
    pub n0: usize,
    pub n1: usize,
    pub tau_alt: f64,
    pub tau_query: f64,
}

impl Background {
    pub fn m(&self) -> usize {
        self.n0 + self.n1 + 1
    }

    /// Exceedance probabilities (and complements) for a covariate value t.
    #[inline]
    fn exceed(&self, t: f64) -> Exceed {
        Exceed {
            p0: normal::sf(t),
            q0: normal::cdf(t),
            p1: normal::sf(t - self.tau_alt),
            q1: normal::cdf(t - self.tau_alt),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Exceed {
    p0: f64,
    q0: f64,
    p1: f64,
    q1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankMethod {
    ExactConvolution,
    NormalApprox,
    MonteCarlo,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntegrationMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    /// Set when the normal approximation is used below its accuracy floor.
    #[serde(default)]
    pub approximation_warning: bool,
}

/// P(r = k | τ) for k = 1..m, stored at index k − 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDistribution {
    pub probs: Vec<f64>,
    pub method: RankMethod,
    pub integration_meta: IntegrationMeta,
    /// Per-rank Monte-Carlo standard errors (Monte-Carlo mode only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_err: Option<Vec<f64>>,
}

impl RankDistribution {
    /// Uniform distribution over `m` ranks.
    pub fn uniform(m: usize) -> Self {
        RankDistribution {
            probs: vec![1.0 / m as f64; m],
            method: RankMethod::ExactConvolution,
            integration_meta: IntegrationMeta::default(),
            std_err: None,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Cumulative probabilities P(r ≤ k).
    pub fn cdf(&self) -> Vec<f64> {
        self.probs
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,prob\n");
        for (i, p) in self.probs.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, p));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rank distribution serializes")
    }
}

/// Which integration route to take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum RankProbMethod {
    Exact,
    Approx,
    Mc { draws: usize, seed: u64 },
    Grid { grid_size: usize },
}

impl RankProbMethod {
    /// Exact convolution up to [`EXACT_CAP`] tests, grid interpolation beyond.
    pub fn auto(m: usize) -> Self {
        if m <= EXACT_CAP {
            RankProbMethod::Exact
        } else {
            RankProbMethod::Grid { grid_size: 512 }
        }
    }
}

pub fn rank_prob(model: &RankModel, method: RankProbMethod) -> Result<RankDistribution> {
    match method {
        RankProbMethod::Exact => rank_prob_exact(model),
        RankProbMethod::Approx => rank_prob_normal_approx(model),
        RankProbMethod::Mc { draws, seed } => rank_prob_mc(model, draws, seed),
        RankProbMethod::Grid { grid_size } => rank_prob_grid(model, grid_size),
    }
}

/// Exact rank distribution by binomial convolution at each quadrature node.
pub fn rank_prob_exact(model: &RankModel) -> Result<RankDistribution> {
    model.validate()?;
    let m = model.m();
    if m > EXACT_CAP {
        return Err(CrwError::Capacity { m, cap: EXACT_CAP });
    }
    let quad = NormalQuadrature::for_tests(m);
    let probs = exact_probs(&model.background(), quad);
    Ok(RankDistribution {
        probs: normalized(probs),
        method: RankMethod::ExactConvolution,
        integration_meta: IntegrationMeta { nodes: Some(quad.nodes()), ..Default::default() },
        std_err: None,
    })
}

pub(crate) fn exact_probs(bg: &Background, quad: NormalQuadrature) -> Vec<f64> {
    let m = bg.m();
    let rule = Rule::normal_expectation(bg.tau_query, quad);
    let lnfact = ln_factorials(m);
    exec::chunked_sum(rule.len(), QUAD_CHUNK, m, |j, acc| {
        let w = rule.weights[j];
        if w == 0.0 {
            return;
        }
        add_convolution(bg, &lnfact, bg.exceed(rule.nodes[j]), w, acc);
    })
}

/// Adds `w` times the pmf of 1 + Bin(n0, p0) + Bin(n1, p1) into `acc`.
fn add_convolution(bg: &Background, lnfact: &[f64], e: Exceed, w: f64, acc: &mut [f64]) {
    let (lo0, pmf0) = binomial_window(bg.n0, e.p0, e.q0, lnfact);
    let (lo1, pmf1) = binomial_window(bg.n1, e.p1, e.q1, lnfact);
    for (a, &x) in pmf0.iter().enumerate() {
        let wx = w * x;
        let base = lo0 + lo1 + a;
        for (b, &y) in pmf1.iter().enumerate() {
            acc[base + b] += wx * y;
        }
    }
}

/// Binomial pmf restricted to the window where it exceeds e^{-40} of its mode.
/// Returns the first count in the window and the pmf values.
fn binomial_window(n: usize, p: f64, q: f64, lnfact: &[f64]) -> (usize, Vec<f64>) {
    if n == 0 || p <= 0.0 {
        return (0, vec![1.0]);
    }
    if q <= 0.0 {
        return (n, vec![1.0]);
    }
    let mode = (((n + 1) as f64 * p).floor() as usize).min(n);
    let ln_p = p.ln();
    let ln_q = q.ln();
    let ln_pmf = |k: usize| {
        lnfact[n] - lnfact[k] - lnfact[n - k] + k as f64 * ln_p + (n - k) as f64 * ln_q
    };
    let ln_mode = ln_pmf(mode);
    let floor = ln_mode - LOG_CUTOFF;
    let ratio = p / q;

    let mut upper = Vec::new();
    let mut v = ln_mode.exp();
    upper.push(v);
    let mut k = mode;
    while k < n {
        v *= ratio * (n - k) as f64 / (k + 1) as f64;
        k += 1;
        if v <= 0.0 || v.ln() < floor {
            break;
        }
        upper.push(v);
    }
    let mut lower = Vec::new();
    let mut v = ln_mode.exp();
    let mut k = mode;
    while k > 0 {
        v *= k as f64 / ((n - k + 1) as f64 * ratio);
        k -= 1;
        if v <= 0.0 || v.ln() < floor {
            break;
        }
        lower.push(v);
    }
    let lo = mode - lower.len();
    lower.reverse();
    lower.extend(upper);
    // the log-factorial table carries ~1e-11 absolute error at n in the
    // thousands; the truncated tails are far below that
    let total: f64 = lower.iter().sum();
    lower.iter_mut().for_each(|v| *v /= total);
    (lo, lower)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

fn normalized(mut probs: Vec<f64>) -> Vec<f64> {
    for p in probs.iter_mut() {
        if !p.is_finite() || *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        for p in probs.iter_mut() {
            *p /= total;
        }
    }
    probs
}

/// Moments of the exceedance count 1 + Bin(n0, p0) + Bin(n1, p1) at t:
/// mean (including the leading 1) and variance.
#[inline]
fn normal_moments(bg: &Background, t: f64) -> (f64, f64) {
    let e = bg.exceed(t);
    let n0 = bg.n0 as f64;
    let n1 = bg.n1 as f64;
    let mean = n0 * e.p0 + n1 * e.p1 + 1.0;
    let var = n0 * e.p0 * e.q0 + n1 * e.p1 * e.q1;
    (mean, var)
}

/// Normal density of the rank at k for one quadrature node, with the
/// degenerate zero-variance case treated as a point mass.
#[inline]
fn normal_rank_density(k: usize, mean: f64, var: f64) -> f64 {
    let x = k as f64;
    if var < 1e-12 {
        return if (x - mean).abs() < 0.5 { 1.0 } else { 0.0 };
    }
    let z = (x - mean) / var.sqrt();
    normal::pdf(z) / var.sqrt()
}

/// Rank distribution from the normal approximation to the binomial sum.
pub fn rank_prob_normal_approx(model: &RankModel) -> Result<RankDistribution> {
    model.validate()?;
    let m = model.m();
    let quad = NormalQuadrature::for_tests(m);
    let probs = approx_probs(&model.background(), quad);
    Ok(RankDistribution {
        probs: normalized(probs),
        method: RankMethod::NormalApprox,
        integration_meta: IntegrationMeta {
            nodes: Some(quad.nodes()),
            approximation_warning: m < APPROX_MIN_TESTS,
            ..Default::default()
        },
        std_err: None,
    })
}

pub(crate) fn approx_probs(bg: &Background, quad: NormalQuadrature) -> Vec<f64> {
    let m = bg.m();
    let rule = Rule::normal_expectation(bg.tau_query, quad);
    exec::chunked_sum(rule.len(), QUAD_CHUNK, m, |j, acc| {
        let w = rule.weights[j];
        if w == 0.0 {
            return;
        }
        let (mean, var) = normal_moments(bg, rule.nodes[j]);
        let half = NORMAL_WINDOW_SD * var.sqrt() + 2.0;
        let lo = ((mean - half).floor().max(1.0)) as usize;
        let hi = ((mean + half).ceil() as usize).min(m);
        for k in lo..=hi {
            acc[k - 1] += w * normal_rank_density(k, mean, var);
        }
    })
}

/// Monte-Carlo estimate of the rank distribution: t is drawn from its own
/// Normal(τ_query, 1) density, so every importance weight is one.
pub fn rank_prob_mc(model: &RankModel, draws: usize, seed: u64) -> Result<RankDistribution> {
    model.validate()?;
    if draws < MIN_MC_DRAWS {
        return Err(CrwError::InvalidArgument(format!(
            "Monte-Carlo rank probabilities need at least {MIN_MC_DRAWS} draws, got {draws}"
        )));
    }
    let bg = model.background();
    let m = model.m();
    let lnfact = ln_factorials(m);
    let n_chunks = draws.div_ceil(MC_CHUNK);
    let partials = exec::map_range(n_chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let count = MC_CHUNK.min(draws - c * MC_CHUNK);
        let mut sum = vec![0.0; m];
        let mut sumsq = vec![0.0; m];
        let mut scratch = vec![0.0; m];
        for _ in 0..count {
            let z: f64 = StandardNormal.sample(&mut rng);
            let t = bg.tau_query + z;
            let e = bg.exceed(t);
            let (lo0, pmf0) = binomial_window(bg.n0, e.p0, e.q0, &lnfact);
            let (lo1, pmf1) = binomial_window(bg.n1, e.p1, e.q1, &lnfact);
            let lo = lo0 + lo1;
            let len = pmf0.len() + pmf1.len() - 1;
            scratch[lo..lo + len].iter_mut().for_each(|x| *x = 0.0);
            for (a, &x) in pmf0.iter().enumerate() {
                for (b, &y) in pmf1.iter().enumerate() {
                    scratch[lo + a + b] += x * y;
                }
            }
            for k in lo..lo + len {
                let v = scratch[k];
                sum[k] += v;
                sumsq[k] += v * v;
            }
        }
        (sum, sumsq)
    });
    let mut sum = vec![0.0; m];
    let mut sumsq = vec![0.0; m];
    for (s, sq) in partials {
        for k in 0..m {
            sum[k] += s[k];
            sumsq[k] += sq[k];
        }
    }
    let n = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_err = mean
        .iter()
        .zip(&sumsq)
        .map(|(mu, sq)| ((sq / n - mu * mu).max(0.0) / n).sqrt())
        .collect();
    Ok(RankDistribution {
        probs: normalized(mean),
        method: RankMethod::MonteCarlo,
        integration_meta: IntegrationMeta {
            draws: Some(draws),
            seed: Some(seed),
            ..Default::default()
        },
        std_err: Some(std_err),
    })
}

/// Normal-approximation probabilities evaluated on `grid_size` ranks spread
/// evenly over [1, m] and filled in by monotone cubic interpolation.
pub fn rank_prob_grid(model: &RankModel, grid_size: usize) -> Result<RankDistribution> {
    model.validate()?;
    if grid_size < MIN_GRID_SIZE {
        return Err(CrwError::InvalidArgument(format!(
            "grid_size must be at least {MIN_GRID_SIZE}, got {grid_size}"
        )));
    }
    let m = model.m();
    if m <= grid_size {
        return rank_prob_normal_approx(model);
    }
    let quad = NormalQuadrature::for_tests(m);
    let (probs, grid_len) = grid_probs(&model.background(), quad, grid_size);
    Ok(RankDistribution {
        probs: normalized(probs),
        method: RankMethod::Grid,
        integration_meta: IntegrationMeta {
            nodes: Some(quad.nodes()),
            grid_size: Some(grid_len),
            approximation_warning: m < APPROX_MIN_TESTS,
            ..Default::default()
        },
        std_err: None,
    })
}

pub(crate) fn grid_probs(
    bg: &Background,
    quad: NormalQuadrature,
    grid_size: usize,
) -> (Vec<f64>, usize) {
    let m = bg.m();
    let ranks = grid_ranks(m, grid_size);
    let rule = Rule::normal_expectation(bg.tau_query, quad);
    let values = exec::chunked_sum(rule.len(), QUAD_CHUNK, ranks.len(), |j, acc| {
        let w = rule.weights[j];
        if w == 0.0 {
            return;
        }
        let (mean, var) = normal_moments(bg, rule.nodes[j]);
        let half = NORMAL_WINDOW_SD * var.sqrt() + 2.0;
        let start = ranks.partition_point(|&k| (k as f64) < mean - half);
        for (i, &k) in ranks.iter().enumerate().skip(start) {
            if k as f64 > mean + half {
                break;
            }
            acc[i] += w * normal_rank_density(k, mean, var);
        }
    });
    let xs: Vec<f64> = ranks.iter().map(|&k| k as f64).collect();
    let interp = Pchip::new(&xs, &values);
    let probs = (1..=m).map(|k| interp.eval(k as f64).max(0.0)).collect();
    (probs, ranks.len())
}

/// Rank probabilities for a background with an arbitrary query effect,
/// normalized to sum to one.
pub(crate) fn background_probs(bg: &Background, method: RankProbMethod) -> Result<Vec<f64>> {
    let m = bg.m();
    let quad = NormalQuadrature::for_tests(m);
    let probs = match method {
        RankProbMethod::Exact => {
            if m > EXACT_CAP {
                return Err(CrwError::Capacity { m, cap: EXACT_CAP });
            }
            exact_probs(bg, quad)
        }
        RankProbMethod::Approx => approx_probs(bg, quad),
        RankProbMethod::Grid { grid_size } if m > grid_size => grid_probs(bg, quad, grid_size).0,
        RankProbMethod::Grid { .. } => approx_probs(bg, quad),
        RankProbMethod::Mc { .. } => {
            return Err(CrwError::InvalidArgument(
                "Monte-Carlo mode is not available for arbitrary query effects".into(),
            ))
        }
    };
    Ok(normalized(probs))
}

/// Integer ranks spaced evenly on [1, m], endpoints included, deduplicated.
fn grid_ranks(m: usize, grid_size: usize) -> Vec<usize> {
    let step = (m - 1) as f64 / (grid_size - 1) as f64;
    let mut ranks: Vec<usize> = (0..grid_size)
        .map(|j| (1.0 + j as f64 * step).round() as usize)
        .collect();
    ranks.dedup();
    ranks
}

/// Fritsch–Carlson monotone piecewise-cubic Hermite interpolant.
struct Pchip<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    slopes: Vec<f64>,
}

impl<'a> Pchip<'a> {
    fn new(xs: &'a [f64], ys: &'a [f64]) -> Self {
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                slopes[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        slopes[0] = end_slope(h[0], h.get(1).copied().unwrap_or(h[0]), delta[0], delta.get(1).copied().unwrap_or(delta[0]));
        slopes[n - 1] = if n > 2 {
            end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3])
        } else {
            delta[0]
        };
        Pchip { xs, ys, slopes }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = self.xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (d0, d1) = (self.slopes[i], self.slopes[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * h * d1
    }
}

// Three-point end slope, limited to keep the end segment monotone.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}
