//! Calibration from data: null proportion, effect sizes, post-hoc power and the
//! linear link between test effects and covariate effects.

use serde::{Deserialize, Serialize};

use crate::error::{CrwError, Result};
use crate::normal;

pub const DEFAULT_LAMBDA: f64 = 0.5;
/// Smallest p-value used when inverting to an effect size.
pub const P_FLOOR: f64 = 1e-15;

/// Storey's tail estimate π̂₀ = min(1, #{p > λ} / (m(1 − λ))).
pub fn estimate_pi0(pvalues: &[f64], lambda: f64) -> Result<f64> {
    if pvalues.is_empty() {
        return Err(CrwError::InvalidArgument("no p-values".into()));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(CrwError::InvalidArgument(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    check_pvalues(pvalues)?;
    let above = pvalues.iter().filter(|&&p| p > lambda).count() as f64;
    Ok((above / (pvalues.len() as f64 * (1.0 - lambda))).min(1.0))
}

/// m̂₁ = round(m·(1 − π̂₀)).
pub fn m1_from_pi0(m: usize, pi0: f64) -> usize {
    ((m as f64 * (1.0 - pi0)).round() as usize).min(m)
}

fn check_pvalues(pvalues: &[f64]) -> Result<()> {
    if let Some((i, p)) = pvalues.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(CrwError::InvalidArgument(format!("p-value {p} at index {i} is outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub pi0_hat: f64,
    pub m0_hat: usize,
    pub m1_hat: usize,
    /// Per-test effect estimates; zero outside the estimated alternatives.
    pub eps_hat: Vec<f64>,
    /// Indices of the m̂₁ smallest p-values, most significant first.
    pub top: Vec<usize>,
    /// E(ε | ε > 0) estimate: the mean of `eps_hat` over `top`.
    pub mean_alt_effect: f64,
    /// Post-hoc power per test, filled by [`posthoc_power`].
    #[serde(default)]
    pub power_hat: Vec<f64>,
}

/// Indices sorted by ascending p-value, ties kept in input order.
fn by_pvalue(pvalues: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pvalues.len()).collect();
    idx.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    idx
}

/// One-sided normal inversion ε̂ = max(0, Φ̄⁻¹(p)) for the `m1_hat` smallest
/// p-values; every other test gets ε̂ = 0.
pub fn estimate_effects(pvalues: &[f64], m1_hat: usize) -> Result<EffectEstimate> {
    let m = pvalues.len();
    if m1_hat == 0 || m1_hat > m {
        return Err(CrwError::InvalidArgument(format!("m1_hat must lie in [1, {m}], got {m1_hat}")));
    }
    check_pvalues(pvalues)?;
    let top: Vec<usize> = by_pvalue(pvalues).into_iter().take(m1_hat).collect();
    let mut eps_hat = vec![0.0; m];
    for &i in &top {
        eps_hat[i] = effect_from_pvalue(pvalues[i]);
    }
    let mean_alt_effect = top.iter().map(|&i| eps_hat[i]).sum::<f64>() / m1_hat as f64;
    Ok(EffectEstimate {
        pi0_hat: (m - m1_hat) as f64 / m as f64,
        m0_hat: m - m1_hat,
        m1_hat,
        eps_hat,
        top,
        mean_alt_effect,
        power_hat: Vec::new(),
    })
}

pub fn effect_from_pvalue(p: f64) -> f64 {
    normal::upper_quantile(p.max(P_FLOOR)).max(0.0)
}

/// Bonferroni-level post-hoc power Φ̄(z_{α/m} − ε̂) for the estimated
/// alternatives, 0 elsewhere.
pub fn posthoc_power(estimate: &EffectEstimate, alpha: f64) -> Vec<f64> {
    let m = estimate.eps_hat.len();
    let z = normal::upper_quantile(alpha / m as f64);
    let mut power = vec![0.0; m];
    for &i in &estimate.top {
        power[i] = normal::sf(z - estimate.eps_hat[i]);
    }
    power
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub intercept: f64,
    pub slope: f64,
    pub residual_sd: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    /// Fitted covariate effect at the mean alternative test effect.
    pub tau_at_mean: f64,
    pub n: usize,
}

/// Ordinary least squares of covariate effects on test effects.
pub fn fit_covariate_regression(
    test_effects: &[f64],
    covariate_effects: &[f64],
    mean_alt_effect: f64,
) -> Result<RegressionFit> {
    let n = test_effects.len();
    if n != covariate_effects.len() {
        return Err(CrwError::LengthMismatch { expected: n, got: covariate_effects.len() });
    }
    if n < 3 {
        return Err(CrwError::InvalidArgument(format!("regression needs at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = test_effects.iter().sum::<f64>() / nf;
    let my = covariate_effects.iter().sum::<f64>() / nf;
    let sxx: f64 = test_effects.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = test_effects.iter().zip(covariate_effects).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= f64::EPSILON * nf * (1.0 + mx * mx) {
        return Err(CrwError::Degenerate("test effects have zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = test_effects
        .iter()
        .zip(covariate_effects)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let residual_sd = (ssr / (nf - 2.0)).sqrt();
    let slope_se = residual_sd / sxx.sqrt();
    let intercept_se = residual_sd * (1.0 / nf + mx * mx / sxx).sqrt();
    Ok(RegressionFit {
        intercept,
        slope,
        residual_sd,
        intercept_se,
        slope_se,
        tau_at_mean: intercept + slope * mean_alt_effect,
        n,
    })
}

/// Covariate effect estimates τ̂ = max(0, covariate) for the `m1_hat` largest
/// covariates, 0 elsewhere.
pub fn estimate_covariate_effects(covariate_stats: &[f64], m1_hat: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..covariate_stats.len()).collect();
    idx.sort_by(|&a, &b| covariate_stats[b].total_cmp(&covariate_stats[a]));
    let mut out = vec![0.0; covariate_stats.len()];
    for &i in idx.iter().take(m1_hat) {
        out[i] = covariate_stats[i].max(0.0);
    }
    out
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Summary written to run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub pi0_hat: f64,
    pub m1_hat: usize,
    pub mean_alt_effect: f64,
    pub tau_at_mean: Option<f64>,
    pub power_median: f64,
    pub power_q90: f64,
    /// Post-hoc power is known to run high; it is reported uncorrected.
    pub power_note: String,
}

impl EffectReport {
    pub fn new(estimate: &EffectEstimate, fit: Option<&RegressionFit>) -> Self {
        let top_power: Vec<f64> = estimate
            .top
            .iter()
            .filter_map(|&i| estimate.power_hat.get(i).copied())
            .collect();
        EffectReport {
            pi0_hat: estimate.pi0_hat,
            m1_hat: estimate.m1_hat,
            mean_alt_effect: estimate.mean_alt_effect,
            tau_at_mean: fit.map(|f| f.tau_at_mean),
            power_median: quantile(&top_power, 0.5),
            power_q90: quantile(&top_power, 0.9),
            power_note: "post-hoc power from estimated effects overestimates true power".into(),
        }
    }
}
