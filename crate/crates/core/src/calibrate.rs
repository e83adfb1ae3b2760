//! Data-only CRW calibration: p-values and covariates in, rank weights out.

use serde::{Deserialize, Serialize};

use crate::error::{CrwError, Result};
use crate::estimation::{self, EffectEstimate, RegressionFit};
use crate::rankprob::{self, RankDistribution, RankModel, RankProbMethod};
use crate::weights::{self, DeltaSolution, WeightConfig, WeightVector};

/// Below this many estimated alternatives the regression is not attempted.
pub const MIN_ALTERNATIVES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectMode {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub mode: EffectMode,
    /// `None` picks [`RankProbMethod::auto`].
    pub rank_method: Option<RankProbMethod>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            alpha: 0.05,
            lambda: estimation::DEFAULT_LAMBDA,
            mode: EffectMode::Continuous,
            rank_method: None,
        }
    }
}

/// Why calibration settled on unit weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    ConstantCovariate,
    TooFewAlternatives,
    NoCovariateSignal,
    NoTestEffect,
}

impl Fallback {
    pub fn describe(self) -> &'static str {
        match self {
            Fallback::ConstantCovariate => "covariate is constant; unit weights",
            Fallback::TooFewAlternatives => "fewer than 3 estimated alternatives; unit weights",
            Fallback::NoCovariateSignal => "fitted covariate effect is not positive; unit weights",
            Fallback::NoTestEffect => "estimated mean test effect is not positive; unit weights",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub estimate: EffectEstimate,
    pub regression: Option<RegressionFit>,
    pub rank_dist: Option<RankDistribution>,
    pub weight_config: Option<WeightConfig>,
    pub weights: WeightVector,
    pub delta: Option<DeltaSolution>,
    pub fallback: Option<Fallback>,
}

impl Calibration {
    /// Rank weights at another α, reusing the rank distribution.
    pub fn weights_at(&self, alpha: f64) -> Result<(WeightVector, Option<DeltaSolution>)> {
        match (&self.rank_dist, &self.weight_config) {
            (Some(dist), Some(cfg)) => {
                let cfg = WeightConfig { alpha, ..*cfg };
                cfg.validate()?;
                let (w, d) = weights::crw_weights(dist, &cfg)?;
                Ok((w, Some(d)))
            }
            _ => Ok((WeightVector::uniform(self.weights.len()), None)),
        }
    }
}

fn empty_estimate(m: usize) -> EffectEstimate {
    EffectEstimate {
        pi0_hat: 1.0,
        m0_hat: m,
        m1_hat: 0,
        eps_hat: vec![0.0; m],
        top: Vec::new(),
        mean_alt_effect: 0.0,
        power_hat: vec![0.0; m],
    }
}

/// π̂₀ → effect estimates → covariate regression → rank distribution at the
/// fitted covariate effect → CRW weights.
pub fn calibrate(pvalues: &[f64], covariates: &[f64], cfg: &CalibrationConfig) -> Result<Calibration> {
    let m = pvalues.len();
    if covariates.len() != m {
        return Err(CrwError::LengthMismatch { expected: m, got: covariates.len() });
    }
    if let Some((i, c)) = covariates.iter().enumerate().find(|(_, c)| !c.is_finite()) {
        return Err(CrwError::NonFinite(format!("covariate {c} at index {i}")));
    }
    let pi0 = estimation::estimate_pi0(pvalues, cfg.lambda)?;
    let m1_hat = estimation::m1_from_pi0(m, pi0);

    let uniform = |estimate: EffectEstimate, regression, fallback| Calibration {
        estimate,
        regression,
        rank_dist: None,
        weight_config: None,
        weights: WeightVector::uniform(m),
        delta: None,
        fallback: Some(fallback),
    };

    if covariates.iter().all(|&c| c == covariates[0]) {
        let est = if m1_hat == 0 { empty_estimate(m) } else { with_power(pvalues, m1_hat, cfg.alpha)? };
        return Ok(uniform(est, None, Fallback::ConstantCovariate));
    }
    if m1_hat < MIN_ALTERNATIVES {
        let est = if m1_hat == 0 { empty_estimate(m) } else { with_power(pvalues, m1_hat, cfg.alpha)? };
        return Ok(uniform(est, None, Fallback::TooFewAlternatives));
    }

    let mut estimate = with_power(pvalues, m1_hat, cfg.alpha)?;
    estimate.pi0_hat = pi0;
    if estimate.mean_alt_effect <= 0.0 {
        return Ok(uniform(estimate, None, Fallback::NoTestEffect));
    }
    let tau_hat = estimation::estimate_covariate_effects(covariates, m1_hat);
    let x: Vec<f64> = estimate.top.iter().map(|&i| estimate.eps_hat[i]).collect();
    let y: Vec<f64> = estimate.top.iter().map(|&i| tau_hat[i]).collect();
    let fit = estimation::fit_covariate_regression(&x, &y, estimate.mean_alt_effect)?;
    if !(fit.tau_at_mean > 0.0) {
        return Ok(uniform(estimate, Some(fit), Fallback::NoCovariateSignal));
    }

    let model = RankModel::alt_query(m - m1_hat, m1_hat, fit.tau_at_mean)?;
    let method = cfg.rank_method.unwrap_or_else(|| RankProbMethod::auto(m));
    let dist = rankprob::rank_prob(&model, method)?;
    let wcfg = match cfg.mode {
        EffectMode::Continuous => WeightConfig::continuous(m, cfg.alpha, estimate.mean_alt_effect)?,
        EffectMode::Binary => WeightConfig::binary(m, cfg.alpha, estimate.mean_alt_effect, m1_hat)?,
    };
    let (w, delta) = weights::crw_weights(&dist, &wcfg)?;
    Ok(Calibration {
        estimate,
        regression: Some(fit),
        rank_dist: Some(dist),
        weight_config: Some(wcfg),
        weights: w,
        delta: Some(delta),
        fallback: None,
    })
}

fn with_power(pvalues: &[f64], m1_hat: usize, alpha: f64) -> Result<EffectEstimate> {
    let mut est = estimation::estimate_effects(pvalues, m1_hat)?;
    est.power_hat = estimation::posthoc_power(&est, alpha);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn synthetic(m: usize, m1: usize, eps: f64, tau: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::with_capacity(m);
        let mut c = Vec::with_capacity(m);
        for i in 0..m {
            let alt = i >= m - m1;
            let z: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            p.push(normal::sf(z + if alt { eps } else { 0.0 }));
            c.push(y + if alt { tau } else { 0.0 });
        }
        (p, c)
    }

    #[test]
    fn informative_covariate_gives_decreasing_weights() {
        let (p, c) = synthetic(5000, 500, 3.0, 2.0, 1);
        let cal = calibrate(&p, &c, &CalibrationConfig::default()).unwrap();
        assert!(cal.fallback.is_none());
        let w = &cal.weights.weights;
        assert!((cal.weights.mean() - 1.0).abs() < 1e-6);
        assert!(w[0] > 1.0 && w[0] > w[w.len() - 1]);
        let fit = cal.regression.unwrap();
        assert!(fit.tau_at_mean > 0.0);
    }

    #[test]
    fn constant_covariate_is_uniform() {
        let (p, _) = synthetic(1000, 100, 3.0, 2.0, 2);
        let cal = calibrate(&p, &vec![0.5; 1000], &CalibrationConfig::default()).unwrap();
        assert_eq!(cal.fallback, Some(Fallback::ConstantCovariate));
        assert!(cal.weights.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn null_data_falls_back() {
        let (p, c) = synthetic(2000, 0, 0.0, 0.0, 3);
        let cal = calibrate(&p, &c, &CalibrationConfig::default()).unwrap();
        assert!(cal.weights.weights.iter().all(|w| w.is_finite()));
        assert!((cal.weights.mean() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weights_at_other_alpha_stay_normalized() {
        let (p, c) = synthetic(3000, 300, 2.5, 1.5, 4);
        let cal = calibrate(&p, &c, &CalibrationConfig::default()).unwrap();
        let (w, d) = cal.weights_at(0.01).unwrap();
        assert!(d.is_some());
        assert!((w.mean() - 1.0).abs() < 1e-6);
    }
}
