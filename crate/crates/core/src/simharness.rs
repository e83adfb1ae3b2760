//! Synthetic data, the dilution study and the power/FWER/FDR comparison.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibrate::{self, CalibrationConfig, EffectMode};
use crate::error::{CrwError, Result};
use crate::exec;
use crate::mtp::{self, ErrorMetrics, Procedure, ReplicateOutcome, TestRecord, Truth};
use crate::normal;
use crate::rankprob::{self, RankModel, RankProbMethod};
use crate::weights::{self, WeightConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectModel {
    /// Every alternative has effect `mu_eps`.
    PointMass,
    /// Alternative effects drawn from Normal(mu_eps, 1).
    Normal,
}

fn default_groups() -> usize {
    10
}

fn default_replicates() -> usize {
    100
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    pub pi0: f64,
    pub mu_eps: f64,
    pub effect_model: EffectModel,
    #[serde(default)]
    pub noise_cv: f64,
    #[serde(default = "default_groups")]
    pub n_groups: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    /// Equicorrelation of the test-statistic noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Rank-probability route for CRW calibration; automatic when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_method: Option<RankProbMethod>,
}

impl SimConfig {
    pub fn new(m: usize, pi0: f64, mu_eps: f64, effect_model: EffectModel, seed: u64) -> Self {
        SimConfig {
            m,
            pi0,
            mu_eps,
            effect_model,
            noise_cv: 0.0,
            n_groups: default_groups(),
            replicates: default_replicates(),
            alpha: default_alpha(),
            seed,
            rho: None,
            rank_method: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CrwError::InvalidArgument(msg));
        if self.m < 10 {
            return bad(format!("m must be at least 10, got {}", self.m));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.pi0) {
            return bad(format!("pi0 must lie in [0, 1], got {}", self.pi0));
        }
        if !self.mu_eps.is_finite() {
            return bad(format!("mu_eps must be finite, got {}", self.mu_eps));
        }
        if !(self.noise_cv >= 0.0 && self.noise_cv.is_finite()) {
            return bad(format!("noise_cv must be non-negative, got {}", self.noise_cv));
        }
        if self.n_groups == 0 || self.n_groups > self.m {
            return bad(format!("n_groups must lie in [1, m], got {}", self.n_groups));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if let Some(rho) = self.rho {
            if !(0.0..1.0).contains(&rho) {
                return bad(format!("rho must lie in [0, 1), got {rho}"));
            }
        }
        Ok(())
    }

    pub fn m0(&self) -> usize {
        ((self.m as f64 * self.pi0).round() as usize).min(self.m)
    }

    fn with_cell(&self, cell: &Cell) -> SimConfig {
        SimConfig { pi0: cell.pi0, mu_eps: cell.mu_eps, noise_cv: cell.noise_cv, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    /// Nulls first, then alternatives; ranks assigned.
    pub records: Vec<TestRecord>,
    pub truth: Vec<Truth>,
    pub test_effects: Vec<f64>,
    pub covariate_effects: Vec<f64>,
}

impl SimDataset {
    pub fn pvalues(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.pvalue).collect()
    }

    pub fn covariates(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.covariate).collect()
    }
}

pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One synthetic dataset; the RNG stream depends on (seed, replicate) only.
pub fn generate_dataset(cfg: &SimConfig, replicate: usize) -> Result<SimDataset> {
    cfg.validate()?;
    let mut rng = replicate_rng(cfg.seed, replicate);
    let m = cfg.m;
    let m0 = cfg.m0();

    let mut covariate_effects = vec![0.0; m];
    let mut test_effects = vec![0.0; m];
    for i in m0..m {
        let tau = match cfg.effect_model {
            EffectModel::PointMass => cfg.mu_eps,
            EffectModel::Normal => cfg.mu_eps + std_normal(&mut rng),
        };
        covariate_effects[i] = tau;
        test_effects[i] = noisy_effect(tau, cfg.noise_cv, &mut rng)?;
    }

    let shared = match cfg.rho {
        Some(rho) if rho > 0.0 => Some((rho.sqrt() * std_normal(&mut rng), (1.0 - rho).sqrt())),
        _ => None,
    };
    let mut records = Vec::with_capacity(m);
    for i in 0..m {
        let noise = match shared {
            Some((common, scale)) => common + scale * std_normal(&mut rng),
            None => std_normal(&mut rng),
        };
        let stat = test_effects[i] + noise;
        let cov = covariate_effects[i] + std_normal(&mut rng);
        let mut rec = TestRecord::new(format!("t{}", i + 1), normal::sf(stat), cov);
        rec.test_stat = Some(stat);
        rec.truth = Some(if i < m0 { Truth::Null } else { Truth::Alternative });
        records.push(rec);
    }
    mtp::rank_by_covariate(&mut records);
    let truth = (0..m).map(|i| if i < m0 { Truth::Null } else { Truth::Alternative }).collect();
    Ok(SimDataset { records, truth, test_effects, covariate_effects })
}

/// ε ~ Normal(τ, cv·τ) truncated to ε ≥ 0 by resampling; ε = τ when cv = 0.
fn noisy_effect(tau: f64, cv: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    if cv == 0.0 {
        return Ok(tau);
    }
    if tau <= 0.0 {
        return Ok(0.0);
    }
    let dist = Normal::new(tau, cv * tau).map_err(|e| CrwError::InvalidArgument(e.to_string()))?;
    loop {
        let e: f64 = dist.sample(rng);
        if e >= 0.0 {
            return Ok(e);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub pi0: f64,
    pub mu_eps: f64,
    #[serde(default)]
    pub noise_cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimGrid {
    pub pi0: Vec<f64>,
    pub mu_eps: Vec<f64>,
    #[serde(default = "default_cv_grid")]
    pub noise_cv: Vec<f64>,
}

fn default_cv_grid() -> Vec<f64> {
    vec![0.0]
}

impl SimGrid {
    /// Cells with π₀ outermost and noise CV innermost.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &pi0 in &self.pi0 {
            for &mu_eps in &self.mu_eps {
                for &noise_cv in &self.noise_cv {
                    out.push(Cell { pi0, mu_eps, noise_cv });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.pi0.is_empty() || self.mu_eps.is_empty() || self.noise_cv.is_empty() {
            return Err(CrwError::InvalidArgument("grid axes must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilutionRecord {
    pub pi0: f64,
    pub mu_eps: f64,
    pub top_frac: f64,
    pub top_frac_se: f64,
    pub top_mean_effect: f64,
    pub top_mean_effect_se: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Crw,
    /// CRW calibrated from the generating effects instead of the data.
    CrwOracle,
    Bh,
    Rdw,
    ExternalWeights,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Crw => "crw",
            Method::CrwOracle => "crw-oracle",
            Method::Bh => "bh",
            Method::Rdw => "rdw",
            Method::ExternalWeights => "external-weights",
        }
    }

    /// The (unweighted or weighted) Bonferroni and BH variants of this method.
    pub fn procedures(self) -> [Procedure; 2] {
        match self {
            Method::Bh => [Procedure::Bonferroni, Procedure::Bh],
            _ => [Procedure::WeightedBonferroni, Procedure::WeightedBh],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRecord {
    pub pi0: f64,
    pub mu_eps: f64,
    pub noise_cv: f64,
    pub method: Method,
    pub procedure: Procedure,
    pub metrics: ErrorMetrics,
    /// Replicates dropped because calibration failed.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimResult {
    pub config: Option<SimConfig>,
    pub dilution: Vec<DilutionRecord>,
    pub power: Vec<PowerRecord>,
}

impl SimResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("simulation result serializes")
    }

    pub fn dilution_csv(&self) -> String {
        let mut out = String::from("pi0,mu_eps,top_frac,top_mean_effect\n");
        for r in &self.dilution {
            out.push_str(&format!("{},{},{},{}\n", r.pi0, r.mu_eps, r.top_frac, r.top_mean_effect));
        }
        out
    }

    /// One row per cell, method, procedure and metric.
    pub fn power_csv(&self) -> String {
        let mut out = String::from("pi0,mu_eps,noise_cv,method,procedure,metric,value,se,replicates,excluded\n");
        for r in &self.power {
            let rows = [
                ("power", r.metrics.power, r.metrics.power_se),
                ("fwer", r.metrics.fwer, r.metrics.fwer_se),
                ("fdr", r.metrics.fdr, r.metrics.fdr_se),
            ];
            for (name, value, se) in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.pi0,
                    r.mu_eps,
                    r.noise_cv,
                    r.method.name(),
                    r.procedure.name(),
                    name,
                    value,
                    se,
                    r.metrics.replicates,
                    r.excluded
                ));
            }
        }
        out
    }

    pub fn find(&self, pi0: f64, mu_eps: f64, noise_cv: f64, method: Method, procedure: Procedure) -> Option<&PowerRecord> {
        self.power.iter().find(|r| {
            r.pi0 == pi0 && r.mu_eps == mu_eps && r.noise_cv == noise_cv && r.method == method && r.procedure == procedure
        })
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Top covariate group: alternative fraction and mean true test effect
/// (nulls count as 0).
fn top_group(data: &SimDataset, n_groups: usize) -> (f64, f64) {
    let size = data.records.len() / n_groups;
    let cov = data.covariates();
    let order = mtp::rank_order(&cov);
    let top = &order[..size];
    let alt = top.iter().filter(|&&i| data.truth[i] == Truth::Alternative).count();
    let effect: f64 = top.iter().map(|&i| data.test_effects[i]).sum();
    (alt as f64 / size as f64, effect / size as f64)
}

pub fn run_dilution_study(grid: &SimGrid, template: &SimConfig) -> Result<SimResult> {
    grid.validate()?;
    template.validate()?;
    if template.n_groups < 2 {
        return Err(CrwError::InvalidArgument("dilution study needs at least 2 groups".into()));
    }
    let mut records = Vec::new();
    for cell in grid.cells() {
        let cfg = template.with_cell(&cell);
        cfg.validate()?;
        let per_rep: Vec<Result<(f64, f64)>> = exec::map_range(cfg.replicates, |r| {
            let data = generate_dataset(&cfg, r)?;
            Ok(top_group(&data, cfg.n_groups))
        });
        let per_rep: Vec<(f64, f64)> = per_rep.into_iter().collect::<Result<_>>()?;
        let fracs: Vec<f64> = per_rep.iter().map(|x| x.0).collect();
        let effects: Vec<f64> = per_rep.iter().map(|x| x.1).collect();
        let (top_frac, top_frac_se) = mean_se(&fracs);
        let (top_mean_effect, top_mean_effect_se) = mean_se(&effects);
        records.push(DilutionRecord {
            pi0: cell.pi0,
            mu_eps: cell.mu_eps,
            top_frac,
            top_frac_se,
            top_mean_effect,
            top_mean_effect_se,
            replicates: cfg.replicates,
        });
    }
    Ok(SimResult { config: Some(template.clone()), dilution: records, power: Vec::new() })
}

/// Per-test weights supplied by an outside tool, keyed by grid cell index and
/// replicate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalWeights {
    entries: BTreeMap<(usize, usize), BTreeMap<usize, f64>>,
}

impl ExternalWeights {
    pub fn insert(&mut self, cell: usize, replicate: usize, test: usize, weight: f64) {
        self.entries.entry((cell, replicate)).or_default().insert(test, weight);
    }

    /// Weights for one dataset, rescaled to mean 1; `None` when incomplete.
    pub fn get(&self, cell: usize, replicate: usize, m: usize) -> Option<Vec<f64>> {
        let map = self.entries.get(&(cell, replicate))?;
        if map.len() != m || map.keys().next_back() != Some(&(m - 1)) {
            return None;
        }
        let w: Vec<f64> = map.values().copied().collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return None;
        }
        Some(w.iter().map(|x| x * m as f64 / total).collect())
    }
}

/// RDW per-test weights from covariate groups, each group's effect taken as the
/// mean of max(0, test statistic) within it.
pub fn rdw_group_weights(records: &[TestRecord], n_groups: usize, alpha: f64) -> Result<Vec<f64>> {
    let m = records.len();
    let cov: Vec<f64> = records.iter().map(|r| r.covariate).collect();
    let order = mtp::rank_order(&cov);
    let mut effects = vec![0.0; m];
    for g in 0..n_groups {
        let lo = g * m / n_groups;
        let hi = (g + 1) * m / n_groups;
        let members = &order[lo..hi];
        let mean = members
            .iter()
            .map(|&i| records[i].test_stat.unwrap_or_else(|| normal::upper_quantile(records[i].pvalue)).max(0.0))
            .sum::<f64>()
            / members.len() as f64;
        for &i in members {
            effects[i] = mean;
        }
    }
    match weights::rdw_weights(&effects, alpha) {
        Ok(w) => Ok(w.weights),
        Err(CrwError::Degenerate(_)) => Ok(vec![1.0; m]),
        Err(e) => Err(e),
    }
}

/// CRW weights at the true alternative count, with E(ε | ε > 0) and the
/// matching mean covariate effect taken from the generating effects.
pub fn oracle_crw_weights(data: &SimDataset, cfg: &SimConfig) -> Result<Vec<f64>> {
    let m = data.records.len();
    let alt: Vec<usize> = (0..m).filter(|&i| data.truth[i] == Truth::Alternative).collect();
    let positive: Vec<usize> = alt.iter().copied().filter(|&i| data.test_effects[i] > 0.0).collect();
    if positive.is_empty() {
        return Ok(vec![1.0; m]);
    }
    let n = positive.len() as f64;
    let effect = positive.iter().map(|&i| data.test_effects[i]).sum::<f64>() / n;
    let tau = positive.iter().map(|&i| data.covariate_effects[i]).sum::<f64>() / n;
    if !(tau > 0.0) {
        return Ok(vec![1.0; m]);
    }
    let model = RankModel::alt_query(m - alt.len(), alt.len(), tau)?;
    let dist = rankprob::rank_prob(&model, cfg.rank_method.unwrap_or_else(|| RankProbMethod::auto(m)))?;
    let wcfg = WeightConfig::continuous(m, cfg.alpha, effect)?;
    let (w, _) = weights::crw_weights(&dist, &wcfg)?;
    mtp::weights_by_rank(&data.records, &w.weights)
}

fn calibration_config(cfg: &SimConfig) -> CalibrationConfig {
    CalibrationConfig { alpha: cfg.alpha, mode: EffectMode::Continuous, rank_method: cfg.rank_method, ..Default::default() }
}

/// Per-test weights of each method for one dataset; `None` marks a failed
/// calibration.
fn method_weights(
    data: &SimDataset,
    cfg: &SimConfig,
    method: Method,
    cell: usize,
    replicate: usize,
    external: Option<&ExternalWeights>,
) -> Result<Option<Vec<f64>>> {
    let m = data.records.len();
    match method {
        Method::Bh => Ok(Some(vec![1.0; m])),
        Method::Crw => {
            match calibrate::calibrate(&data.pvalues(), &data.covariates(), &calibration_config(cfg)) {
                Ok(cal) => Ok(Some(mtp::weights_by_rank(&data.records, &cal.weights.weights)?)),
                Err(e) if e.is_solver_failure() || matches!(e, CrwError::Degenerate(_)) => Ok(None),
                Err(e) => Err(e),
            }
        }
        Method::CrwOracle => match oracle_crw_weights(data, cfg) {
            Ok(w) => Ok(Some(w)),
            Err(e) if e.is_solver_failure() => Ok(None),
            Err(e) => Err(e),
        },
        Method::Rdw => Ok(Some(rdw_group_weights(&data.records, cfg.n_groups, cfg.alpha)?)),
        Method::ExternalWeights => Ok(external.and_then(|x| x.get(cell, replicate, m))),
    }
}

type ReplicateRow = Option<Vec<ReplicateOutcome>>;

fn run_replicate(
    cfg: &SimConfig,
    methods: &[Method],
    cell: usize,
    replicate: usize,
    external: Option<&ExternalWeights>,
) -> Result<ReplicateRow> {
    let data = generate_dataset(cfg, replicate)?;
    let p = data.pvalues();
    let mut row = Vec::with_capacity(methods.len() * 2);
    for &method in methods {
        let Some(w) = method_weights(&data, cfg, method, cell, replicate, external)? else {
            return Ok(None);
        };
        for procedure in method.procedures() {
            let rejected = if procedure.is_step_up() {
                mtp::bh_rejections(&p, &w, cfg.alpha)?
            } else {
                mtp::bonferroni_rejections(&p, &w, cfg.alpha)?
            };
            row.push(mtp::replicate_outcome(&rejected, &data.truth)?);
        }
    }
    Ok(Some(row))
}

pub fn run_power_comparison(
    grid: &SimGrid,
    methods: &[Method],
    template: &SimConfig,
    external: Option<&ExternalWeights>,
) -> Result<SimResult> {
    grid.validate()?;
    template.validate()?;
    if methods.is_empty() {
        return Err(CrwError::InvalidArgument("no methods selected".into()));
    }
    if methods.contains(&Method::ExternalWeights) && external.is_none() {
        return Err(CrwError::InvalidArgument("external-weights method needs a weights file".into()));
    }
    let mut records = Vec::new();
    for (ci, cell) in grid.cells().iter().enumerate() {
        let cfg = template.with_cell(cell);
        cfg.validate()?;
        let rows: Vec<Result<ReplicateRow>> =
            exec::map_range(cfg.replicates, |r| run_replicate(&cfg, methods, ci, r, external));
        let rows: Vec<ReplicateRow> = rows.into_iter().collect::<Result<_>>()?;
        let excluded = rows.iter().filter(|r| r.is_none()).count();
        let kept: Vec<&Vec<ReplicateOutcome>> = rows.iter().flatten().collect();
        let mut col = 0;
        for &method in methods {
            for procedure in method.procedures() {
                let outcomes: Vec<ReplicateOutcome> = kept.iter().map(|row| row[col]).collect();
                records.push(PowerRecord {
                    pi0: cell.pi0,
                    mu_eps: cell.mu_eps,
                    noise_cv: cell.noise_cv,
                    method,
                    procedure,
                    metrics: mtp::summarize(&outcomes),
                    excluded,
                });
                col += 1;
            }
        }
    }
    Ok(SimResult { config: Some(template.clone()), dilution: Vec::new(), power: records })
}

/// Columns `cell,replicate,test,pvalue,covariate,test_stat` for a dataset, the
/// layout an outside weighting tool reads back against.
pub fn dataset_csv(data: &SimDataset, cell: usize, replicate: usize) -> String {
    let mut out = String::from("cell,replicate,test,pvalue,covariate,test_stat\n");
    for (i, r) in data.records.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell,
            replicate,
            i,
            r.pvalue,
            r.covariate,
            r.test_stat.unwrap_or(f64::NAN)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_deterministic() {
        let cfg = SimConfig::new(500, 0.8, 2.0, EffectModel::Normal, 5);
        let a = generate_dataset(&cfg, 3).unwrap();
        let b = generate_dataset(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&cfg, 4).unwrap();
        assert_ne!(a.records[0].pvalue, c.records[0].pvalue);
    }

    #[test]
    fn all_null_dataset() {
        let cfg = SimConfig::new(200, 1.0, 2.0, EffectModel::PointMass, 1);
        let d = generate_dataset(&cfg, 0).unwrap();
        assert!(d.truth.iter().all(|&t| t == Truth::Null));
        assert!(d.test_effects.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn noisy_effects_are_nonnegative() {
        let mut cfg = SimConfig::new(1000, 0.0, 1.0, EffectModel::Normal, 2);
        cfg.noise_cv = 0.5;
        let d = generate_dataset(&cfg, 0).unwrap();
        assert!(d.test_effects.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn external_weights_need_full_coverage() {
        let mut ext = ExternalWeights::default();
        ext.insert(0, 0, 0, 2.0);
        ext.insert(0, 0, 1, 6.0);
        assert_eq!(ext.get(0, 0, 2), Some(vec![0.5, 1.5]));
        assert_eq!(ext.get(0, 0, 3), None);
        assert_eq!(ext.get(0, 1, 2), None);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::new(5, 0.5, 1.0, EffectModel::PointMass, 0);
        assert!(cfg.validate().is_err());
        cfg.m = 100;
        cfg.validate().unwrap();
        cfg.rho = Some(1.0);
        assert!(cfg.validate().is_err());
    }
}
