//! Decision procedures and error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{CrwError, Result};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Null,
    Alternative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub id: String,
    pub pvalue: f64,
    pub covariate: f64,
    pub test_stat: Option<f64>,
    /// Covariate rank, 1 = largest covariate; 0 until ranked.
    pub rank: usize,
    pub truth: Option<Truth>,
}

impl TestRecord {
    pub fn new(id: impl Into<String>, pvalue: f64, covariate: f64) -> Self {
        TestRecord { id: id.into(), pvalue, covariate, test_stat: None, rank: 0, truth: None }
    }
}

/// Positions of `covariates` in rank order: largest first, ties in input order.
pub fn rank_order(covariates: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..covariates.len()).collect();
    idx.sort_by(|&a, &b| covariates[b].total_cmp(&covariates[a]));
    idx
}

/// Rank (1-based) of each input position.
pub fn covariate_ranks(covariates: &[f64]) -> Vec<usize> {
    let mut ranks = vec![0; covariates.len()];
    for (r, i) in rank_order(covariates).into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

pub fn rank_by_covariate(records: &mut [TestRecord]) {
    let cov: Vec<f64> = records.iter().map(|r| r.covariate).collect();
    for (rec, rank) in records.iter_mut().zip(covariate_ranks(&cov)) {
        rec.rank = rank;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    Bonferroni,
    WeightedBonferroni,
    Bh,
    WeightedBh,
}

impl Procedure {
    pub fn name(self) -> &'static str {
        match self {
            Procedure::Bonferroni => "bonferroni",
            Procedure::WeightedBonferroni => "weighted-bonferroni",
            Procedure::Bh => "bh",
            Procedure::WeightedBh => "weighted-bh",
        }
    }

    pub fn is_step_up(self) -> bool {
        matches!(self, Procedure::Bh | Procedure::WeightedBh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub method: Procedure,
    pub alpha: f64,
    /// Record positions rejected, ascending.
    pub rejected: Vec<usize>,
    pub n_rejections: usize,
    pub weights_used: bool,
}

impl DecisionReport {
    fn new(method: Procedure, alpha: f64, rejected: Vec<usize>, weights_used: bool) -> Self {
        DecisionReport { method, alpha, n_rejections: rejected.len(), rejected, weights_used }
    }

    pub fn rejected_mask(&self, m: usize) -> Vec<bool> {
        let mut mask = vec![false; m];
        for &i in &self.rejected {
            mask[i] = true;
        }
        mask
    }

    /// Columns `id,pvalue,weight,weighted_p,rejected`, one row per record.
    pub fn to_csv(&self, records: &[TestRecord], per_test_weights: &[f64]) -> String {
        let mask = self.rejected_mask(records.len());
        let mut out = String::from("id,pvalue,weight,weighted_p,rejected\n");
        for (i, rec) in records.iter().enumerate() {
            let w = per_test_weights.get(i).copied().unwrap_or(1.0);
            let q = weighted_pvalue(rec.pvalue, w);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&rec.id),
                rec.pvalue,
                w,
                if q.is_finite() { q.to_string() } else { "inf".into() },
                u8::from(mask[i])
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// p/w, with w = 0 mapped to +∞.
pub fn weighted_pvalue(p: f64, w: f64) -> f64 {
    if w > 0.0 {
        p / w
    } else {
        f64::INFINITY
    }
}

fn check_inputs(pvalues: &[f64], weights: &[f64], alpha: f64) -> Result<()> {
    if pvalues.len() != weights.len() {
        return Err(CrwError::LengthMismatch { expected: pvalues.len(), got: weights.len() });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CrwError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some((i, p)) = pvalues.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(CrwError::InvalidArgument(format!("p-value {p} at index {i} is outside [0, 1]")));
    }
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
        return Err(CrwError::InvalidArgument(format!("weight {w} at index {i} is not a finite non-negative value")));
    }
    Ok(())
}

/// Rejects i iff pᵢ/wᵢ ≤ α/m. Weights are per test, aligned with `pvalues`.
pub fn bonferroni_rejections(pvalues: &[f64], weights: &[f64], alpha: f64) -> Result<Vec<usize>> {
    check_inputs(pvalues, weights, alpha)?;
    let threshold = alpha / pvalues.len() as f64;
    Ok((0..pvalues.len())
        .filter(|&i| weights[i] > 0.0 && pvalues[i] <= threshold * weights[i])
        .collect())
}

/// Benjamini–Hochberg step-up on qᵢ = pᵢ/wᵢ.
pub fn bh_rejections(pvalues: &[f64], weights: &[f64], alpha: f64) -> Result<Vec<usize>> {
    check_inputs(pvalues, weights, alpha)?;
    let m = pvalues.len();
    let q: Vec<f64> = pvalues.iter().zip(weights).map(|(&p, &w)| weighted_pvalue(p, w)).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| q[a].total_cmp(&q[b]));
    let mf = m as f64;
    let Some(j) = (0..m).rev().find(|&j| q[order[j]] <= (j + 1) as f64 * alpha / mf) else {
        return Ok(Vec::new());
    };
    let cutoff = q[order[j]];
    Ok((0..m).filter(|&i| q[i] <= cutoff).collect())
}

/// Per-record weights looked up by covariate rank.
pub fn weights_by_rank(records: &[TestRecord], rank_weights: &[f64]) -> Result<Vec<f64>> {
    if records.len() != rank_weights.len() {
        return Err(CrwError::LengthMismatch { expected: records.len(), got: rank_weights.len() });
    }
    records
        .iter()
        .map(|r| {
            if r.rank == 0 || r.rank > rank_weights.len() {
                Err(CrwError::InvalidArgument(format!("record {} has no valid covariate rank", r.id)))
            } else {
                Ok(rank_weights[r.rank - 1])
            }
        })
        .collect()
}

fn pvalues(records: &[TestRecord]) -> Vec<f64> {
    records.iter().map(|r| r.pvalue).collect()
}

/// Weighted Bonferroni; `rank_weights[k-1]` is the weight for covariate rank k.
pub fn weighted_bonferroni(records: &[TestRecord], rank_weights: &[f64], alpha: f64) -> Result<DecisionReport> {
    let w = weights_by_rank(records, rank_weights)?;
    let rejected = bonferroni_rejections(&pvalues(records), &w, alpha)?;
    Ok(DecisionReport::new(Procedure::WeightedBonferroni, alpha, rejected, true))
}

/// Weighted BH; `rank_weights[k-1]` is the weight for covariate rank k.
pub fn weighted_bh(records: &[TestRecord], rank_weights: &[f64], alpha: f64) -> Result<DecisionReport> {
    let w = weights_by_rank(records, rank_weights)?;
    let rejected = bh_rejections(&pvalues(records), &w, alpha)?;
    Ok(DecisionReport::new(Procedure::WeightedBh, alpha, rejected, true))
}

pub fn plain_bonferroni(records: &[TestRecord], alpha: f64) -> Result<DecisionReport> {
    let rejected = bonferroni_rejections(&pvalues(records), &vec![1.0; records.len()], alpha)?;
    Ok(DecisionReport::new(Procedure::Bonferroni, alpha, rejected, false))
}

pub fn plain_bh(records: &[TestRecord], alpha: f64) -> Result<DecisionReport> {
    let rejected = bh_rejections(&pvalues(records), &vec![1.0; records.len()], alpha)?;
    Ok(DecisionReport::new(Procedure::Bh, alpha, rejected, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub power: f64,
    pub fwer: f64,
    pub fdr: f64,
    pub replicates: usize,
    pub power_se: f64,
    pub fwer_se: f64,
    pub fdr_se: f64,
}

/// Outcome of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub power: f64,
    pub any_false: bool,
    pub fdp: f64,
}

pub fn replicate_outcome(rejected: &[usize], truth: &[Truth]) -> Result<ReplicateOutcome> {
    let m1 = truth.iter().filter(|&&t| t == Truth::Alternative).count();
    let mut true_rej = 0usize;
    let mut false_rej = 0usize;
    for &i in rejected {
        match truth.get(i) {
            Some(Truth::Alternative) => true_rej += 1,
            Some(Truth::Null) => false_rej += 1,
            None => return Err(CrwError::LengthMismatch { expected: truth.len(), got: i + 1 }),
        }
    }
    Ok(ReplicateOutcome {
        power: if m1 == 0 { 0.0 } else { true_rej as f64 / m1 as f64 },
        any_false: false_rej > 0,
        fdp: false_rej as f64 / rejected.len().max(1) as f64,
    })
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

/// Summaries over replicate outcomes, reduced in input order.
pub fn summarize(outcomes: &[ReplicateOutcome]) -> ErrorMetrics {
    if outcomes.is_empty() {
        return ErrorMetrics { power: 0.0, fwer: 0.0, fdr: 0.0, replicates: 0, power_se: 0.0, fwer_se: 0.0, fdr_se: 0.0 };
    }
    let power: Vec<f64> = outcomes.iter().map(|o| o.power).collect();
    let fw: Vec<f64> = outcomes.iter().map(|o| f64::from(u8::from(o.any_false))).collect();
    let fdp: Vec<f64> = outcomes.iter().map(|o| o.fdp).collect();
    let (power, power_se) = mean_se(&power);
    let (fwer, fwer_se) = mean_se(&fw);
    let (fdr, fdr_se) = mean_se(&fdp);
    ErrorMetrics { power, fwer, fdr, replicates: outcomes.len(), power_se, fwer_se, fdr_se }
}

/// `truths[r][i]` labels record i in replicate r; `None` entries are missing labels.
pub fn compute_metrics(reports: &[DecisionReport], truths: &[Vec<Option<Truth>>]) -> Result<ErrorMetrics> {
    if reports.len() != truths.len() {
        return Err(CrwError::LengthMismatch { expected: reports.len(), got: truths.len() });
    }
    let outcomes: Vec<Result<ReplicateOutcome>> = exec::map_range(reports.len(), |r| {
        let labels: Option<Vec<Truth>> = truths[r].iter().copied().collect();
        let labels = labels.ok_or_else(|| CrwError::MissingLabels(format!("replicate {r} has unlabeled tests")))?;
        replicate_outcome(&reports[r].rejected, &labels)
    });
    let outcomes: Vec<ReplicateOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    Ok(summarize(&outcomes))
}

/// Truth labels of a record collection.
pub fn truths_of(records: &[TestRecord]) -> Vec<Option<Truth>> {
    records.iter().map(|r| r.truth).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(p: &[f64], cov: &[f64]) -> Vec<TestRecord> {
        let mut recs: Vec<TestRecord> =
            p.iter().zip(cov).enumerate().map(|(i, (&p, &c))| TestRecord::new(format!("t{i}"), p, c)).collect();
        rank_by_covariate(&mut recs);
        recs
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(covariate_ranks(&[0.1, 3.0, 1.2]), vec![3, 1, 2]);
        assert_eq!(covariate_ranks(&[2.0; 5]), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn weighted_bonferroni_example() {
        let p = [0.02, 0.2, 0.3, 0.4];
        let w = [3.0, 0.3333, 0.3333, 0.3334];
        assert_eq!(bonferroni_rejections(&p, &w, 0.05).unwrap(), vec![0]);
        assert_eq!(bonferroni_rejections(&[0.0, 0.5], &[0.1, 1.9], 0.05).unwrap(), vec![0]);
        assert!(bonferroni_rejections(&[0.0, 0.5], &[0.0, 2.0], 0.05).unwrap().is_empty());
        assert!(bonferroni_rejections(&p, &w[..3], 0.05).is_err());
    }

    #[test]
    fn bh_example() {
        let q = [0.01, 0.02, 0.9];
        assert_eq!(bh_rejections(&q, &[1.0; 3], 0.15).unwrap(), vec![0, 1]);
        let m = 1000;
        let mut p = vec![0.9; m];
        p[0] = 0.05 / m as f64;
        assert_eq!(bh_rejections(&p, &vec![1.0; m], 0.05).unwrap(), vec![0]);
    }

    #[test]
    fn rank_weight_lookup() {
        let recs = records(&[0.001, 0.02, 0.5], &[0.1, 3.0, 1.2]);
        let w = weights_by_rank(&recs, &[2.0, 0.5, 0.5]).unwrap();
        assert_eq!(w, vec![0.5, 2.0, 0.5]);
        let rep = weighted_bonferroni(&recs, &[2.0, 0.5, 0.5], 0.05).unwrap();
        assert_eq!(rep.rejected, vec![0, 1]);
        let csv = rep.to_csv(&recs, &w);
        assert!(csv.starts_with("id,pvalue,weight,weighted_p,rejected\nt0,0.001,0.5,0.002,1\n"));
    }

    #[test]
    fn metrics_examples() {
        let truth = vec![Some(Truth::Alternative), Some(Truth::Alternative), Some(Truth::Null), Some(Truth::Null)];
        let report = |rej: Vec<usize>| DecisionReport::new(Procedure::Bh, 0.05, rej, false);
        let perfect = compute_metrics(&[report(vec![0, 1])], &[truth.clone()]).unwrap();
        assert_eq!((perfect.power, perfect.fwer, perfect.fdr), (1.0, 0.0, 0.0));
        let none = compute_metrics(&[report(vec![])], &[truth.clone()]).unwrap();
        assert_eq!((none.power, none.fwer, none.fdr), (0.0, 0.0, 0.0));
        let mixed = compute_metrics(&[report(vec![0, 2])], &[truth.clone()]).unwrap();
        assert_eq!((mixed.power, mixed.fwer, mixed.fdr), (0.5, 1.0, 0.5));
        let mut partial = truth;
        partial[3] = None;
        assert!(matches!(
            compute_metrics(&[report(vec![0])], &[partial]),
            Err(CrwError::MissingLabels(_))
        ));
    }
}
