use std::io::Write;
use std::path::Path;

use anyhow::anyhow;
use crw::calibrate::{self, Calibration};
use crw::estimation::{EffectReport, RegressionFit};
use crw::mtp::{self, Procedure, TestRecord};
use crw::rankprob::{self, RankDistribution, RankMethod, RankModel, RankProbMethod};
use crw::simharness::{self, Method};
use crw::weights::{self, DeltaSolution, WeightConfig};
use serde::{Deserialize, Serialize};

use crate::args::{DataArgs, ModelArgs, RankprobArgs, SimulateArgs, WeightsArgs};
use crate::config::{self, RunConfig, SimSpec, Study};
use crate::error::{CliError, CliResult, Stage};
use crate::io::{self, OutputSet};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// α grid for the rejection-count table: 0.01, 0.02, …, 0.10.
pub fn alpha_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 100.0).collect()
}

/// Config file values overridden by any flags given.
pub fn resolve_run_config(args: &DataArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => config::read_json::<RunConfig>(path)?,
        None => {
            let input = args
                .input
                .clone()
                .ok_or_else(|| CliError::config(anyhow!("either --config or --input is required")))?;
            RunConfig::new(input)
        }
    };
    if let Some(v) = &args.input {
        cfg.input = v.clone();
    }
    if let Some(v) = &args.pvalue_column {
        cfg.pvalue_column = v.clone();
    }
    if let Some(v) = &args.covariate_column {
        cfg.covariate_column = v.clone();
    }
    if let Some(v) = &args.id_column {
        cfg.id_column = Some(v.clone());
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v.into();
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.method {
        cfg.rankprob_method = v;
    }
    if let Some(v) = args.grid_size {
        cfg.grid_size = v;
    }
    if let Some(v) = args.draws {
        cfg.mc_draws = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.output_dir {
        cfg.output_dir = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub alpha: f64,
    pub procedure: Procedure,
    pub n_rejections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub input_sha256: String,
    pub config: RunConfig,
    pub n_tests: usize,
    pub effect: EffectReport,
    pub regression: Option<RegressionFit>,
    pub delta: Option<DeltaSolution>,
    pub rank_method: Option<RankMethod>,
    pub fallback: Option<String>,
    pub rejections: Vec<RejectionRow>,
}

fn load(cfg: &RunConfig) -> CliResult<(Vec<TestRecord>, Calibration)> {
    let records = io::ingest_csv(&cfg.input, cfg)?;
    let p: Vec<f64> = records.iter().map(|r| r.pvalue).collect();
    let c: Vec<f64> = records.iter().map(|r| r.covariate).collect();
    let cal = calibrate::calibrate(&p, &c, &cfg.calibration()).stage("calibration")?;
    Ok((records, cal))
}

pub fn cmd_adjust(cfg: &RunConfig) -> CliResult<RunReport> {
    let input_sha256 = io::sha256_file(&cfg.input)?;
    let (records, cal) = load(cfg)?;
    let m = records.len();

    let mut rejections = Vec::new();
    for alpha in alpha_grid() {
        let (w, _) = cal.weights_at(alpha).stage("weights")?;
        let wbh = mtp::weighted_bh(&records, &w.weights, alpha).stage("weighted BH")?;
        let wbf = mtp::weighted_bonferroni(&records, &w.weights, alpha).stage("weighted Bonferroni")?;
        let bh = mtp::plain_bh(&records, alpha).stage("BH")?;
        let bf = mtp::plain_bonferroni(&records, alpha).stage("Bonferroni")?;
        for rep in [wbh, wbf, bh, bf] {
            rejections.push(RejectionRow { alpha, procedure: rep.method, n_rejections: rep.n_rejections });
        }
    }

    let per_test = mtp::weights_by_rank(&records, &cal.weights.weights).stage("weights")?;
    let wbh = mtp::weighted_bh(&records, &cal.weights.weights, cfg.alpha).stage("weighted BH")?;
    let wbf = mtp::weighted_bonferroni(&records, &cal.weights.weights, cfg.alpha).stage("weighted Bonferroni")?;

    let report = RunReport {
        version: VERSION.to_string(),
        input_sha256,
        config: cfg.clone(),
        n_tests: m,
        effect: EffectReport::new(&cal.estimate, cal.regression.as_ref()),
        regression: cal.regression,
        delta: cal.delta.clone(),
        rank_method: cal.rank_dist.as_ref().map(|d| d.method),
        fallback: cal.fallback.map(|f| f.describe().to_string()),
        rejections,
    };

    let mut table = String::from("alpha,procedure,n_rejections\n");
    for row in &report.rejections {
        table.push_str(&format!("{},{},{}\n", row.alpha, row.procedure.name(), row.n_rejections));
    }
    let mut out = OutputSet::new(&cfg.output_dir)?;
    out.stage("weights.csv", &cal.weights.to_csv())?;
    out.stage("decisions.csv", &wbh.to_csv(&records, &per_test))?;
    out.stage("decisions_bonferroni.csv", &wbf.to_csv(&records, &per_test))?;
    out.stage("rejections.csv", &table)?;
    out.stage("report.json", &(to_json(&report) + "\n"))?;
    out.commit()?;
    Ok(report)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub version: String,
    pub input_sha256: String,
    pub config: RunConfig,
    pub effect: EffectReport,
    pub regression: Option<RegressionFit>,
    pub fallback: Option<String>,
}

pub fn cmd_estimate(cfg: &RunConfig, to_dir: bool) -> CliResult<EstimateReport> {
    let input_sha256 = io::sha256_file(&cfg.input)?;
    let (_, cal) = load(cfg)?;
    let report = EstimateReport {
        version: VERSION.to_string(),
        input_sha256,
        config: cfg.clone(),
        effect: EffectReport::new(&cal.estimate, cal.regression.as_ref()),
        regression: cal.regression,
        fallback: cal.fallback.map(|f| f.describe().to_string()),
    };
    emit(if to_dir { Some(&cfg.output_dir) } else { None }, &[("estimate.json", to_json(&report) + "\n")])?;
    Ok(report)
}

fn emit(dir: Option<&Path>, files: &[(&str, String)]) -> CliResult<()> {
    match dir {
        Some(dir) => {
            let mut out = OutputSet::new(dir)?;
            for (name, body) in files {
                out.stage(name, body)?;
            }
            out.commit()?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            for (_, body) in files {
                stdout.write_all(body.as_bytes()).map_err(CliError::data)?;
            }
        }
    }
    Ok(())
}

fn model_method(model: &ModelArgs) -> CliResult<Option<RankProbMethod>> {
    config::validate_rank_method(model.method, model.grid_size, model.draws)?;
    Ok(config::rank_method(model.method, model.grid_size, model.draws, model.seed))
}

fn check_model(model: &ModelArgs) -> CliResult<()> {
    if model.m0 + model.m1 == 0 {
        return Err(CliError::config(anyhow!("m0 + m1 must be positive")));
    }
    if !model.tau.is_finite() {
        return Err(CliError::config(anyhow!("tau must be finite")));
    }
    Ok(())
}

fn distribution(model: RankModel, method: Option<RankProbMethod>) -> CliResult<RankDistribution> {
    let method = method.unwrap_or_else(|| RankProbMethod::auto(model.m()));
    rankprob::rank_prob(&model, method).map_err(|e| {
        if e.is_solver_failure() {
            CliError::core("rank probabilities", e)
        } else {
            CliError::config(e)
        }
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV `rank,prob_null_query,prob_alt_query`; a column is empty when that
/// query has no test to place.
pub fn cmd_rankprob(args: &RankprobArgs) -> CliResult<String> {
    let model = &args.model;
    check_model(model)?;
    let method = model_method(model)?;
    let null = if model.m0 > 0 {
        Some(distribution(RankModel::null_query(model.m0, model.m1, model.tau).map_err(CliError::config)?, method)?)
    } else {
        None
    };
    let alt = if model.m1 > 0 {
        Some(distribution(RankModel::alt_query(model.m0, model.m1, model.tau).map_err(CliError::config)?, method)?)
    } else {
        None
    };
    let m = model.m0 + model.m1;
    let mut csv = String::from("rank,prob_null_query,prob_alt_query\n");
    for k in 0..m {
        csv.push_str(&format!(
            "{},{},{}\n",
            k + 1,
            fmt_opt(null.as_ref().map(|d| d.probs[k])),
            fmt_opt(alt.as_ref().map(|d| d.probs[k]))
        ));
    }
    emit(model.output_dir.as_deref(), &[("rankprob.csv", csv.clone())])?;
    Ok(csv)
}

/// CSV `rank,prob,weight` at the alternative-query rank law, plus the δ
/// solution as JSON when writing to a directory.
pub fn cmd_weights(args: &WeightsArgs) -> CliResult<String> {
    let model = &args.model;
    check_model(model)?;
    if model.m1 == 0 {
        return Err(CliError::config(anyhow!("weights need at least one alternative (m1 >= 1)")));
    }
    let m = model.m0 + model.m1;
    let wcfg = match args.mode {
        crate::args::ModeArg::Continuous => WeightConfig::continuous(m, args.alpha, args.effect),
        crate::args::ModeArg::Binary => WeightConfig::binary(m, args.alpha, args.effect, model.m1),
    }
    .map_err(CliError::config)?;
    let method = model_method(model)?;
    let dist = distribution(RankModel::alt_query(model.m0, model.m1, model.tau).map_err(CliError::config)?, method)?;
    let (w, delta) = weights::crw_weights(&dist, &wcfg).stage("weights")?;
    let mut csv = String::from("rank,prob,weight\n");
    for (k, (p, wk)) in dist.probs.iter().zip(&w.weights).enumerate() {
        csv.push_str(&format!("{},{},{}\n", k + 1, p, wk));
    }
    match &model.output_dir {
        Some(dir) => emit(Some(dir), &[("weights.csv", csv.clone()), ("delta.json", to_json(&delta) + "\n")])?,
        None => emit(None, &[("weights.csv", csv.clone())])?,
    }
    Ok(csv)
}

fn parse_methods(names: &[String]) -> CliResult<Vec<Method>> {
    names
        .iter()
        .map(|n| {
            serde_json::from_value::<Method>(serde_json::Value::String(n.trim().to_string()))
                .map_err(|_| CliError::config(anyhow!("unknown method '{n}'")))
        })
        .collect()
}

pub fn resolve_sim_spec(args: &SimulateArgs) -> CliResult<SimSpec> {
    let mut spec: SimSpec = config::read_json(&args.config)?;
    if let Some(seed) = args.seed {
        spec.template.seed = seed;
    }
    if let Some(alpha) = args.alpha {
        spec.template.alpha = alpha;
    }
    if let Some(r) = args.replicates {
        spec.template.replicates = r;
    }
    if let Some(names) = &args.method {
        spec.methods = parse_methods(names)?;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_simulate(spec: &SimSpec, output_dir: &Path) -> CliResult<simharness::SimResult> {
    let mut out = OutputSet::new(output_dir)?;
    let result = match spec.study {
        Study::Dilution => {
            let r = simharness::run_dilution_study(&spec.grid, &spec.template).stage("dilution study")?;
            out.stage("dilution.csv", &r.dilution_csv())?;
            r
        }
        Study::Power => {
            let external = match &spec.external_weights {
                Some(path) if spec.methods.contains(&Method::ExternalWeights) => Some(io::read_external_weights(path)?),
                _ => None,
            };
            let r = simharness::run_power_comparison(&spec.grid, &spec.methods, &spec.template, external.as_ref())
                .stage("power comparison")?;
            out.stage("power.csv", &r.power_csv())?;
            r
        }
    };
    if spec.export_datasets {
        let mut all = String::new();
        for (ci, cell) in spec.grid.cells().iter().enumerate() {
            let cfg = simharness::SimConfig {
                pi0: cell.pi0,
                mu_eps: cell.mu_eps,
                noise_cv: cell.noise_cv,
                ..spec.template.clone()
            };
            for r in 0..cfg.replicates {
                let data = simharness::generate_dataset(&cfg, r).stage("dataset export")?;
                let csv = simharness::dataset_csv(&data, ci, r);
                if all.is_empty() {
                    all.push_str(&csv);
                } else {
                    all.push_str(csv.split_once('\n').map(|x| x.1).unwrap_or(""));
                }
            }
        }
        out.stage("datasets.csv", &all)?;
    }
    out.stage("result.json", &(result.to_json() + "\n"))?;
    out.commit()?;
    Ok(result)
}
