use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crw::normal;
use crw_cli::commands::{self, RunReport};
use crw_cli::config::RunConfig;
use crw_cli::io::ingest_csv;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn crw() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crw"))
}

fn write_dataset(dir: &Path, m: usize, m1: usize, eps: f64, tau: f64, seed: u64, constant_cov: bool) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("id,pvalue,covariate\n");
    for i in 0..m {
        let alt = i < m1;
        let z: f64 = StandardNormal.sample(&mut rng);
        let y: f64 = StandardNormal.sample(&mut rng);
        let p = normal::sf(z + if alt { eps } else { 0.0 });
        let c = if constant_cov { 1.0 } else { y + if alt { tau } else { 0.0 } };
        s.push_str(&format!("g{i},{p},{c}\n"));
    }
    let path = dir.join(format!("data_{seed}.csv"));
    fs::write(&path, s).unwrap();
    path
}

#[test]
fn ingest_assigns_rank_permutation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    fs::write(&path, "id,pvalue,covariate\na,0.01,0.1\nb,0.2,3.0\nc,0.5,1.2\n").unwrap();
    let recs = ingest_csv(&path, &RunConfig::new(path.clone())).unwrap();
    assert_eq!(recs.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![3, 1, 2]);
    assert_eq!(recs[1].id, "b");
}

#[test]
fn ingest_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "pvalue,covariate\n0.1,1\n1.5,2\n").unwrap();
    let err = ingest_csv(&path, &RunConfig::new(path.clone())).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    assert_eq!(err.exit_code(), 3);

    fs::write(&path, "pvalue,cov\n0.1,1\n").unwrap();
    let err = ingest_csv(&path, &RunConfig::new(path.clone())).unwrap_err();
    assert!(err.to_string().contains("covariate"), "{err}");

    fs::write(&path, "pvalue,covariate\n0.1,abc\n").unwrap();
    let err = ingest_csv(&path, &RunConfig::new(path.clone())).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");

    fs::write(&path, "").unwrap();
    assert!(ingest_csv(&path, &RunConfig::new(path.clone())).is_err());
}

#[test]
fn ingest_large_file_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path(), 16_183, 2_000, 2.0, 1.2, 4, false);
    let start = std::time::Instant::now();
    let recs = ingest_csv(&path, &RunConfig::new(path.clone())).unwrap();
    assert_eq!(recs.len(), 16_183);
    assert!(start.elapsed().as_secs_f64() < 2.0);
}

#[test]
fn adjust_writes_outputs_and_round_trips_config() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), 3000, 300, 3.0, 2.0, 1, false);
    let out = dir.path().join("out");
    let status = crw().args(["adjust", "-i"]).arg(&input).arg("-o").arg(&out).status().unwrap();
    assert!(status.success());
    for f in ["weights.csv", "decisions.csv", "decisions_bonferroni.csv", "rejections.csv", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let echo = serde_json::to_string(&report.config).unwrap();
    let back: RunConfig = serde_json::from_str(&echo).unwrap();
    assert_eq!(back, report.config);
    assert_eq!(report.rejections.len(), 40);
    assert!(report.fallback.is_none());

    let decisions = fs::read_to_string(out.join("decisions.csv")).unwrap();
    assert!(decisions.starts_with("id,pvalue,weight,weighted_p,rejected\n"));
    assert_eq!(decisions.lines().count(), 3001);
    assert!(!decisions.contains('\r'));

    // rerun from the echoed config into a second directory
    let cfg_path = dir.path().join("cfg.json");
    let mut cfg = report.config.clone();
    cfg.output_dir = dir.path().join("out2");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert!(crw().args(["adjust", "-c"]).arg(&cfg_path).status().unwrap().success());
    for f in ["weights.csv", "decisions.csv", "rejections.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(cfg.output_dir.join(f)).unwrap());
    }
}

#[test]
fn constant_covariate_reproduces_plain_bh() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), 2000, 200, 3.0, 0.0, 2, true);
    let mut cfg = RunConfig::new(input);
    cfg.output_dir = dir.path().join("out");
    let report = commands::cmd_adjust(&cfg).unwrap();
    let weights = fs::read_to_string(cfg.output_dir.join("weights.csv")).unwrap();
    assert!(weights.lines().skip(1).all(|l| l.ends_with(",1")));
    for alpha in commands::alpha_grid() {
        let n = |proc: crw::mtp::Procedure| {
            report.rejections.iter().find(|r| r.alpha == alpha && r.procedure == proc).unwrap().n_rejections
        };
        assert_eq!(n(crw::mtp::Procedure::WeightedBh), n(crw::mtp::Procedure::Bh));
        assert_eq!(n(crw::mtp::Procedure::WeightedBonferroni), n(crw::mtp::Procedure::Bonferroni));
    }
}

#[test]
fn all_null_data_rarely_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let mut clean = 0;
    let seeds = 40;
    for seed in 0..seeds {
        let input = write_dataset(dir.path(), 2000, 0, 0.0, 0.0, 100 + seed, false);
        let mut cfg = RunConfig::new(input);
        cfg.output_dir = dir.path().join(format!("o{seed}"));
        let report = commands::cmd_adjust(&cfg).unwrap();
        let n = report
            .rejections
            .iter()
            .find(|r| r.alpha == 0.05 && r.procedure == crw::mtp::Procedure::WeightedBh)
            .unwrap()
            .n_rejections;
        if n == 0 {
            clean += 1;
        }
    }
    assert!(clean >= seeds - 2, "{clean}/{seeds}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "pvalue,covariate\n0.1,1\n-0.5,2\n").unwrap();
    let out = dir.path().join("out");
    let code = |args: &[&str]| crw().args(args).output().unwrap().status.code().unwrap();
    assert_eq!(code(&["adjust", "-i", bad.to_str().unwrap(), "-o", out.to_str().unwrap()]), 3);
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
    assert_eq!(code(&["adjust", "-i", bad.to_str().unwrap(), "--alpha", "1.5"]), 2);
    assert_eq!(code(&["adjust"]), 2);
    assert_eq!(code(&["rankprob", "--m0", "0", "--m1", "0", "--tau", "1"]), 2);
    assert_eq!(code(&["bogus"]), 2);
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, r#"{"study":"power","template":{"m":5,"pi0":0.5,"mu_eps":1,"effect_model":"normal","seed":1},"grid":{"pi0":[0.5],"mu_eps":[1]}}"#).unwrap();
    assert_eq!(code(&["simulate", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]), 2);
}

#[test]
fn rankprob_output_shape() {
    let out = crw().args(["rankprob", "--m0", "100", "--m1", "0", "--tau", "2"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "rank,prob_null_query,prob_alt_query");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 100);
    for row in rows {
        let p: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!((p - 0.01).abs() < 1e-4);
    }
}

#[test]
fn rankprob_exact_and_approx_agree() {
    let run = |method: &str| -> Vec<(f64, f64)> {
        let out = crw()
            .args(["rankprob", "--m0", "50", "--m1", "50", "--tau", "1", "--method", method])
            .output()
            .unwrap();
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<f64> = l.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
                (f[0], f[1])
            })
            .collect()
    };
    let (a, b) = (run("exact"), run("approx"));
    let sup = a.iter().zip(&b).map(|(x, y)| (x.0 - y.0).abs().max((x.1 - y.1).abs())).fold(0.0, f64::max);
    assert!(sup <= 5e-3, "{sup}");
}

#[test]
fn weights_and_estimate_commands() {
    let out = crw()
        .args(["weights", "--m0", "900", "--m1", "100", "--tau", "2", "--effect", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let w: Vec<f64> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(w.len(), 1000);
    assert!((w.iter().sum::<f64>() / 1000.0 - 1.0).abs() < 1e-6);

    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), 2000, 200, 3.0, 2.0, 3, false);
    let out = crw().args(["estimate", "-i"]).arg(&input).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let pi0 = v["effect"]["pi0_hat"].as_f64().unwrap();
    assert!((pi0 - 0.9).abs() < 0.05, "{pi0}");
    assert!(v["effect"]["tau_at_mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_schema_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let dil = dir.path().join("dil.json");
    fs::write(&dil, r#"{"study":"dilution","template":{"m":2000,"pi0":0.9,"mu_eps":1,"effect_model":"normal","seed":3,"replicates":5},"grid":{"pi0":[0.9,0.99],"mu_eps":[0.5,1]}}"#).unwrap();
    let o = dir.path().join("d");
    assert!(crw().args(["simulate", "-c"]).arg(&dil).arg("-o").arg(&o).status().unwrap().success());
    let csv = fs::read_to_string(o.join("dilution.csv")).unwrap();
    assert!(csv.starts_with("pi0,mu_eps,top_frac,top_mean_effect\n"));
    assert_eq!(csv.lines().count(), 5);

    let pow = dir.path().join("pow.json");
    fs::write(&pow, r#"{"study":"power","template":{"m":1000,"pi0":0.9,"mu_eps":1,"effect_model":"normal","seed":3,"replicates":4},"grid":{"pi0":[0.9],"mu_eps":[1,2]},"methods":["crw","bh"],"export_datasets":true}"#).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(crw().args(["simulate", "-c"]).arg(&pow).arg("-o").arg(&a).status().unwrap().success());
    assert!(crw()
        .env("RAYON_NUM_THREADS", "3")
        .args(["simulate", "-c"])
        .arg(&pow)
        .arg("-o")
        .arg(&b)
        .status()
        .unwrap()
        .success());
    let power = fs::read_to_string(a.join("power.csv")).unwrap();
    // 2 cells × 2 methods × 2 procedures × 3 metrics
    assert_eq!(power.lines().count(), 1 + 24);
    for f in ["power.csv", "result.json", "datasets.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let datasets = fs::read_to_string(a.join("datasets.csv")).unwrap();
    assert_eq!(datasets.lines().count(), 1 + 2 * 4 * 1000);
}

#[test]
fn external_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = String::from("cell,replicate,test,weight\n");
    for r in 0..3 {
        for t in 0..500 {
            w.push_str(&format!("0,{r},{t},1\n"));
        }
    }
    let wpath = dir.path().join("w.csv");
    fs::write(&wpath, w).unwrap();
    let spec = format!(
        r#"{{"study":"power","template":{{"m":500,"pi0":0.9,"mu_eps":2,"effect_model":"normal","seed":5,"replicates":3}},"grid":{{"pi0":[0.9],"mu_eps":[2]}},"methods":["bh","external-weights"],"external_weights":{}}}"#,
        serde_json::to_string(&wpath).unwrap()
    );
    let spath = dir.path().join("s.json");
    fs::write(&spath, spec).unwrap();
    let o = dir.path().join("o");
    assert!(crw().args(["simulate", "-c"]).arg(&spath).arg("-o").arg(&o).status().unwrap().success());
    let csv = fs::read_to_string(o.join("power.csv")).unwrap();
    let value = |method: &str, proc: &str| -> String {
        csv.lines()
            .find(|l| l.contains(&format!(",{method},{proc},power,")))
            .unwrap()
            .split(',')
            .nth(6)
            .unwrap()
            .to_string()
    };
    // unit external weights are plain BH
    assert_eq!(value("external-weights", "weighted-bh"), value("bh", "bh"));
}
