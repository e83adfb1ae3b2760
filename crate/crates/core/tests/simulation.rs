use crw::calibrate::{self, CalibrationConfig};
use crw::mtp::{self, Truth};
use crw::normal;
use crw::simharness::{self, EffectModel, Method, SimConfig, SimGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

fn ks_uniform_pvalue(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    // asymptotic Kolmogorov tail
    let t = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * t * t).exp();
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn null_dataset_has_uniform_pvalues() {
    let cfg = SimConfig::new(10_000, 1.0, 2.0, EffectModel::Normal, 3);
    let data = simharness::generate_dataset(&cfg, 0).unwrap();
    assert!(data.truth.iter().all(|&t| t == Truth::Null));
    let p = ks_uniform_pvalue(&data.pvalues());
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn ks_helper_rejects_skewed_sample() {
    let v: Vec<f64> = (0..2000).map(|i| (i as f64 / 2000.0).powi(2)).collect();
    assert!(ks_uniform_pvalue(&v) < 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = Uniform::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..2000).map(|_| u.sample(&mut rng)).collect();
    assert!(ks_uniform_pvalue(&v) > 0.001);
}

#[test]
fn alternative_statistics_center_on_effect() {
    let cfg = SimConfig::new(10_000, 0.9, 2.0, EffectModel::PointMass, 11);
    let data = simharness::generate_dataset(&cfg, 0).unwrap();
    let alt: Vec<f64> = data
        .records
        .iter()
        .zip(&data.truth)
        .filter(|(_, &t)| t == Truth::Alternative)
        .map(|(r, _)| r.test_stat.unwrap())
        .collect();
    let mean = alt.iter().sum::<f64>() / alt.len() as f64;
    assert_eq!(alt.len(), 1000);
    assert!((mean - 2.0).abs() <= 3.0 / (alt.len() as f64).sqrt(), "{mean}");
    for (r, &t) in data.records.iter().zip(&data.truth).take(5) {
        assert_eq!(t, Truth::Null);
        assert_eq!(r.pvalue, normal::sf(r.test_stat.unwrap()));
    }
}

#[test]
fn dilution_extremes() {
    let mut t = SimConfig::new(10_000, 0.5, 10.0, EffectModel::Normal, 5);
    t.replicates = 10;
    let grid = SimGrid { pi0: vec![0.5, 1.0], mu_eps: vec![10.0], noise_cv: vec![0.0] };
    let r = simharness::run_dilution_study(&grid, &t).unwrap();
    assert!(r.dilution[0].top_frac >= 0.95);
    assert_eq!(r.dilution[1].top_frac, 0.0);
}

#[test]
fn dilution_monotone_along_grid() {
    let mut t = SimConfig::new(5_000, 0.9, 1.0, EffectModel::Normal, 5);
    t.replicates = 40;
    let grid = SimGrid { pi0: vec![0.5, 0.9], mu_eps: vec![0.5, 1.0, 2.0], noise_cv: vec![0.0] };
    let r = simharness::run_dilution_study(&grid, &t).unwrap();
    let d = &r.dilution;
    let tol = |a: usize, b: usize| 2.0 * (d[a].top_frac_se.powi(2) + d[b].top_frac_se.powi(2)).sqrt();
    for row in [0usize, 3] {
        for k in 0..2 {
            assert!(d[row + k + 1].top_frac >= d[row + k].top_frac - tol(row + k, row + k + 1));
        }
    }
    for k in 0..3 {
        assert!(d[3 + k].top_frac <= d[k].top_frac + tol(k, 3 + k));
    }
}

#[test]
fn results_identical_across_reruns() {
    let mut t = SimConfig::new(1_000, 0.9, 1.5, EffectModel::Normal, 9);
    t.replicates = 6;
    let grid = SimGrid { pi0: vec![0.9], mu_eps: vec![1.5], noise_cv: vec![0.0, 0.5] };
    let methods = [Method::Crw, Method::Bh, Method::Rdw];
    let a = simharness::run_power_comparison(&grid, &methods, &t, None).unwrap();
    let b = simharness::run_power_comparison(&grid, &methods, &t, None).unwrap();
    assert_eq!(a.power_csv(), b.power_csv());
    assert_eq!(a.power.len(), 2 * methods.len() * 2);
}

#[test]
fn null_cell_controls_errors() {
    let mut t = SimConfig::new(2_000, 1.0, 1.0, EffectModel::Normal, 17);
    t.replicates = 200;
    let grid = SimGrid { pi0: vec![1.0], mu_eps: vec![1.0], noise_cv: vec![0.0] };
    let r = simharness::run_power_comparison(&grid, &[Method::Crw, Method::Bh, Method::Rdw], &t, None).unwrap();
    for rec in &r.power {
        assert_eq!(rec.metrics.power, 0.0);
        let se = (0.05f64 * 0.95 / rec.metrics.replicates as f64).sqrt();
        assert!(rec.metrics.fwer <= 0.05 + 3.0 * se, "{:?} {:?} {}", rec.method, rec.procedure, rec.metrics.fwer);
        assert!(rec.metrics.fdr <= 0.05 + 3.0 * se);
    }
}

#[test]
fn uniform_null_pvalues_rarely_rejected_by_bh() {
    let u = Uniform::new_inclusive(0.0, 1.0).unwrap();
    let mut clean = 0;
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..10_000).map(|_| u.sample(&mut rng)).collect();
        if mtp::bh_rejections(&p, &vec![1.0; p.len()], 0.05).unwrap().is_empty() {
            clean += 1;
        }
    }
    assert!(clean as f64 >= 0.94 * 200.0, "{clean}");
}

#[test]
fn calibration_uses_data_only() {
    let cfg = SimConfig::new(5_000, 0.8, 2.5, EffectModel::PointMass, 21);
    let mut data = simharness::generate_dataset(&cfg, 0).unwrap();
    let a = calibrate::calibrate(&data.pvalues(), &data.covariates(), &CalibrationConfig::default()).unwrap();
    for r in &mut data.records {
        r.truth = None;
        r.test_stat = None;
    }
    let b = calibrate::calibrate(&data.pvalues(), &data.covariates(), &CalibrationConfig::default()).unwrap();
    assert_eq!(a.weights, b.weights);
    assert!(a.fallback.is_none());
}
