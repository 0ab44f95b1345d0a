//! End-to-end use of the public API: configured ensembles, full runs in
//! both precisions, and file round trips.

use std::fs;

use mfcdf::cdf::Cdf1D;
use mfcdf::cv_estimator::oracle_stats;
use mfcdf::ensemble::{LinearGaussianParams, ModelFamily};
use mfcdf::metrics::{read_risk_csv, sup_error, write_risk_csv};
use mfcdf::{
    risk_report, run_cvmdl, run_ecdf_baseline, weighted_l2_error, CdfEstimate64, CvmdlOptions, CvmdlOutput64,
    Ensemble, EnsembleConfig, Error, GridSpec, SeedStream, Subset, WeightSpec,
};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use tempfile::TempDir;

fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

fn linear(base_seed: u64) -> Ensemble {
    let p = LinearGaussianParams::scalar(&[(1.0, 0.2), (0.8, 0.6)]);
    Ensemble::new(&[1.0, 0.05, 0.01], &[1, 1, 1], ModelFamily::LinearGaussian(p), base_seed).unwrap()
}

#[test]
fn f64_run_respects_budget_and_tracks_the_truth() {
    let e = linear(0);
    let w = WeightSpec::constant_one();
    let out: CvmdlOutput64 = run_cvmdl(&e, 2000.0, &w, &CvmdlOptions::default(), SeedStream::new(1)).unwrap();
    assert!(out.ledger.spent <= 2000.0);
    assert_eq!(out.trace.last().unwrap().m, out.m);
    let est = out.cdf.best();
    assert!(est.is_monotone());
    assert!(est.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(sup_error(est, |x| normal_cdf(x[0])) < 0.08);
}

#[test]
fn f32_and_f64_runs_make_the_same_decisions() {
    let e = linear(3);
    let w = WeightSpec::rectangle(vec![-4.0], vec![4.0], 512);
    let s = SeedStream::new(9);
    let a = run_cvmdl::<f64>(&e, 800.0, &w, &CvmdlOptions::default(), s).unwrap();
    let b = run_cvmdl::<f32>(&e, 800.0, &w, &CvmdlOptions::default(), s).unwrap();
    assert_eq!(a.selected, b.selected);
    assert_eq!(a.n_exploit, b.n_exploit);
    let fa: Vec<f64> = a.cdf.clipped.values().iter().copied().collect();
    assert_eq!(fa.len(), b.cdf.clipped.values().len());
    // Exploration can stop at a different m in single precision; compare the
    // estimates only when it did not.
    if a.m == b.m {
        for (x, y) in fa.iter().zip(b.cdf.clipped.values()) {
            assert!((x - *y as f64).abs() < 1e-3);
        }
    }
}

#[test]
fn cvmdl_beats_the_ecdf_on_average() {
    let e = linear(0);
    let w = WeightSpec::constant_one();
    // Errors over a bounded window: the truth never reaches 0 or 1.
    let window = WeightSpec::rectangle(vec![-4.0], vec![4.0], 4096);
    let truth = {
        let grid = GridSpec::Uniform {
            lower: vec![-8.0],
            upper: vec![8.0],
            resolution: vec![4001],
        };
        let g = mfcdf::cdf::build_grid::<f64>(&grid, &[]).unwrap();
        let v = ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[4001]), |i| normal_cdf(g.axis(0)[i[0]]));
        CdfEstimate64::new(g, v).unwrap()
    };
    let (mut cv, mut ec) = (0.0, 0.0);
    for t in 0..20 {
        let s = SeedStream::new(t);
        let out = run_cvmdl::<f64>(&e, 1000.0, &w, &CvmdlOptions::default(), s).unwrap();
        cv += weighted_l2_error(out.cdf.best(), &truth, &window).unwrap();
        let base = run_ecdf_baseline::<f64>(&e, 1000.0, None, s).unwrap();
        ec += weighted_l2_error(&base.estimate, &truth, &window).unwrap();
    }
    assert!(cv < ec, "cvmdl {cv} ecdf {ec}");
}

#[test]
fn infeasible_budget_is_reported() {
    let e = linear(0);
    let r = run_cvmdl::<f64>(&e, 1.0, &WeightSpec::constant_one(), &CvmdlOptions::default(), SeedStream::new(0));
    assert!(matches!(r, Err(Error::InsufficientBudget { .. })));
}

#[test]
fn pool_ensemble_from_files() {
    let dir = TempDir::new().unwrap();
    let mut rows = String::from("y_1,x1_1\n");
    for i in 0..200 {
        let y = (i as f64 * 0.37).sin() * 3.0;
        rows.push_str(&format!("{y},{}\n", y + 0.1 * (i as f64 * 1.3).cos()));
    }
    fs::write(dir.path().join("pool.csv"), rows).unwrap();
    fs::write(
        dir.path().join("ensemble.toml"),
        "kind = \"pool\"\npath = \"pool.csv\"\nreplacement = false\ncosts = [1.0, 0.05]\ndims = [1, 1]\n",
    )
    .unwrap();
    let cfg = EnsembleConfig::from_path(&dir.path().join("ensemble.toml")).unwrap();
    let e = Ensemble::from_config(&cfg, dir.path()).unwrap();
    let out = run_cvmdl::<f64>(&e, 60.0, &WeightSpec::constant_one(), &CvmdlOptions::default(), SeedStream::new(2))
        .unwrap();
    assert_eq!(out.selected, Subset::new(vec![1]).unwrap());
    // Without replacement every row is used at most once.
    assert!(out.m + out.n_exploit <= 200);
    assert!(out.ledger.spent <= 60.0);
}

#[test]
fn oracle_stats_rank_the_better_model_first() {
    let e = linear(0);
    let stats = oracle_stats::<f64>(&e, &WeightSpec::constant_one(), 20_000, 1e4, None, SeedStream::new(4)).unwrap();
    let g = |s: &[usize]| stats.get(&Subset::new(s.to_vec()).unwrap()).unwrap().gamma;
    assert!(g(&[1]) < g(&[2]));
    assert!(stats.subsets.iter().all(|s| s.relative_efficiency >= 0.25));
    // Corr(Y, X_1) = 1 / sqrt(1.04), Corr(Y, X_2) = 0.8 / sqrt(1.0).
    assert!((stats.correlations[0][0] - 1.0 / 1.04f64.sqrt()).abs() < 0.01);
    assert!((stats.correlations[0][1] - 0.8).abs() < 0.01);
}

#[test]
fn risk_report_csv_round_trip_of_a_run() {
    let e = linear(0);
    let out = run_cvmdl::<f64>(&e, 500.0, &WeightSpec::constant_one(), &CvmdlOptions::default(), SeedStream::new(5))
        .unwrap();
    let cdf = Cdf1D::from_estimate(out.cdf.best()).unwrap();
    let r = risk_report(&cdf, &[0.9, 0.99], &[0.5]).unwrap();
    assert!(r.cvar[0].value <= r.cvar[1].value);
    let mut buf = Vec::new();
    write_risk_csv(&mut buf, &[("cvmdl".to_string(), r.clone())]).unwrap();
    assert_eq!(read_risk_csv(buf.as_slice()).unwrap(), r.rows("cvmdl"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_never_overspend(budget in 40.0f64..3000.0, seed in any::<u64>()) {
        let e = linear(seed);
        let out = run_cvmdl::<f64>(&e, budget, &WeightSpec::constant_one(), &CvmdlOptions::default(), SeedStream::new(seed))
            .unwrap();
        prop_assert!(out.ledger.spent <= budget);
        prop_assert!(out.cdf.best().is_monotone());
        let trace_m: Vec<usize> = out.trace.iter().map(|t| t.m).collect();
        prop_assert!(trace_m.windows(2).all(|w| w[0] <= w[1]));
    }
}
