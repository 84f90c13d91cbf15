//! End-to-end estimates against analytic values and brute-force oracles.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use spvim::data::{Dataset, Task};
use spvim::kernel::{all_subsets, exact_shapley};
use spvim::learners::LearnerSpec;
use spvim::pipeline::{
    estimate_spvim, group_spvim, subpopulation_spvim, Comparator, Condition, EstimationConfig, SpvimResult,
};
use spvim::predictiveness::PredictivenessMeasure;
use spvim::simulate::{simulate, DgpSpec};
use spvim::SpvimError;

fn linear(p: usize, coefficients: &[f64]) -> DgpSpec {
    DgpSpec::Linear { p, coefficients: coefficients.to_vec(), noise: 1.0 }
}

fn config(seed: u64) -> EstimationConfig {
    EstimationConfig { seed, workers: 1, ..Default::default() }
}

fn assert_additive(r: &SpvimResult) {
    let sum: f64 = r.psi[1..].iter().sum();
    let d = &r.diagnostics;
    assert!((sum - (d.v_full - d.v_empty)).abs() < 1e-10, "{sum} vs {}", d.v_full - d.v_empty);
    assert!((r.psi[0] - d.v_empty).abs() < 1e-12);
}

/// Population R² of OLS on `cols`, approximated with large train and test
/// samples drawn from `dgp`.
fn monte_carlo_r2(dgp: &DgpSpec, cols: &[usize], seed: u64) -> f64 {
    let train = simulate(dgp, 100_000, seed).unwrap();
    let test = simulate(dgp, 100_000, seed + 1).unwrap();
    let design = |d: &Dataset| {
        DMatrix::from_fn(d.n(), cols.len() + 1, |i, j| if j == 0 { 1.0 } else { d.x()[(i, cols[j - 1])] })
    };
    let xt = design(&train);
    let beta =
        (xt.transpose() * &xt).cholesky().unwrap().solve(&(xt.transpose() * DVector::from_column_slice(train.y())));
    let pred = design(&test) * beta;
    let y = test.y();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mse: f64 = y.iter().zip(pred.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let var: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    1.0 - mse / var
}

#[test]
fn single_signal_feature_matches_analytic_and_brute_force_oracle() {
    let dgp = linear(3, &[1.0]);
    let data = simulate(&dgp, 5000, 21).unwrap();
    let r = estimate_spvim(&data, &config(1)).unwrap();
    assert_additive(&r);
    assert!((r.psi[1] - 0.5).abs() < 0.05, "{:?}", r.psi);
    assert!(r.psi[2].abs() < 0.05 && r.psi[3].abs() < 0.05, "{:?}", r.psi);

    // exact Shapley over all 8 subsets of Monte Carlo population values
    let v: Vec<f64> = all_subsets(3)
        .unwrap()
        .iter()
        .map(|s| {
            let cols: Vec<usize> = s.indices().iter().map(|j| j - 1).collect();
            if cols.is_empty() {
                0.0
            } else {
                monte_carlo_r2(&dgp, &cols, 1000 + s.mask())
            }
        })
        .collect();
    let oracle = exact_shapley(&v, 3).unwrap();
    for j in 1..=3 {
        assert!((r.psi[j] - oracle[j]).abs() < 0.05, "feature {j}: {} vs {}", r.psi[j], oracle[j]);
    }
}

#[test]
fn duplicated_feature_gets_equal_importance() {
    let base = simulate(&linear(3, &[1.0]), 3000, 4).unwrap();
    let mut x = base.x().clone();
    let first = x.column(0).into_owned();
    x.set_column(1, &first);
    let data = Dataset::new(base.names().to_vec(), x, base.y().to_vec(), Task::Regression).unwrap();
    let r = estimate_spvim(&data, &config(2)).unwrap();
    assert_additive(&r);
    let s = &r.covariance.sigma;
    let joint_se = ((s[(1, 1)] + s[(2, 2)] - 2.0 * s[(1, 2)]).max(0.0) / r.covariance.n as f64).sqrt();
    assert!((r.psi[1] - r.psi[2]).abs() <= 2.0 * joint_se.max(1e-3), "{:?} se {joint_se}", r.psi);
    assert!((r.psi[1] + r.psi[2] - 0.5).abs() < 0.05);
}

#[test]
fn singleton_groups_reproduce_feature_estimate() {
    let data = simulate(&linear(3, &[1.0, 0.5]), 800, 5).unwrap();
    let cfg = config(6);
    let a = estimate_spvim(&data, &cfg).unwrap();
    let b = group_spvim(&data, &[vec![1], vec![2], vec![3]], &cfg).unwrap();
    assert_eq!(a.psi, b.psi);
    assert_eq!(a.std_errors, b.std_errors);
    assert_eq!(a.features, b.features);
    assert_eq!(a.diagnostics, b.diagnostics);
}

#[test]
fn noise_group_has_no_importance() {
    let dgp = linear(4, &[1.0, 1.0]);
    let data = simulate(&dgp, 3000, 7).unwrap();
    let r = group_spvim(&data, &[vec![1, 2], vec![3, 4]], &config(8)).unwrap();
    assert_additive(&r);
    assert_eq!(r.features, ["(null)", "x1+x2", "x3+x4"]);
    // brute force on the 4 group subsets
    let v = [
        0.0,
        monte_carlo_r2(&dgp, &[0, 1], 50),
        monte_carlo_r2(&dgp, &[2, 3], 51),
        monte_carlo_r2(&dgp, &[0, 1, 2, 3], 52),
    ];
    let oracle = exact_shapley(&v, 2).unwrap();
    assert!(r.psi[2].abs() < 0.05, "{:?}", r.psi);
    assert!((r.psi[1] - oracle[1]).abs() < 0.05, "{} vs {}", r.psi[1], oracle[1]);
    assert!((oracle[1] - 2.0 / 3.0).abs() < 0.01);
}

#[test]
fn overlapping_groups_are_rejected() {
    let data = simulate(&linear(3, &[1.0]), 200, 1).unwrap();
    let err = group_spvim(&data, &[vec![1, 2], vec![2, 3]], &config(1)).unwrap_err();
    assert!(matches!(err, SpvimError::Partition(_)), "{err}");
}

#[test]
fn subpopulation_of_all_rows_is_the_global_estimate() {
    let data = simulate(&linear(3, &[1.0]), 600, 9).unwrap();
    let cfg = config(10);
    let global = estimate_spvim(&data, &cfg).unwrap();
    let all = subpopulation_spvim(&data, &[Condition::new("x1", Comparator::Gt, f64::NEG_INFINITY)], &cfg).unwrap();
    assert_eq!(global.psi, all.psi);
    assert_eq!(global.std_errors, all.std_errors);
}

/// Analytic subpopulation importance of X1 under `Y = X1 + e` when models are
/// fit on the whole population and evaluated on `a < X1 < b`.
fn truncated_importance(a: f64, b: f64) -> f64 {
    let z = Normal::standard();
    let mass = z.cdf(b) - z.cdf(a);
    let mean = (z.pdf(a) - z.pdf(b)) / mass;
    let x_pdf = |x: f64| if x.is_finite() { x * z.pdf(x) } else { 0.0 };
    let second = 1.0 + (x_pdf(a) - x_pdf(b)) / mass;
    let var_y = second - mean * mean + 1.0;
    // full model predicts X1 (MSE 1); the null model predicts the global mean 0
    let v_full = 1.0 - 1.0 / var_y;
    let v_empty = 1.0 - (var_y + mean * mean) / var_y;
    v_full - v_empty
}

#[test]
fn subpopulation_matches_truncated_normal_values() {
    // Monte Carlo check of the closed form itself
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<(f64, f64)> = (0..400_000)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            (x, x + e)
        })
        .filter(|(x, _)| *x > 0.0)
        .collect();
    let m = draws.len() as f64;
    let ybar = draws.iter().map(|d| d.1).sum::<f64>() / m;
    let var = draws.iter().map(|d| (d.1 - ybar).powi(2)).sum::<f64>() / m;
    let mse_full = draws.iter().map(|d| (d.1 - d.0).powi(2)).sum::<f64>() / m;
    let mse_null = draws.iter().map(|d| d.1 * d.1).sum::<f64>() / m;
    let mc = (1.0 - mse_full / var) - (1.0 - mse_null / var);
    assert!((mc - truncated_importance(0.0, f64::INFINITY)).abs() < 0.01);
    assert!((truncated_importance(0.0, f64::INFINITY) - 0.7334).abs() < 1e-3);
    assert!((truncated_importance(-1.0, 1.0) - 0.2255).abs() < 1e-3);

    let data = simulate(&linear(2, &[1.0]), 12_000, 11).unwrap();
    let cfg = EstimationConfig { test: false, ..config(12) };
    let global = estimate_spvim(&data, &cfg).unwrap();
    let centered = subpopulation_spvim(
        &data,
        &[Condition::new("x1", Comparator::Gt, -1.0), Condition::new("x1", Comparator::Lt, 1.0)],
        &cfg,
    )
    .unwrap();
    assert!((centered.psi[1] - truncated_importance(-1.0, 1.0)).abs() < 0.03, "{:?}", centered.psi);
    assert!(centered.psi[1] < global.psi[1]);
    assert!(centered.diagnostics.n_eval < data.n());
    assert_eq!(centered.covariance.n, centered.diagnostics.n_eval);

    let positive = subpopulation_spvim(&data, &[Condition::new("x1", Comparator::Gt, 0.0)], &cfg).unwrap();
    assert!((positive.psi[1] - truncated_importance(0.0, f64::INFINITY)).abs() < 0.03, "{:?}", positive.psi);
}

#[test]
fn degenerate_subpopulations_are_errors() {
    let data = simulate(&linear(2, &[1.0]), 300, 13).unwrap();
    let cfg = config(1);
    for (threshold, text) in [(100.0, "no rows"), (2.5, "")] {
        let err = subpopulation_spvim(&data, &[Condition::new("x1", Comparator::Gt, threshold)], &cfg).unwrap_err();
        assert!(matches!(err, SpvimError::SubpopulationSize(_)), "{err}");
        assert!(err.to_string().contains(text));
    }
    let max = data.x().column(0).max();
    let err = subpopulation_spvim(&data, &[Condition::new("x1", Comparator::Ge, max)], &cfg).unwrap_err();
    assert!(err.to_string().contains("single observation"), "{err}");
    let err = subpopulation_spvim(&data, &[Condition::new("nope", Comparator::Gt, 0.0)], &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let data = simulate(&linear(4, &[1.0, 0.5]), 700, 14).unwrap();
    let one = estimate_spvim(&data, &config(15)).unwrap();
    let four = estimate_spvim(&data, &EstimationConfig { workers: 4, ..config(15) }).unwrap();
    assert_eq!(one.psi, four.psi);
    assert_eq!(one.covariance, four.covariance);
    assert_eq!(one.tests, four.tests);
    assert_eq!(one.diagnostics, four.diagnostics);
}

#[test]
fn fits_each_unique_subset_once() {
    let data = simulate(&linear(8, &[1.0]), 400, 16).unwrap();
    let r = estimate_spvim(&data, &EstimationConfig { test: false, ..config(17) }).unwrap();
    let d = &r.diagnostics;
    assert_eq!(d.draws, 800);
    assert_eq!(d.fitted_subsets, d.unique_subsets);
    assert_eq!(d.predictiveness.len(), d.unique_subsets);
    assert!(d.unique_subsets < d.draws);
}

#[test]
fn standard_errors_match_monte_carlo_spread() {
    let dgp = linear(3, &[1.0, 0.5]);
    let runs: Vec<SpvimResult> = (0..100)
        .map(|r| {
            let data = simulate(&dgp, 1000, 100 + r).unwrap();
            estimate_spvim(&data, &EstimationConfig { test: false, ..config(200 + r) }).unwrap()
        })
        .collect();
    for j in [1, 2] {
        let mean = runs.iter().map(|r| r.psi[j]).sum::<f64>() / 100.0;
        let sd = (runs.iter().map(|r| (r.psi[j] - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        let se = runs.iter().map(|r| r.std_errors[j]).sum::<f64>() / 100.0;
        let ratio = se / sd;
        assert!((0.75..1.33).contains(&ratio), "feature {j}: se {se} sd {sd}");
    }
}

#[test]
fn binary_outcome_with_auc() {
    let dgp = DgpSpec::Logistic { p: 3, coefficients: vec![2.0, 0.0, 1.0], intercept: 0.0 };
    let data = simulate(&dgp, 1500, 18).unwrap();
    let cfg =
        EstimationConfig { measure: PredictivenessMeasure::Auc, learner: LearnerSpec::logistic_irls(), ..config(19) };
    let r = estimate_spvim(&data, &cfg).unwrap();
    assert_additive(&r);
    assert!((r.psi[0] - 0.5).abs() < 0.05);
    assert!(r.psi[1] > r.psi[3] && r.psi[3] > r.psi[2]);
    assert!(r.tests[1].as_ref().unwrap().reject);

    let continuous = simulate(&linear(2, &[1.0]), 200, 1).unwrap();
    let err = estimate_spvim(&continuous, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn nonnegative_option_keeps_additivity() {
    let data = simulate(&linear(5, &[1.0]), 400, 20).unwrap();
    let r = estimate_spvim(&data, &EstimationConfig { nonnegative: true, test: false, ..config(21) }).unwrap();
    assert_additive(&r);
    assert!(r.psi[1..].iter().all(|&v| v >= 0.0), "{:?}", r.psi);
    assert!(r.diagnostics.warnings.iter().any(|w| w.contains("unconstrained")));
}
