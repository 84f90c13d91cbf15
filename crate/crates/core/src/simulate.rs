//! Synthetic data-generating processes and their true importance values.
//!
//! `PaperSim` draws `X ~ N_p(0, Sigma)` with unit variances and
//! `Cov(X1, X11) = 0.7`, `Cov(X3, X12) = Cov(X3, X13) = 0.3`,
//! `Cov(X5, X14) = 0.05`, and `Y | X ~ N(f1(x1) + f3(x3) + f5(x5), 1)` with
//! the step functions below. Its true R-squared importance is computed by
//! one-dimensional Gaussian quadrature of `Var(E[f | X_s])` followed by exact
//! Shapley values over the seven non-noise features.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, Task};
use crate::error::{Result, SpvimError};
use crate::kernel::{all_subsets, exact_shapley};
use crate::learners::logistic::sigmoid;
use crate::rng::{stream_rng, Stream};

pub const PAPER_SIM_MIN_P: usize = 14;

/// Breakpoints shared by the step functions (and a matching step basis).
pub const PAPER_BREAKPOINTS: [f64; 5] = [-4.0, -2.0, 0.0, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgpSpec {
    /// Independent standard normal features, `Y = sum b_j X_j + noise * e`.
    /// Missing coefficients are zero.
    Linear {
        p: usize,
        coefficients: Vec<f64>,
        noise: f64,
    },
    /// Independent standard normal features, `P(Y = 1) = sigmoid(a + sum b_j X_j)`.
    Logistic {
        p: usize,
        coefficients: Vec<f64>,
        #[serde(default)]
        intercept: f64,
    },
    PaperSim {
        p: usize,
    },
}

impl DgpSpec {
    pub fn p(&self) -> usize {
        match self {
            DgpSpec::Linear { p, .. } | DgpSpec::Logistic { p, .. } | DgpSpec::PaperSim { p } => *p,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            DgpSpec::Logistic { .. } => Task::Binary,
            _ => Task::Regression,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DgpSpec::Linear { p, coefficients, noise } => {
                if *p == 0 || coefficients.len() > *p {
                    return Err(SpvimError::Config(format!("linear DGP needs 1 <= len(coefficients) <= p = {p}")));
                }
                if !(*noise >= 0.0) {
                    return Err(SpvimError::Config("noise must be >= 0".into()));
                }
            }
            DgpSpec::Logistic { p, coefficients, .. } => {
                if *p == 0 || coefficients.len() > *p {
                    return Err(SpvimError::Config(format!("logistic DGP needs 1 <= len(coefficients) <= p = {p}")));
                }
            }
            DgpSpec::PaperSim { p } if *p < PAPER_SIM_MIN_P => {
                return Err(SpvimError::Config(format!("paper_sim needs p >= {PAPER_SIM_MIN_P}, got {p}")));
            }
            DgpSpec::PaperSim { .. } => {}
        }
        Ok(())
    }
}

/// Piecewise-constant function on the intervals `(-inf, b0], (b0, b1], ...`.
struct Steps {
    cuts: &'static [f64],
    levels: &'static [f64],
}

impl Steps {
    fn eval(&self, x: f64) -> f64 {
        self.levels[self.cuts.partition_point(|&c| c < x)]
    }
}

const F1: Steps = Steps { cuts: &[0.0], levels: &[-1.0, 1.0] };
const F3: Steps = Steps { cuts: &PAPER_BREAKPOINTS, levels: &[-6.0, -4.0, -2.0, 0.0, 2.0, 4.0] };
const F5: Steps = Steps { cuts: &PAPER_BREAKPOINTS, levels: &[-1.0, 1.0, -1.0, 1.0, -1.0, 1.0] };

/// `sign(x)` (0 at 0).
pub fn paper_f1(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        F1.eval(x)
    }
}

/// `-6` below -4, `-4` on (-4, -2], `-2` on (-2, 0], `0` on (0, 2], `2` on
/// (2, 4], `4` above 4.
pub fn paper_f3(x: f64) -> f64 {
    F3.eval(x)
}

/// Alternates -1/+1 across the intervals split at -4, -2, 0, 2, 4.
pub fn paper_f5(x: f64) -> f64 {
    F5.eval(x)
}

pub fn paper_f(x1: f64, x3: f64, x5: f64) -> f64 {
    paper_f1(x1) + paper_f3(x3) + paper_f5(x5)
}

/// Covariance matrix of the `paper_sim` features.
pub fn paper_covariance(p: usize) -> DMatrix<f64> {
    let mut s = DMatrix::identity(p, p);
    for &(a, b, c) in &[(1, 11, 0.7), (3, 12, 0.3), (3, 13, 0.3), (5, 14, 0.05)] {
        s[(a - 1, b - 1)] = c;
        s[(b - 1, a - 1)] = c;
    }
    s
}

pub fn simulate(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(SpvimError::Config("n must be positive".into()));
    }
    let p = spec.p();
    let mut rng = stream_rng(seed, Stream::Simulation, 0);
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let (x, y) = match spec {
        DgpSpec::Linear { coefficients, noise, .. } => {
            let y = (0..n)
                .map(|i| {
                    let mean: f64 = coefficients.iter().enumerate().map(|(j, b)| b * z[(i, j)]).sum();
                    mean + noise * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            (z, y)
        }
        DgpSpec::Logistic { coefficients, intercept, .. } => {
            let y = (0..n)
                .map(|i| {
                    let eta: f64 = intercept + coefficients.iter().enumerate().map(|(j, b)| b * z[(i, j)]).sum::<f64>();
                    f64::from(u8::from(rng.random::<f64>() < sigmoid(eta)))
                })
                .collect();
            (z, y)
        }
        DgpSpec::PaperSim { .. } => {
            let l = paper_covariance(p).cholesky().expect("paper covariance is positive definite").unpack();
            let x = z * l.transpose();
            let y = (0..n)
                .map(|i| paper_f(x[(i, 0)], x[(i, 2)], x[(i, 4)]) + rng.sample::<f64, _>(StandardNormal))
                .collect();
            (x, y)
        }
    };
    Dataset::new(names, x, y, spec.task())
}

/// True R-squared importance `(psi_0, ..., psi_p)`, where available.
pub fn true_spvim(spec: &DgpSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    match spec {
        DgpSpec::Linear { p, coefficients, noise } => {
            let total: f64 = coefficients.iter().map(|b| b * b).sum::<f64>() + noise * noise;
            if total == 0.0 {
                return Err(SpvimError::Config("degenerate linear DGP: zero outcome variance".into()));
            }
            let mut psi = vec![0.0; p + 1];
            for (j, b) in coefficients.iter().enumerate() {
                psi[j + 1] = b * b / total;
            }
            Ok(psi)
        }
        DgpSpec::Logistic { .. } => Err(SpvimError::Config("no closed-form importance for the logistic DGP".into())),
        DgpSpec::PaperSim { p } => {
            let mut psi = vec![0.0; p + 1];
            for (j, v) in PAPER_RELEVANT.iter().zip(paper_relevant_shapley()) {
                psi[*j] = v;
            }
            Ok(psi)
        }
    }
}

/// Features outside the noise block, 1-based.
const PAPER_RELEVANT: [usize; 7] = [1, 3, 5, 11, 12, 13, 14];

/// Signal feature, its step function, and the other members of its block.
fn paper_blocks() -> [(usize, &'static Steps, Vec<usize>); 3] {
    [(1, &F1, vec![11]), (3, &F3, vec![12, 13]), (5, &F5, vec![14])]
}

fn normal() -> Normal {
    Normal::standard()
}

/// `P(lo < X <= hi)` for `X ~ N(mu, sd^2)`.
fn interval_prob(lo: f64, hi: f64, mu: f64, sd: f64) -> f64 {
    let n = normal();
    let cdf = |t: f64| if t.is_infinite() { f64::from(u8::from(t > 0.0)) } else { n.cdf((t - mu) / sd) };
    cdf(hi) - cdf(lo)
}

/// `E[f(X)]` and `E[f(X)^2]` for `X ~ N(mu, sd^2)`.
fn step_moments(f: &Steps, mu: f64, sd: f64) -> (f64, f64) {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (k, level) in f.levels.iter().enumerate() {
        let lo = if k == 0 { f64::NEG_INFINITY } else { f.cuts[k - 1] };
        let hi = f.cuts.get(k).copied().unwrap_or(f64::INFINITY);
        let pr = interval_prob(lo, hi, mu, sd);
        m1 += level * pr;
        m2 += level * level * pr;
    }
    (m1, m2)
}

/// `Var(E[f(X_j) | X_T])` where the observed block members are `observed`
/// (0-based columns of the covariance matrix) and `X_j` has unit variance.
fn conditional_variance(cov: &DMatrix<f64>, j: usize, observed: &[usize], f: &Steps) -> f64 {
    let (mean, second) = step_moments(f, 0.0, 1.0);
    let total_var = second - mean * mean;
    if observed.contains(&j) {
        return total_var;
    }
    if observed.is_empty() {
        return 0.0;
    }
    let stt = DMatrix::from_fn(observed.len(), observed.len(), |a, b| cov[(observed[a], observed[b])]);
    let sjt = DVector::from_iterator(observed.len(), observed.iter().map(|&t| cov[(j, t)]));
    // E[X_j | X_T] = mu has variance r2 = s' S^-1 s, residual variance 1 - r2
    let r2 = sjt.dot(&stt.cholesky().expect("block covariance is positive definite").solve(&sjt));
    if r2 <= 0.0 {
        return 0.0;
    }
    let (sd_mu, sd_resid) = (r2.sqrt(), (1.0 - r2).sqrt());
    // Simpson's rule for E[g(mu)^2] over mu = sd_mu * z, z standard normal
    let steps = 4000;
    let (a, b) = (-10.0, 10.0);
    let h = (b - a) / steps as f64;
    let phi = normal();
    let mut acc = 0.0;
    for i in 0..=steps {
        let z = a + i as f64 * h;
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let g = step_moments(f, sd_mu * z, sd_resid).0;
        acc += w * g * g * statrs::distribution::Continuous::pdf(&phi, z);
    }
    acc * h / 3.0 - mean * mean
}

/// Exact R-squared Shapley values for `[X1, X3, X5, X11, X12, X13, X14]`.
pub fn paper_relevant_shapley() -> Vec<f64> {
    let cov = paper_covariance(PAPER_SIM_MIN_P);
    let blocks = paper_blocks();
    let var_f: f64 = blocks.iter().map(|(j, f, _)| conditional_variance(&cov, j - 1, &[j - 1], f)).sum();
    let total = var_f + 1.0;
    let players = PAPER_RELEVANT.len();
    let v: Vec<f64> = all_subsets(players)
        .expect("seven players")
        .iter()
        .map(|s| {
            let cols: Vec<usize> = s.indices().iter().map(|&k| PAPER_RELEVANT[k - 1]).collect();
            let explained: f64 = blocks
                .iter()
                .map(|(j, f, others)| {
                    let observed: Vec<usize> = std::iter::once(*j)
                        .chain(others.iter().copied())
                        .filter(|c| cols.contains(c))
                        .map(|c| c - 1)
                        .collect();
                    conditional_variance(&cov, j - 1, &observed, f)
                })
                .sum();
            explained / total
        })
        .collect();
    exact_shapley(&v, players).expect("seven players")[1..].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_examples() {
        assert_eq!(paper_f3(3.0), 2.0);
        assert_eq!(paper_f3(5.0), 4.0);
        assert_eq!(paper_f3(-1.0), -2.0);
        assert_eq!(paper_f3(1.0), 0.0);
        assert_eq!(paper_f3(-4.0), -6.0);
        assert_eq!(paper_f1(-0.3), -1.0);
        assert_eq!(paper_f1(0.0), 0.0);
        assert_eq!(paper_f5(-3.0), 1.0);
        assert_eq!(paper_f5(4.5), 1.0);
        assert_eq!(paper_f5(3.0), -1.0);
    }

    #[test]
    fn paper_sim_correlations() {
        let d = simulate(&DgpSpec::PaperSim { p: 14 }, 100_000, 1).unwrap();
        let x = d.x();
        let corr = |a: usize, b: usize| {
            let (ca, cb) = (x.column(a - 1), x.column(b - 1));
            let (ma, mb) = (ca.mean(), cb.mean());
            let cov = ca.iter().zip(cb.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / x.nrows() as f64;
            cov
        };
        assert!((corr(1, 11) - 0.7).abs() < 0.02);
        assert!((corr(3, 12) - 0.3).abs() < 0.02);
        assert!((corr(12, 13)).abs() < 0.02);
        assert!((corr(5, 14) - 0.05).abs() < 0.02);
        assert!(simulate(&DgpSpec::PaperSim { p: 13 }, 10, 1).is_err());
    }

    #[test]
    fn paper_truth_matches_independent_computation() {
        // values from an independent quadrature + enumeration in another language
        let expected = [0.1917, 0.2915, 0.2290, 0.0373, 0.0106, 0.0106, 0.0001];
        let got = paper_relevant_shapley();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-4, "{got:?}");
        }
    }

    #[test]
    fn zero_coefficient_linear_has_no_signal() {
        let spec = DgpSpec::Linear { p: 3, coefficients: vec![0.0, 0.0], noise: 1.0 };
        let d = simulate(&spec, 20_000, 4).unwrap();
        // oracle predictor is the constant 0
        let y = d.y();
        let mu = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / y.len() as f64;
        let mse = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!((1.0 - mse / var).abs() < 0.02);
        assert_eq!(true_spvim(&spec).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn linear_truth() {
        let spec = DgpSpec::Linear { p: 3, coefficients: vec![1.0], noise: 1.0 };
        assert_eq!(true_spvim(&spec).unwrap(), vec![0.0, 0.5, 0.0, 0.0]);
    }
}
