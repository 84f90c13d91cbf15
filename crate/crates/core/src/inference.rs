//! Covariance estimation, Wald intervals and the sample-splitting test.
//!
//! The covariance of `psi` has two parts. The first comes from estimating
//! predictiveness on `n` observations: each row contributes
//! `phi1(O_i) = J vdot(O_i)`, where `vdot(O_i)` stacks the subset influence
//! values at row `i` and `J` is the sensitivity of the constrained solve to
//! the value vector. The second comes from sampling `m` subsets: each draw
//! contributes `phi2(S) = -U2 V^-1 U2' z(S) (z(S)' psi - v_S)` with
//! `V = U2' Z'WZ U2`. Then `Sigma = Cov(phi1) + Cov(phi2) / gamma` with
//! `gamma = m / n`, and `Var(psi_j) ~ Sigma_jj / n`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cwls::{nullspace_qr, weighted_gram, ConstraintSystem, CwlsSolution};
use crate::error::{Result, SpvimError};
use crate::kernel::EmpiricalSubsetDistribution;
use crate::predictiveness::PredictivenessEstimate;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub sigma: DMatrix<f64>,
    pub phi1_part: DMatrix<f64>,
    pub phi2_part: DMatrix<f64>,
    /// `m / n`; infinite when the subsets were enumerated rather than sampled.
    pub gamma: f64,
    pub n: usize,
    pub warnings: Vec<String>,
}

impl CovarianceEstimate {
    /// `sqrt(Sigma_jj / n)`, with negative round-off clamped to zero.
    pub fn std_errors(&self) -> Vec<f64> {
        let n = self.n as f64;
        (0..self.sigma.nrows()).map(|j| (self.sigma[(j, j)].max(0.0) / n).sqrt()).collect()
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Plug-in covariance `sum_i w_i h_i h_i' - mean mean'` of the columns of `h`.
fn weighted_covariance(h: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let q = h.nrows();
    let mut mean = DVector::zeros(q);
    for (c, &w) in weights.iter().enumerate() {
        mean.axpy(w, &h.column(c), 1.0);
    }
    let mut scaled = h.clone();
    for (c, &w) in weights.iter().enumerate() {
        let mut col = scaled.column_mut(c);
        col -= &mean;
        col *= w.sqrt();
    }
    &scaled * scaled.transpose()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub fn estimate_covariance(
    dist: &EmpiricalSubsetDistribution,
    estimates: &[PredictivenessEstimate],
    solution: &CwlsSolution,
    constraint: &ConstraintSystem,
) -> Result<CovarianceEstimate> {
    let p = dist.p();
    let q = p + 1;
    if estimates.len() != dist.len() {
        return Err(SpvimError::InvalidArgument(format!("{} estimates for {} subsets", estimates.len(), dist.len())));
    }
    let rows = &estimates[0].rows;
    let n = rows.len();
    if n == 0 {
        return Err(SpvimError::InvalidArgument("no evaluation rows".into()));
    }
    if estimates.iter().any(|e| &e.rows != rows || e.influence.len() != n) {
        return Err(SpvimError::InvalidArgument("influence vectors are not aligned on a common set of rows".into()));
    }
    let mut warnings = Vec::new();

    // phi1: J times the l x n matrix of influence values
    let vdot = DMatrix::from_fn(dist.len(), n, |k, i| estimates[k].influence[i]);
    let phi1 = &solution.sensitivity * vdot;
    let mut phi1_part = weighted_covariance(&phi1, &vec![1.0 / n as f64; n]);
    symmetrize(&mut phi1_part);

    // phi2: residuals of the fitted game on the sampled subsets
    let mut phi2_part = DMatrix::zeros(q, q);
    if p == 1 {
        warnings.push("p = 1: the null space is empty, subset-sampling variance set to zero".into());
    } else {
        let ns = nullspace_qr(constraint);
        let a = weighted_gram(dist);
        let v = ns.u2.transpose() * &a * &ns.u2;
        let chol = Cholesky::new(v).ok_or(SpvimError::IllPosed { condition: f64::INFINITY })?;
        let m = &ns.u2 * chol.solve(&ns.u2.transpose());
        let mut h = DMatrix::zeros(q, dist.len());
        for (k, (s, e)) in dist.subsets().iter().zip(estimates).enumerate() {
            let fitted = solution.psi[0] + s.indices().iter().map(|&j| solution.psi[j]).sum::<f64>();
            let r = fitted - e.value;
            let mut mz = m.column(0).into_owned();
            for &j in s.indices() {
                mz += m.column(j);
            }
            h.set_column(k, &(mz * -r));
        }
        phi2_part = weighted_covariance(&h, dist.masses());
        symmetrize(&mut phi2_part);
    }

    let gamma = if dist.draws() == 0 { f64::INFINITY } else { dist.draws() as f64 / n as f64 };
    let sigma = if gamma.is_infinite() { phi1_part.clone() } else { &phi1_part + &phi2_part / gamma };
    Ok(CovarianceEstimate { sigma, phi1_part, phi2_part, gamma, n, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

/// `psi_j -/+ z_{1 - alpha/2} sqrt(Sigma_jj / n)`. Negative diagonal entries
/// are clamped to zero and reported.
pub fn wald_intervals(psi: &[f64], cov: &CovarianceEstimate, alpha: f64) -> Result<(Vec<Interval>, Vec<String>)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SpvimError::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let z = standard_normal().inverse_cdf(1.0 - alpha / 2.0);
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(psi.len());
    for (j, &est) in psi.iter().enumerate() {
        let d = cov.sigma[(j, j)];
        if !d.is_finite() {
            return Err(SpvimError::IllConditioned(format!("non-finite variance for index {j}")));
        }
        if d < 0.0 {
            warnings.push(format!("negative variance {d:.3e} for index {j} clamped to 0"));
        }
        let half = z * (d.max(0.0) / cov.n as f64).sqrt();
        out.push(Interval { lower: est - half, upper: est + half });
    }
    Ok((out, warnings))
}

/// The quantities the split test needs from the first portion: the full
/// estimate, its covariance diagonal and the number of evaluation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TestPortion {
    pub psi: Vec<f64>,
    pub sigma_diag: Vec<f64>,
    pub n: usize,
}

/// Null predictiveness and its influence variance from the second portion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullPortion {
    pub value: f64,
    pub variance: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub delta: f64,
    pub alpha: f64,
    pub reject: bool,
    pub split_sizes: (usize, usize),
}

/// `T = ((psi_j + psi_0) - psi_0,2 - delta) / sqrt(s_j^2/n1 + 2 s_0^2/n2)`,
/// `p = 1 - Phi(T)`.
pub fn spvim_test(
    portion1: &TestPortion,
    portion2: &NullPortion,
    j: usize,
    delta: f64,
    alpha: f64,
) -> Result<TestResult> {
    let p = portion1.psi.len().saturating_sub(1);
    if j == 0 || j > p {
        return Err(SpvimError::InvalidArgument(format!("feature index {j} outside 1..={p}")));
    }
    if !(delta >= 0.0) {
        return Err(SpvimError::InvalidArgument(format!("delta must be >= 0, got {delta}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SpvimError::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let plus = portion1.psi[j] + portion1.psi[0];
    let var =
        portion1.sigma_diag[j].max(0.0) / portion1.n as f64 + 2.0 * portion2.variance.max(0.0) / portion2.n as f64;
    let se = var.sqrt();
    if !(se > 0.0) {
        return Err(SpvimError::DegenerateVariance { feature: j });
    }
    let statistic = (plus - portion2.value - delta) / se;
    let p_value = (1.0 - standard_normal().cdf(statistic)).clamp(0.0, 1.0);
    Ok(TestResult { statistic, p_value, delta, alpha, reject: p_value < alpha, split_sizes: (portion1.n, portion2.n) })
}
