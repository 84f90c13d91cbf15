//! Constrained weighted least squares over sampled subsets.
//!
//! Minimizes `sum_k w_k (z(s_k)' psi - v_k)^2` subject to `G psi = c`, where
//! the two constraint rows pin `psi_0` to the empty-set value and make the
//! feature values add up to `v(N) - v(empty)`. The KKT system
//!
//! ```text
//! [ 2 Z'WZ  G' ] [ psi    ]   [ 2 Z'W v ]
//! [ G       0  ] [ lambda ] = [ c       ]
//! ```
//!
//! is solved with a Bunch-Kaufman factorization. A second route through the
//! QR basis of `G'` (fix the range component from the constraint, solve an
//! unconstrained problem on the null space) is provided for checking and is
//! what the covariance estimate builds on.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpvimError};
use crate::kernel::{EmpiricalSubsetDistribution, FeatureSubset};
use crate::linalg::{condition_number, householder_qr, SymmetricIndefinite};

/// KKT systems with a larger 2-norm condition number are rejected.
pub const MAX_KKT_CONDITION: f64 = 1e10;

/// `G psi = c` with `G = [z(empty)'; z(N)']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSystem {
    p: usize,
    c: [f64; 2],
}

impl ConstraintSystem {
    pub fn new(p: usize, v_empty: f64, v_full: f64) -> Result<Self> {
        if p == 0 {
            return Err(SpvimError::InvalidArgument("p must be at least 1".into()));
        }
        if !v_empty.is_finite() || !v_full.is_finite() {
            return Err(SpvimError::InvalidArgument("constraint values must be finite".into()));
        }
        Ok(Self { p, c: [v_empty, v_full] })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn c(&self) -> [f64; 2] {
        self.c
    }

    pub fn g(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(2, self.p + 1);
        g[(0, 0)] = 1.0;
        for j in 0..=self.p {
            g[(1, j)] = 1.0;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwlsSolution {
    pub psi: Vec<f64>,
    pub lambda: [f64; 2],
    pub kkt_condition_number: f64,
    /// Linear map from the value vector (aligned with the unique subsets) to
    /// `psi`, with the constraint values read from the empty- and full-set
    /// entries. `(p + 1) x l`.
    #[serde(skip)]
    pub sensitivity: DMatrix<f64>,
}

/// `Z'WZ` over the unique subsets.
pub fn weighted_gram(dist: &EmpiricalSubsetDistribution) -> DMatrix<f64> {
    let p = dist.p();
    let mut a = DMatrix::zeros(p + 1, p + 1);
    let mut support = Vec::with_capacity(p + 1);
    for (s, &w) in dist.subsets().iter().zip(dist.masses()) {
        if w == 0.0 {
            continue;
        }
        support.clear();
        support.push(0);
        support.extend_from_slice(s.indices());
        for &c in &support {
            for &r in &support {
                a[(r, c)] += w;
            }
        }
    }
    a
}

/// `Z'W v`.
pub fn weighted_moment(dist: &EmpiricalSubsetDistribution, v: &[f64]) -> DVector<f64> {
    let mut b = DVector::zeros(dist.p() + 1);
    for ((s, &w), &value) in dist.subsets().iter().zip(dist.masses()).zip(v) {
        b[0] += w * value;
        for &j in s.indices() {
            b[j] += w * value;
        }
    }
    b
}

fn check_inputs(dist: &EmpiricalSubsetDistribution, v: &[f64], constraint: &ConstraintSystem) -> Result<()> {
    let p = dist.p();
    if constraint.p() != p {
        return Err(SpvimError::InvalidArgument(format!(
            "constraint is for p = {}, distribution for p = {p}",
            constraint.p()
        )));
    }
    if dist.len() < p + 1 {
        return Err(SpvimError::UnderIdentified { unique: dist.len(), p });
    }
    if v.len() != dist.len() {
        return Err(SpvimError::InvalidArgument(format!("{} values for {} subsets", v.len(), dist.len())));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(SpvimError::InvalidArgument(format!("non-finite predictiveness for subset {}", dist.subsets()[i])));
    }
    Ok(())
}

fn kkt_matrix(a: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let q = a.nrows();
    let mut k = DMatrix::zeros(q + 2, q + 2);
    k.view_mut((0, 0), (q, q)).copy_from(&(a * 2.0));
    k.view_mut((0, q), (q, 2)).copy_from(&g.transpose());
    k.view_mut((q, 0), (2, q)).copy_from(g);
    k
}

/// Solves the constrained problem through its KKT system.
pub fn solve_cwls(
    dist: &EmpiricalSubsetDistribution,
    v: &[f64],
    constraint: &ConstraintSystem,
) -> Result<CwlsSolution> {
    check_inputs(dist, v, constraint)?;
    let p = dist.p();
    let q = p + 1;
    let a = weighted_gram(dist);
    let kkt = kkt_matrix(&a, &constraint.g());
    let condition = condition_number(&kkt);
    if !(condition <= MAX_KKT_CONDITION) {
        return Err(SpvimError::IllPosed { condition });
    }
    let factor = SymmetricIndefinite::factor(&kkt)?;

    let b = weighted_moment(dist, v);
    let mut rhs = DVector::zeros(q + 2);
    rhs.rows_mut(0, q).copy_from(&(b * 2.0));
    let [c0, c1] = constraint.c();
    rhs[q] = c0;
    rhs[q + 1] = c1;
    let sol = factor.solve(&rhs);

    let (empty, full) = (dist.empty_position(), dist.full_position());
    let mut unit = DMatrix::zeros(q + 2, dist.len());
    for (k, (s, &w)) in dist.subsets().iter().zip(dist.masses()).enumerate() {
        unit[(0, k)] = 2.0 * w;
        for &j in s.indices() {
            unit[(j, k)] = 2.0 * w;
        }
    }
    unit[(q, empty)] = 1.0;
    unit[(q + 1, full)] = 1.0;
    let sensitivity = factor.solve_matrix(&unit).rows(0, q).into_owned();

    Ok(CwlsSolution {
        psi: sol.rows(0, q).iter().copied().collect(),
        lambda: [sol[q], sol[q + 1]],
        kkt_condition_number: condition,
        sensitivity,
    })
}

/// Orthonormal split of `R^(p+1)` into the range (`u1`) and null space
/// (`u2`) of `G'`, with `G' = u1 r`.
#[derive(Debug, Clone)]
pub struct NullSpace {
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// QR decomposition of `G'`. For `p = 1` the null space is empty and `u2`
/// has no columns.
pub fn nullspace_qr(constraint: &ConstraintSystem) -> NullSpace {
    let p = constraint.p();
    let (q, r) = householder_qr(&constraint.g().transpose());
    NullSpace { u1: q.columns(0, 2).into_owned(), u2: q.columns(2, p - 1).into_owned(), r }
}

/// Same problem as [`solve_cwls`], solved in null-space coordinates:
/// `R' theta_1 = c`, then least squares for `theta_2`.
pub fn solve_cwls_nullspace(
    dist: &EmpiricalSubsetDistribution,
    v: &[f64],
    constraint: &ConstraintSystem,
) -> Result<Vec<f64>> {
    check_inputs(dist, v, constraint)?;
    let ns = nullspace_qr(constraint);
    let [c0, c1] = constraint.c();
    let rt = ns.r.transpose();
    // R' is lower triangular
    let t0 = c0 / rt[(0, 0)];
    let t1 = (c1 - rt[(1, 0)] * t0) / rt[(1, 1)];
    let fixed = &ns.u1 * DVector::from_vec(vec![t0, t1]);
    if ns.u2.ncols() == 0 {
        return Ok(fixed.iter().copied().collect());
    }
    let a = weighted_gram(dist);
    let b = weighted_moment(dist, v);
    let reduced = ns.u2.transpose() * &a * &ns.u2;
    let rhs = ns.u2.transpose() * (b - &a * &fixed);
    let chol = Cholesky::new(reduced)
        .ok_or_else(|| SpvimError::IllConditioned("null-space normal equations are not positive definite".into()))?;
    let theta2 = chol.solve(&rhs);
    Ok((fixed + &ns.u2 * theta2).iter().copied().collect())
}

/// Options for [`solve_cwls_nonnegative`].
#[derive(Debug, Clone, Copy)]
pub struct NonnegativeOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for NonnegativeOptions {
    fn default() -> Self {
        Self { tolerance: 1e-13, max_sweeps: 10_000 }
    }
}

/// Euclidean projection onto `{x >= 0, sum x = total}`.
fn project_simplex(x: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - total) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|&xi| (xi - theta).max(0.0)).collect()
}

/// Variant with `psi_j >= 0` for every feature, by pairwise projected
/// coordinate descent. Meant for modest `p` (each sweep is `O(p^3)`).
pub fn solve_cwls_nonnegative(
    dist: &EmpiricalSubsetDistribution,
    v: &[f64],
    constraint: &ConstraintSystem,
    options: NonnegativeOptions,
) -> Result<Vec<f64>> {
    let unconstrained = solve_cwls(dist, v, constraint)?;
    let p = dist.p();
    let [c0, c1] = constraint.c();
    let total = c1 - c0;
    if total < 0.0 {
        return Err(SpvimError::Infeasible(format!(
            "v(N) - v(empty) = {total:.3e} < 0 cannot be split into nonnegative parts"
        )));
    }
    let a = weighted_gram(dist);
    let b = weighted_moment(dist, v);
    let mut psi = vec![c0];
    psi.extend(project_simplex(&unconstrained.psi[1..], total));
    let psi_vec = DVector::from_vec(psi);
    // gradient of psi' A psi - 2 b' psi
    let mut grad: Vec<f64> = ((&a * &psi_vec - &b) * 2.0).iter().copied().collect();
    let mut psi: Vec<f64> = psi_vec.iter().copied().collect();

    for _ in 0..options.max_sweeps {
        let mut largest = 0.0f64;
        for i in 1..=p {
            for j in (i + 1)..=p {
                let curvature = a[(i, i)] + a[(j, j)] - 2.0 * a[(i, j)];
                if curvature <= 0.0 {
                    continue;
                }
                let t = (-(grad[i] - grad[j]) / (2.0 * curvature)).clamp(-psi[i], psi[j]);
                if t == 0.0 {
                    continue;
                }
                psi[i] += t;
                psi[j] -= t;
                for (r, g) in grad.iter_mut().enumerate() {
                    *g += 2.0 * t * (a[(r, i)] - a[(r, j)]);
                }
                largest = largest.max(t.abs());
            }
        }
        if largest <= options.tolerance * (1.0 + total.abs()) {
            return Ok(psi);
        }
    }
    Err(SpvimError::IllConditioned("nonnegative solve did not converge".into()))
}

/// Residuals `z(s)' psi - v_s` for the unique subsets.
pub fn residuals(subsets: &[FeatureSubset], psi: &[f64], v: &[f64]) -> Vec<f64> {
    subsets.iter().zip(v).map(|(s, &value)| psi[0] + s.indices().iter().map(|&j| psi[j]).sum::<f64>() - value).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{all_subsets, exact_shapley, sample_subsets};
    use approx::assert_relative_eq;

    fn p2_uniform() -> EmpiricalSubsetDistribution {
        EmpiricalSubsetDistribution::with_masses(2, all_subsets(2).unwrap(), vec![0.25; 4]).unwrap()
    }

    #[test]
    fn p2_full_enumeration_example() {
        let dist = p2_uniform();
        let v = [0.0, 0.3, 0.5, 0.6];
        let c = ConstraintSystem::new(2, 0.0, 0.6).unwrap();
        let sol = solve_cwls(&dist, &v, &c).unwrap();
        assert_relative_eq!(sol.psi[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(sol.psi[1], 0.2, epsilon = 1e-14);
        assert_relative_eq!(sol.psi[2], 0.4, epsilon = 1e-14);
        let g = c.g();
        let gpsi = &g * DVector::from_vec(sol.psi.clone());
        assert!((gpsi[0] - 0.0).abs() < 1e-12 && (gpsi[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_reproduces_solution() {
        let dist = sample_subsets(5, 200, 4).unwrap();
        let v: Vec<f64> =
            dist.subsets().iter().map(|s| (s.len() as f64).sqrt() * 0.1 + s.mask() as f64 * 1e-3).collect();
        let c = ConstraintSystem::new(5, v[dist.empty_position()], v[dist.full_position()]).unwrap();
        let sol = solve_cwls(&dist, &v, &c).unwrap();
        let via_map = &sol.sensitivity * DVector::from_vec(v.clone());
        for j in 0..6 {
            assert_relative_eq!(via_map[j], sol.psi[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn under_identified_and_mismatch() {
        let subsets = vec![FeatureSubset::empty(3), FeatureSubset::full(3)];
        let dist = EmpiricalSubsetDistribution::with_masses(3, subsets, vec![0.5, 0.5]).unwrap();
        let c = ConstraintSystem::new(3, 0.0, 1.0).unwrap();
        assert!(matches!(solve_cwls(&dist, &[0.0, 1.0], &c), Err(SpvimError::UnderIdentified { unique: 2, p: 3 })));
        let dist = p2_uniform();
        let c = ConstraintSystem::new(2, 0.0, 1.0).unwrap();
        assert!(solve_cwls(&dist, &[0.0, 1.0], &c).is_err());
    }

    #[test]
    fn rank_deficient_design_is_ill_posed() {
        // features 1 and 2 always enter together, so only their sum is identified
        let p = 3;
        let s = |ix: &[usize]| FeatureSubset::new(ix.iter().copied(), p).unwrap();
        let subsets = vec![s(&[]), s(&[3]), s(&[1, 2]), s(&[1, 2, 3])];
        let dist = EmpiricalSubsetDistribution::with_masses(p, subsets, vec![0.25; 4]).unwrap();
        let c = ConstraintSystem::new(p, 0.0, 1.0).unwrap();
        let err = solve_cwls(&dist, &[0.0, 0.3, 0.5, 1.0], &c).unwrap_err();
        assert!(matches!(err, SpvimError::IllPosed { .. }), "{err}");
    }

    #[test]
    fn nullspace_examples() {
        for p in 2..=7 {
            let c = ConstraintSystem::new(p, 0.1, 0.9).unwrap();
            let ns = nullspace_qr(&c);
            assert_eq!(ns.u2.ncols(), p - 1);
            let i2 = DMatrix::<f64>::identity(2, 2);
            let ip = DMatrix::<f64>::identity(p - 1, p - 1);
            assert!((ns.u1.transpose() * &ns.u1 - i2).amax() < 1e-12);
            assert!((ns.u2.transpose() * &ns.u2 - ip).amax() < 1e-12);
            assert!((ns.u1.transpose() * &ns.u2).amax() < 1e-12);
            assert!((c.g() * &ns.u2).amax() < 1e-12);
            assert!((&ns.u1 * &ns.r - c.g().transpose()).amax() < 1e-12);
            assert!(ns.r[(0, 0)].abs() > 0.0 && ns.r[(1, 1)].abs() > 0.0);
        }
        let ns = nullspace_qr(&ConstraintSystem::new(1, 0.0, 1.0).unwrap());
        assert_eq!(ns.u2.ncols(), 0);
    }

    #[test]
    fn nullspace_route_matches_kkt() {
        let dist = sample_subsets(6, 300, 8).unwrap();
        let v: Vec<f64> = dist.subsets().iter().map(|s| (s.mask() as f64 * 0.37).sin()).collect();
        let c = ConstraintSystem::new(6, v[dist.empty_position()], v[dist.full_position()]).unwrap();
        let kkt = solve_cwls(&dist, &v, &c).unwrap();
        let ns = solve_cwls_nullspace(&dist, &v, &c).unwrap();
        for j in 0..=6 {
            assert_relative_eq!(kkt.psi[j], ns[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn p1_is_determined_by_constraint() {
        let dist = sample_subsets(1, 10, 1).unwrap();
        assert_eq!(dist.len(), 2);
        let c = ConstraintSystem::new(1, 0.2, 0.7).unwrap();
        let sol = solve_cwls(&dist, &[0.2, 0.7], &c).unwrap();
        assert_relative_eq!(sol.psi[0], 0.2, epsilon = 1e-14);
        assert_relative_eq!(sol.psi[1], 0.5, epsilon = 1e-14);
        let ns = solve_cwls_nullspace(&dist, &[0.2, 0.7], &c).unwrap();
        assert_relative_eq!(ns[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn exact_masses_give_shapley_values() {
        let p = 4;
        let dist = EmpiricalSubsetDistribution::exact(p).unwrap();
        let v: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 13) as f64 / 13.0).collect();
        let c = ConstraintSystem::new(p, v[0], v[15]).unwrap();
        let sol = solve_cwls(&dist, &v, &c).unwrap();
        let exact = exact_shapley(&v, p).unwrap();
        for j in 0..=p {
            assert_relative_eq!(sol.psi[j], exact[j], epsilon = 1e-10);
        }
    }

    fn brute_force_nonnegative(dist: &EmpiricalSubsetDistribution, v: &[f64], c: &ConstraintSystem) -> (Vec<f64>, f64) {
        // enumerate supports; solve the equality problem on each with zeros forced
        let p = dist.p();
        let a = weighted_gram(dist);
        let b = weighted_moment(dist, v);
        let objective = |psi: &[f64]| {
            let x = DVector::from_vec(psi.to_vec());
            (x.transpose() * &a * &x)[0] - 2.0 * b.dot(&x)
        };
        let [c0, c1] = c.c();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for mask in 1u32..(1 << p) {
            let support: Vec<usize> = (1..=p).filter(|j| mask >> (j - 1) & 1 == 1).collect();
            // variables: support entries; minimize with sum = c1 - c0 via Lagrange
            let k = support.len();
            let mut m = DMatrix::zeros(k + 1, k + 1);
            let mut r = DVector::zeros(k + 1);
            for (ii, &i) in support.iter().enumerate() {
                for (jj, &j) in support.iter().enumerate() {
                    m[(ii, jj)] = 2.0 * a[(i, j)];
                }
                m[(ii, k)] = 1.0;
                m[(k, ii)] = 1.0;
                r[ii] = 2.0 * (b[i] - a[(i, 0)] * c0);
            }
            r[k] = c1 - c0;
            let Some(sol) = m.lu().solve(&r) else { continue };
            if sol.iter().take(k).any(|&x| x < -1e-12) {
                continue;
            }
            let mut psi = vec![0.0; p + 1];
            psi[0] = c0;
            for (ii, &i) in support.iter().enumerate() {
                psi[i] = sol[ii].max(0.0);
            }
            let f = objective(&psi);
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((psi, f));
            }
        }
        best.unwrap()
    }

    #[test]
    fn nonnegative_matches_active_set_enumeration() {
        for seed in 0..20u64 {
            let p = 4;
            let dist = sample_subsets(p, 60, seed).unwrap();
            // a game with a strongly negative marginal for feature 2
            let v: Vec<f64> = dist
                .subsets()
                .iter()
                .map(|s| {
                    0.4 * f64::from(s.contains(1)) - 0.15 * f64::from(s.contains(2))
                        + 0.2 * f64::from(s.contains(3) && s.contains(4))
                        + 0.05 * ((s.mask() + seed) as f64).sin()
                })
                .collect();
            let (e, f) = (v[dist.empty_position()], v[dist.full_position()]);
            let c = ConstraintSystem::new(p, e, f).unwrap();
            if f - e < 0.0 {
                assert!(solve_cwls_nonnegative(&dist, &v, &c, NonnegativeOptions::default()).is_err());
                continue;
            }
            let got = solve_cwls_nonnegative(&dist, &v, &c, NonnegativeOptions::default()).unwrap();
            let (expected, _) = brute_force_nonnegative(&dist, &v, &c);
            for j in 0..=p {
                assert!((got[j] - expected[j]).abs() < 1e-7, "seed {seed}: {got:?} vs {expected:?}");
            }
            assert!(got[1..].iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn simplex_projection() {
        let x = project_simplex(&[0.5, -0.2, 0.9], 1.0);
        assert_relative_eq!(x.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(x.iter().all(|&v| v >= 0.0));
        assert_eq!(x[1], 0.0);
    }
}
