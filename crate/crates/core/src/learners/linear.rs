//! Least squares on normal equations, with an automatic ridge fallback for
//! near-singular Gram matrices.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, SpvimError};

/// Gram matrices with an estimated condition number above this switch to
/// the ridge fallback.
pub const MAX_GRAM_CONDITION: f64 = 1e12;
/// Fallback penalty, relative to `trace / k`.
pub const FALLBACK_RIDGE: f64 = 1e-8;

/// Solves `(X'X + ridge D) beta = X'y`, where `D` is the identity except for a
/// zero in the intercept position (column 0). `gram` and `xty` are `X'X` and
/// `X'y` for the selected columns.
///
/// The condition number is estimated from the Cholesky pivots
/// (`(max L_ii / min L_ii)^2`, a lower bound on the 2-norm condition).
pub fn solve_normal_equations(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    ridge: f64,
    fallback: bool,
) -> Result<DVector<f64>> {
    let k = gram.nrows();
    let penalized = |lambda: f64| {
        let mut g = gram.clone();
        for i in 1..k {
            g[(i, i)] += lambda;
        }
        g
    };
    if let Some(chol) = Cholesky::new(penalized(ridge)) {
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..k {
            lo = lo.min(l[(i, i)].abs());
            hi = hi.max(l[(i, i)].abs());
        }
        if lo > 0.0 && (hi / lo).powi(2) <= MAX_GRAM_CONDITION {
            return Ok(chol.solve(xty));
        }
    }
    if !fallback {
        return Err(SpvimError::IllConditioned(
            "normal equations are singular; set a ridge penalty or enable the fallback".into(),
        ));
    }
    let scale = gram.trace() / k as f64;
    let lambda = ridge + FALLBACK_RIDGE * scale.max(f64::MIN_POSITIVE);
    let mut g = penalized(lambda);
    // a constant-zero column can only be fixed by also shrinking the intercept
    if k > 0 && g[(0, 0)] == 0.0 {
        g[(0, 0)] = lambda;
    }
    Cholesky::new(g)
        .map(|c| c.solve(xty))
        .ok_or_else(|| SpvimError::IllConditioned("ridge-regularized normal equations failed".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit() {
        // y = 1 + 2x
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0]);
        let beta = solve_normal_equations(&(x.transpose() * &x), &(x.transpose() * y), 0.0, true).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-12 && (beta[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_gram_falls_back_or_errors() {
        // duplicated column
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0]);
        let g = x.transpose() * &x;
        let b = x.transpose() * &y;
        assert!(solve_normal_equations(&g, &b, 0.0, false).is_err());
        let beta = solve_normal_equations(&g, &b, 0.0, true).unwrap();
        let fitted = &x * beta;
        assert!((fitted - y).amax() < 1e-6);
    }
}
