//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpvimError};

/// Clip range for probabilities inside the log-loss.
pub const PROB_CLIP: f64 = 1e-6;

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean log-loss plus `ridge/2 * |beta[1..]|^2 / n`, probabilities clipped.
pub fn penalized_objective(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let n = y.len() as f64;
    let loss: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| {
            let p = sigmoid(e).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
        })
        .sum();
    let penalty: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    (loss + 0.5 * ridge * penalty) / n
}

#[derive(Debug, Clone)]
pub struct IrlsFit {
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Newton/IRLS on the ridge-penalized log-likelihood. Column 0 of `x` is the
/// intercept and is not penalized. Stops when the relative change in the
/// objective falls below `tol`.
pub fn fit_irls(x: &DMatrix<f64>, y: &[f64], ridge: f64, max_iter: usize, tol: f64) -> Result<IrlsFit> {
    let (n, k) = x.shape();
    let mut beta = DVector::zeros(k);
    let ybar = y.iter().sum::<f64>() / n as f64;
    let start = ybar.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    beta[0] = (start / (1.0 - start)).ln();
    let mut objective = penalized_objective(x, y, &beta, ridge);
    for it in 1..=max_iter {
        let eta = x * &beta;
        let mut h = DMatrix::zeros(k, k);
        let mut grad = DVector::zeros(k);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let w = (p * (1.0 - p)).max(1e-12);
            let row = x.row(i);
            for a in 0..k {
                grad[a] += (y[i] - p) * row[a];
                let wa = w * row[a];
                for b in 0..=a {
                    h[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        for a in 1..k {
            h[(a, a)] += ridge;
            grad[a] -= ridge * beta[a];
        }
        let step: DVector<f64> = match h.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => {
                let scale = h.trace() / k as f64;
                for a in 0..k {
                    h[(a, a)] += 1e-8 * scale.max(1e-12);
                }
                h.cholesky().ok_or_else(|| SpvimError::IllConditioned("IRLS Hessian is singular".into()))?.solve(&grad)
            }
        };
        // step halving keeps the iteration monotone on near-separable data
        let mut t = 1.0;
        let mut candidate = &beta + &step * t;
        let mut next = penalized_objective(x, y, &candidate, ridge);
        while next > objective && t > 1e-6 {
            t *= 0.5;
            candidate = &beta + &step * t;
            next = penalized_objective(x, y, &candidate, ridge);
        }
        let change = (objective - next).abs() / objective.abs().max(1e-12);
        beta = candidate;
        objective = next;
        if change < tol {
            return Ok(IrlsFit { beta, iterations: it, converged: true });
        }
    }
    Ok(IrlsFit { beta, iterations: max_iter, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (DMatrix<f64>, Vec<f64>) {
        let n = 20;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 2.0 - 4.75 });
        let y = (0..n).map(|i| f64::from(u8::from(i >= 10))).collect();
        (x, y)
    }

    #[test]
    fn separable_with_ridge_converges() {
        let (x, y) = separable();
        let fit = fit_irls(&x, &y, 0.1, 100, 1e-8).unwrap();
        assert!(fit.converged);
        // gradient of the penalized likelihood vanishes at the solution
        let eta = &x * &fit.beta;
        let mut g0 = 0.0;
        let mut g1 = -0.1 * fit.beta[1];
        for i in 0..20 {
            let r = y[i] - sigmoid(eta[i]);
            g0 += r;
            g1 += r * x[(i, 1)];
        }
        assert!(g0.abs() < 1e-5 && g1.abs() < 1e-5, "{g0} {g1}");
    }

    #[test]
    fn matches_gradient_descent() {
        let (x, y) = separable();
        let ridge = 0.5;
        let fit = fit_irls(&x, &y, ridge, 100, 1e-12).unwrap();
        // plain gradient descent on the same objective
        let mut b = DVector::zeros(2);
        for _ in 0..200_000 {
            let eta = &x * &b;
            let mut g = DVector::zeros(2);
            for i in 0..20 {
                let r = sigmoid(eta[i]) - y[i];
                g[0] += r;
                g[1] += r * x[(i, 1)];
            }
            g[1] += ridge * b[1];
            b -= g * 0.01;
        }
        assert!((&b - &fit.beta).amax() < 1e-4, "{b} vs {}", fit.beta);
    }
}
