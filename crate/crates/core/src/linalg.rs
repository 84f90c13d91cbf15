//! Small dense factorizations: Bunch-Kaufman `LDL^T` for symmetric
//! indefinite systems and a complete Householder QR.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpvimError};

/// `P A P^T = L D L^T` with `D` block diagonal (1x1 and 2x2 blocks).
#[derive(Debug, Clone)]
pub struct SymmetricIndefinite {
    n: usize,
    l: DMatrix<f64>,
    /// (start, size) of each diagonal block.
    blocks: Vec<(usize, usize)>,
    d: DMatrix<f64>,
    /// Row/column interchanges in the order they were applied.
    swaps: Vec<(usize, usize)>,
}

impl SymmetricIndefinite {
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(SpvimError::InvalidArgument("matrix must be square".into()));
        }
        let alpha = (1.0 + 17f64.sqrt()) / 8.0;
        let mut w = a.clone();
        let mut l = DMatrix::<f64>::identity(n, n);
        let mut d = DMatrix::<f64>::zeros(n, n);
        let mut blocks = Vec::new();
        let mut swaps = Vec::new();
        let scale = a.amax().max(f64::MIN_POSITIVE);

        let mut k = 0;
        while k < n {
            let absakk = w[(k, k)].abs();
            let (imax, colmax) =
                ((k + 1)..n)
                    .map(|i| (i, w[(i, k)].abs()))
                    .fold((k, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if absakk.max(colmax) <= f64::EPSILON * scale * 1e-3 {
                return Err(SpvimError::IllConditioned(format!(
                    "symmetric factorization hit a zero pivot at column {k}"
                )));
            }
            let (kp, step) = if absakk >= alpha * colmax {
                (k, 1)
            } else {
                let rowmax = (k..n).filter(|&j| j != imax).map(|j| w[(imax, j)].abs()).fold(0.0, f64::max);
                if absakk * rowmax >= alpha * colmax * colmax {
                    (k, 1)
                } else if w[(imax, imax)].abs() >= alpha * rowmax {
                    (imax, 1)
                } else {
                    (imax, 2)
                }
            };
            let kk = k + step - 1;
            if kp != kk {
                w.swap_rows(kk, kp);
                w.swap_columns(kk, kp);
                for c in 0..k {
                    l.swap((kk, c), (kp, c));
                }
                swaps.push((kk, kp));
            }

            if step == 1 {
                let pivot = w[(k, k)];
                d[(k, k)] = pivot;
                for i in (k + 1)..n {
                    l[(i, k)] = w[(i, k)] / pivot;
                }
                for j in (k + 1)..n {
                    let wjk = w[(j, k)];
                    for i in (k + 1)..n {
                        w[(i, j)] -= l[(i, k)] * wjk;
                    }
                }
            } else {
                let (a11, a21, a22) = (w[(k, k)], w[(k + 1, k)], w[(k + 1, k + 1)]);
                let det = a11 * a22 - a21 * a21;
                if det == 0.0 {
                    return Err(SpvimError::IllConditioned(format!("singular 2x2 pivot at column {k}")));
                }
                d[(k, k)] = a11;
                d[(k + 1, k)] = a21;
                d[(k, k + 1)] = a21;
                d[(k + 1, k + 1)] = a22;
                for i in (k + 2)..n {
                    let (c0, c1) = (w[(i, k)], w[(i, k + 1)]);
                    l[(i, k)] = (a22 * c0 - a21 * c1) / det;
                    l[(i, k + 1)] = (a11 * c1 - a21 * c0) / det;
                }
                for j in (k + 2)..n {
                    let (c0, c1) = (w[(j, k)], w[(j, k + 1)]);
                    for i in (k + 2)..n {
                        w[(i, j)] -= l[(i, k)] * c0 + l[(i, k + 1)] * c1;
                    }
                }
            }
            blocks.push((k, step));
            k += step;
        }
        Ok(Self { n, l, blocks, d, swaps })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        for &(i, j) in &self.swaps {
            x.swap_rows(i, j);
        }
        // L y = P b
        for c in 0..self.n {
            let xc = x[c];
            for r in (c + 1)..self.n {
                x[r] -= self.l[(r, c)] * xc;
            }
        }
        for &(s, size) in &self.blocks {
            if size == 1 {
                x[s] /= self.d[(s, s)];
            } else {
                let (a11, a21, a22) = (self.d[(s, s)], self.d[(s + 1, s)], self.d[(s + 1, s + 1)]);
                let det = a11 * a22 - a21 * a21;
                let (b0, b1) = (x[s], x[s + 1]);
                x[s] = (a22 * b0 - a21 * b1) / det;
                x[s + 1] = (a11 * b1 - a21 * b0) / det;
            }
        }
        // L^T z = y
        for c in (0..self.n).rev() {
            let mut acc = x[c];
            for r in (c + 1)..self.n {
                acc -= self.l[(r, c)] * x[r];
            }
            x[c] = acc;
        }
        for &(i, j) in self.swaps.iter().rev() {
            x.swap_rows(i, j);
        }
        x
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col = self.solve(&b.column(c).into_owned());
            out.set_column(c, &col);
        }
        out
    }

    /// Number of 2x2 pivots used.
    pub fn two_by_two_pivots(&self) -> usize {
        self.blocks.iter().filter(|b| b.1 == 2).count()
    }
}

/// 2-norm condition number from the singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Complete QR factorization `A = Q [R; 0]` for a tall `m x k` matrix.
/// Returns the full `m x m` orthogonal `Q` and the `k x k` upper triangle.
pub fn householder_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, k) = a.shape();
    let mut r = a.clone();
    let mut q = DMatrix::<f64>::identity(m, m);
    for c in 0..k.min(m) {
        let x = r.view((c, c), (m - c, 1)).into_owned();
        let norm = x.norm();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        // R <- H R on the trailing block, Q <- Q H
        for j in c..k {
            let dot: f64 = (0..m - c).map(|i| v[i] * r[(c + i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in 0..m - c {
                r[(c + i, j)] -= f * v[i];
            }
        }
        for i in 0..m {
            let dot: f64 = (0..m - c).map(|t| q[(i, c + t)] * v[t]).sum();
            let f = 2.0 * dot / vnorm2;
            for t in 0..m - c {
                q[(i, c + t)] -= f * v[t];
            }
        }
    }
    let upper = DMatrix::from_fn(k, k, |i, j| if i <= j { r[(i, j)] } else { 0.0 });
    (q, upper)
}
