//! Cyclic Jacobi rotations for symmetric eigenproblems and for the
//! singular value decomposition of snapshot matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Eigenvalues in descending order with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

fn off_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Two-sided cyclic Jacobi; iterates until the off-diagonal Frobenius norm is
/// at most `1e-13 ||S||_F`.
pub fn symmetric_eigen(s: &DMatrix<f64>) -> Result<SymEigen> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s.ncols(),
        });
    }
    let scale = s.norm().max(f64::MIN_POSITIVE);
    let asym = (s - s.transpose()).amax();
    if asym > 1e-12 * s.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    let mut a = (s + s.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut sweeps = 0;
    while off_norm(&a) > 1e-13 * scale {
        if sweeps == MAX_SWEEPS {
            return Err(Error::InvalidArgument(
                "Jacobi iteration did not converge".into(),
            ));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen {
        values,
        vectors,
        sweeps,
    })
}

/// Thin SVD `B = U diag(sigma) V^T`, singular values descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub sigma: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided (Hestenes) Jacobi: rotates column pairs of `b` until all are
/// mutually orthogonal to working precision. Returns the rotated columns and
/// the accumulated orthogonal matrix.
fn orthogonalize_columns(mut b: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (rows, n) = b.shape();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-15 * (rows as f64).sqrt().max(1.0);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let cp = b.column(p);
                    let cq = b.column(q);
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let (x, y) = (b[(k, p)], b[(k, q)]);
                    b[(k, p)] = c * x - s * y;
                    b[(k, q)] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            return Ok((b, v));
        }
    }
    Err(Error::InvalidArgument(
        "one-sided Jacobi did not converge".into(),
    ))
}

/// Thin SVD of `g` by one-sided Jacobi, applied to `g` or `g^T` whichever has
/// fewer columns. Small singular values are obtained to an absolute accuracy
/// of order `eps * sigma_1`, so `sigma^2` keeps relative accuracy far below
/// the level at which `g^T g` would lose it.
pub fn jacobi_svd(g: &DMatrix<f64>) -> Result<Svd> {
    let (rows, cols) = g.shape();
    let k = rows.min(cols);
    let transpose = cols > rows;
    let (b, w) = if transpose {
        orthogonalize_columns(g.transpose())?
    } else {
        orthogonalize_columns(g.clone())?
    };
    let norms: Vec<f64> = (0..b.ncols()).map(|j| b.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..b.ncols()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    order.truncate(k);
    let sigma: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    // Columns of b are sigma_i times singular vectors on one side; the
    // rotations give the other side.
    let normalized = |i: usize| -> DVector<f64> {
        let n = norms[i];
        if n > 0.0 {
            b.column(i) / n
        } else {
            DVector::zeros(b.nrows())
        }
    };
    let (u, v) = if transpose {
        (
            DMatrix::from_fn(rows, k, |r, c| w[(r, order[c])]),
            DMatrix::from_columns(&order.iter().map(|&i| normalized(i)).collect::<Vec<_>>()),
        )
    } else {
        (
            DMatrix::from_columns(&order.iter().map(|&i| normalized(i)).collect::<Vec<_>>()),
            DMatrix::from_fn(cols, k, |r, c| w[(r, order[c])]),
        )
    };
    Ok(Svd { sigma, u, v })
}
