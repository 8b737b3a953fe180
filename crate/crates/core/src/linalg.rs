//! Small dense/banded direct solvers used by the Newton iterations.

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};

/// Symmetric permutation that makes a matrix banded: row/column `i` of the
/// permuted matrix is row/column `perm[i]` of the original.
#[derive(Clone, Debug, PartialEq)]
pub struct BandStructure {
    pub perm: Vec<usize>,
    pub half_bandwidth: usize,
}

impl BandStructure {
    /// Node-interleaving permutation for a component-major vector with
    /// `components` blocks of `n` unknowns, where unknowns `i` and `j` of
    /// any two components interact only when `|i - j| <= reach`.
    pub fn interleaved(components: usize, n: usize, reach: usize) -> Self {
        let mut perm = Vec::with_capacity(components * n);
        for i in 0..n {
            for c in 0..components {
                perm.push(c * n + i);
            }
        }
        Self {
            perm,
            half_bandwidth: components * (reach + 1) - 1,
        }
    }
}

/// LU factorization with partial pivoting of a banded matrix held in dense
/// storage. Only entries inside the band are touched, so the cost is
/// `O(n kl (kl + ku))`.
#[derive(Clone, Debug)]
pub struct BandLu {
    lu: DMatrix<f64>,
    piv: Vec<usize>,
    kl: usize,
    ku: usize,
}

impl BandLu {
    pub fn factor(mut a: DMatrix<f64>, kl: usize, ku: usize) -> Result<Self> {
        let n = a.nrows();
        let ku_fill = ku + kl;
        let mut piv = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl + 1).min(n);
            let mut p = k;
            let mut best = a[(k, k)].abs();
            for i in k + 1..last_row {
                let v = a[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::IntegrationFailure {
                    t: f64::NAN,
                    reason: "singular Newton matrix".into(),
                });
            }
            piv[k] = p;
            let last_col = (k + ku_fill + 1).min(n);
            if p != k {
                for j in k..last_col {
                    a.swap((k, j), (p, j));
                }
            }
            let pivot = a[(k, k)];
            for i in k + 1..last_row {
                let l = a[(i, k)] / pivot;
                a[(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..last_col {
                        a[(i, j)] -= l * a[(k, j)];
                    }
                }
            }
        }
        Ok(Self {
            lu: a,
            piv,
            kl,
            ku: ku_fill,
        })
    }

    pub fn solve_in_place(&self, b: &mut DVector<f64>) {
        let n = self.lu.nrows();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap_rows(k, p);
            }
            let bk = b[k];
            for i in k + 1..(k + self.kl + 1).min(n) {
                b[i] -= self.lu[(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..(k + self.ku + 1).min(n) {
                s -= self.lu[(k, j)] * b[j];
            }
            b[k] = s / self.lu[(k, k)];
        }
    }
}

/// Factorized `M - c J` for the Newton iterations.
#[derive(Clone, Debug)]
pub enum LinearSolver {
    Dense(LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Band { lu: BandLu, perm: Vec<usize> },
}

impl LinearSolver {
    /// Factorizes `mass - c * jac`, using the band structure when given.
    pub fn factor(
        mass: &DMatrix<f64>,
        jac: &DMatrix<f64>,
        c: f64,
        band: Option<&BandStructure>,
    ) -> Result<Self> {
        let n = mass.nrows();
        match band {
            None => {
                let mut a = mass.clone();
                a -= jac * c;
                let lu = a.lu();
                if !lu.is_invertible() {
                    return Err(Error::IntegrationFailure {
                        t: f64::NAN,
                        reason: "singular Newton matrix".into(),
                    });
                }
                Ok(Self::Dense(lu))
            }
            Some(bs) => {
                let kb = bs.half_bandwidth;
                let mut a = DMatrix::zeros(n, n);
                for i in 0..n {
                    let pi = bs.perm[i];
                    for j in i.saturating_sub(kb)..(i + kb + 1).min(n) {
                        let pj = bs.perm[j];
                        a[(i, j)] = mass[(pi, pj)] - c * jac[(pi, pj)];
                    }
                }
                Ok(Self::Band {
                    lu: BandLu::factor(a, kb, kb)?,
                    perm: bs.perm.clone(),
                })
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Dense(lu) => lu.solve(b).expect("factor checked invertibility"),
            Self::Band { lu, perm } => {
                let mut pb = DVector::from_fn(b.len(), |i, _| b[perm[i]]);
                lu.solve_in_place(&mut pb);
                let mut out = DVector::zeros(b.len());
                for (i, &p) in perm.iter().enumerate() {
                    out[p] = pb[i];
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::*;

    #[test]
    fn band_lu_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(7);
        let n = 40;
        let kb = 3;
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i.abs_diff(j) <= kb {
                rng.random::<f64>() - 0.5 + if i == j { 0.1 } else { 0.0 }
            } else {
                0.0
            }
        });
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let dense = a.clone().lu().solve(&b).unwrap();
        let band = BandLu::factor(a.clone(), kb, kb).unwrap();
        let mut x = b.clone();
        band.solve_in_place(&mut x);
        assert!((&x - &dense).amax() < 1e-9 * dense.amax());
        assert!((&a * &x - &b).amax() < 1e-11);
    }

    #[test]
    fn permuted_band_solver() {
        let comps = 2;
        let n = 9;
        let reach = 2;
        let bs = BandStructure::interleaved(comps, n, reach);
        assert_eq!(bs.half_bandwidth, 5);
        let dim = comps * n;
        let mut rng = StdRng::seed_from_u64(1);
        let mut jac = DMatrix::zeros(dim, dim);
        for ci in 0..comps {
            for cj in 0..comps {
                for i in 0..n {
                    for j in 0..n {
                        if i.abs_diff(j) <= reach {
                            jac[(ci * n + i, cj * n + j)] = rng.random::<f64>() - 0.5;
                        }
                    }
                }
            }
        }
        let mass = DMatrix::identity(dim, dim) * 3.0;
        let b = DVector::from_fn(dim, |i, _| 1.0 + i as f64);
        let dense = LinearSolver::factor(&mass, &jac, 0.7, None)
            .unwrap()
            .solve(&b);
        let band = LinearSolver::factor(&mass, &jac, 0.7, Some(&bs))
            .unwrap()
            .solve(&b);
        assert!((dense - band).amax() < 1e-12);
    }
}
