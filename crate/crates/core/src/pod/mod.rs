//! POD in the H1-seminorm geometry: correlation matrix, spectrum, modes,
//! projection, eigenvalue tails and the exact identities and pointwise
//! bounds satisfied by difference-quotient snapshot sets.
//!
//! The correlation matrix `S = (1/N) Y^T A Y` is never diagonalized
//! directly for basis construction. With `A = L L^T`, `S = G^T G` for the
//! whitened snapshot matrix `G = L^T Y / sqrt(N)`, and one-sided Jacobi on
//! `G` yields the eigenpairs of `S` with the singular-value accuracy of `G`.

mod bounds;
pub mod jacobi;
mod store;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::mesh::{FemSpace, Field, SymMatrix};
use crate::snapshots::{SetKind, SetMeta, SnapshotSet, Tier};

pub use bounds::{
    pointwise_bound_1p, pointwise_bound_2p, standard_diagnostics, standard_exponents, BoundNorm,
    BoundReport, StandardDiagnostics,
};
pub use store::{load_basis, save_basis, spectrum_csv};

/// Relative floor of the numerical rank for spectra of `S` itself.
pub const DROP_RELATIVE: f64 = 1e-12;
/// Relative floor for spectra obtained as squared singular values of the
/// whitened snapshot matrix, i.e. `sigma_k > 1e-8 sigma_1`.
pub const SVD_DROP_RELATIVE: f64 = 1e-16;
/// Absolute floor of the numerical rank.
pub const DROP_ABSOLUTE: f64 = 1e-14;

/// Spectrum of the correlation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PodEigen {
    /// All computed eigenvalues, descending, including those below the
    /// drop threshold.
    pub lambdas: Vec<f64>,
    /// Eigenvectors `v_1..v_{d_r}` of `S` as columns (`N x d_r`).
    pub eigvecs: DMatrix<f64>,
    pub d_r: usize,
    pub drop_threshold: f64,
}

impl PodEigen {
    /// Numerical rank of a spectrum of `S`.
    pub fn rank_of(lambdas: &[f64]) -> (usize, f64) {
        Self::rank_with(lambdas, DROP_RELATIVE)
    }

    /// Count of `lambda_k > max(relative * lambda_1, DROP_ABSOLUTE)`.
    pub fn rank_with(lambdas: &[f64], relative: f64) -> (usize, f64) {
        let l1 = lambdas.first().copied().unwrap_or(0.0).max(0.0);
        let thr = (relative * l1).max(DROP_ABSOLUTE);
        (lambdas.iter().take_while(|&&l| l > thr).count(), thr)
    }
}

/// `S_ij = (1/N) (grad y_i, grad y_j)` for the weighted members of `set`.
pub fn correlation_matrix(set: &SnapshotSet, stiffness: &SymMatrix) -> Result<SymMatrix> {
    let y = snapshot_matrix(set)?;
    let a = stiffness.block_diag(set.meta.components);
    ensure_dim(a.nrows(), y.nrows())?;
    let s = y.transpose() * (a * &y) / set.len() as f64;
    SymMatrix::checked((&s + s.transpose()) * 0.5, 1e-12)
}

/// Full spectrum of a correlation matrix by two-sided cyclic Jacobi, with
/// round-off negatives (above `-1e-12 lambda_1`) clamped to zero.
pub fn eigendecompose(s: &SymMatrix) -> Result<PodEigen> {
    let e = jacobi::symmetric_eigen(s.matrix())?;
    let l1 = e.values.first().copied().unwrap_or(0.0).max(0.0);
    let lambdas: Vec<f64> = e
        .values
        .iter()
        .map(|&l| if l < 0.0 && l >= -1e-12 * l1 { 0.0 } else { l })
        .collect();
    if lambdas.iter().any(|&l| l < 0.0) {
        return Err(Error::InvalidArgument(
            "correlation matrix has a clearly negative eigenvalue".into(),
        ));
    }
    let (d_r, drop_threshold) = PodEigen::rank_of(&lambdas);
    Ok(PodEigen {
        eigvecs: e.vectors.columns(0, d_r).into_owned(),
        lambdas,
        d_r,
        drop_threshold,
    })
}

fn snapshot_matrix(set: &SnapshotSet) -> Result<DMatrix<f64>> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty snapshot set".into()));
    }
    let len = set.dof_len();
    let cols: Vec<&DVector<f64>> = set.fields().map(|f| f.coeffs()).collect();
    if cols.iter().any(|c| c.len() != len) {
        return Err(Error::InconsistentGrid(
            "members of different length".into(),
        ));
    }
    Ok(DMatrix::from_fn(len, cols.len(), |i, j| cols[j][i]))
}

/// `sum_{k>r} lambda_k` and its square root.
#[derive(Clone, Debug, PartialEq)]
pub struct TailReport {
    pub r: usize,
    pub sigma_sq: f64,
    pub sigma: f64,
}

/// Tail of the spectrum beyond `r`, summed from the smallest eigenvalue up.
pub fn tail(eigen: &PodEigen, r: usize) -> TailReport {
    let sigma_sq: f64 = eigen.lambdas.iter().skip(r).rev().map(|l| l.max(0.0)).sum();
    TailReport {
        r,
        sigma_sq,
        sigma: sigma_sq.sqrt(),
    }
}

/// H1-orthonormal POD modes with the data needed to project onto them.
#[derive(Clone, Debug)]
pub struct PodBasis {
    modes: DMatrix<f64>,
    components: usize,
    eigen: PodEigen,
    gram: DMatrix<f64>,
    gram_correction: f64,
    stiffness: DMatrix<f64>,
    /// Upper factor `L^T` of `A = L L^T`.
    whitener: DMatrix<f64>,
    /// `L^T Phi`: modes in whitened coordinates.
    whitened_modes: DMatrix<f64>,
    source: SetMeta,
    n_members: usize,
}

impl PodBasis {
    /// Builds the basis of `set` in the H1 geometry of `space`.
    pub fn build(set: &SnapshotSet, space: &FemSpace) -> Result<Self> {
        let y = snapshot_matrix(set)?;
        let comps = set.meta.components;
        let a = space.stiffness().block_diag(comps);
        ensure_dim(a.nrows(), y.nrows())?;
        let chol = a.clone().cholesky().ok_or_else(|| {
            Error::InvalidArgument("stiffness matrix is not positive definite".into())
        })?;
        let whitener = chol.l().transpose();
        let n = set.len();
        let g = &whitener * &y / (n as f64).sqrt();
        let svd = jacobi::jacobi_svd(&g)?;
        let lambdas: Vec<f64> = svd.sigma.iter().map(|s| s * s).collect();
        let (d_r, drop_threshold) = PodEigen::rank_with(&lambdas, SVD_DROP_RELATIVE);
        if d_r == 0 {
            return Err(Error::InvalidArgument(
                "snapshot set has numerical rank zero".into(),
            ));
        }
        let u = svd.u.columns(0, d_r).into_owned();
        // Phi = L^{-T} u, the same as recombining snapshots with v_k.
        let mut modes = whitener
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?;
        let mut gram = modes.transpose() * &a * &modes;
        let off = (&gram - DMatrix::identity(d_r, d_r)).amax();
        let mut gram_correction = 0.0;
        if off > 1e-10 {
            let e = jacobi::symmetric_eigen(&gram)?;
            let inv_sqrt = &e.vectors
                * DMatrix::from_diagonal(&DVector::from_iterator(
                    d_r,
                    e.values.iter().map(|v| 1.0 / v.sqrt()),
                ))
                * e.vectors.transpose();
            modes = &modes * inv_sqrt;
            gram = modes.transpose() * &a * &modes;
            gram_correction = off;
            log::info!("POD modes re-orthonormalized (Gram defect {off:.2e})");
        }
        let whitened_modes = &whitener * &modes;
        let eigen = PodEigen {
            lambdas,
            eigvecs: svd.v.columns(0, d_r).into_owned(),
            d_r,
            drop_threshold,
        };
        Ok(Self {
            modes,
            components: comps,
            eigen,
            gram,
            gram_correction,
            stiffness: a,
            whitener,
            whitened_modes,
            source: set.meta.clone(),
            n_members: n,
        })
    }

    /// Reassembles a stored basis in the geometry of `space`.
    pub(crate) fn from_parts(
        modes: DMatrix<f64>,
        eigen: PodEigen,
        source: SetMeta,
        n_members: usize,
        gram_correction: f64,
        space: &FemSpace,
    ) -> Result<Self> {
        let comps = source.components;
        let a = space.stiffness().block_diag(comps);
        ensure_dim(a.nrows(), modes.nrows())?;
        ensure_dim(eigen.d_r, modes.ncols())?;
        let whitener = a
            .clone()
            .cholesky()
            .ok_or_else(|| {
                Error::InvalidArgument("stiffness matrix is not positive definite".into())
            })?
            .l()
            .transpose();
        let gram = modes.transpose() * &a * &modes;
        let whitened_modes = &whitener * &modes;
        Ok(Self {
            modes,
            components: comps,
            eigen,
            gram,
            gram_correction,
            stiffness: a,
            whitener,
            whitened_modes,
            source,
            n_members,
        })
    }

    pub fn eigen(&self) -> &PodEigen {
        &self.eigen
    }

    pub fn d_r(&self) -> usize {
        self.eigen.d_r
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.modes.nrows()
    }

    pub fn source(&self) -> &SetMeta {
        &self.source
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Largest Gram defect repaired during construction (0 if none).
    pub fn gram_correction(&self) -> f64 {
        self.gram_correction
    }

    /// Modes `phi_1..phi_r` as columns.
    pub fn matrix(&self, r: usize) -> Result<DMatrix<f64>> {
        self.check_r(r)?;
        Ok(self.modes.columns(0, r).into_owned())
    }

    pub fn mode(&self, k: usize) -> Result<Field> {
        if k >= self.d_r() {
            return Err(Error::InvalidArgument(format!("mode index {k} >= d_r")));
        }
        Field::new(self.components, self.modes.column(k).into_owned())
    }

    pub fn tail(&self, r: usize) -> TailReport {
        tail(&self.eigen, r)
    }

    fn check_r(&self, r: usize) -> Result<()> {
        if r == 0 || r > self.d_r() {
            return Err(Error::InvalidArgument(format!(
                "r={r} outside 1..={}",
                self.d_r()
            )));
        }
        Ok(())
    }

    /// Coefficients `(grad v, grad phi_k)`, `k < r`.
    pub fn coefficients(&self, r: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_r(r)?;
        ensure_dim(self.dim(), v.len())?;
        Ok(self.modes.columns(0, r).tr_mul(&(&self.stiffness * v)))
    }

    /// H1-orthogonal projection onto the first `r` modes.
    pub fn project_h01(&self, r: usize, v: &Field) -> Result<Field> {
        let c = self.coefficients(r, v.coeffs())?;
        Field::new(self.components, self.modes.columns(0, r) * c)
    }

    /// Lifts reduced coefficients to a full field.
    pub fn lift(&self, a: &DVector<f64>) -> Result<Field> {
        let r = a.len();
        self.check_r(r)?;
        Field::new(self.components, self.modes.columns(0, r) * a)
    }

    /// `||grad (I - P^r) v||^2`, evaluated in whitened coordinates.
    pub fn h1_projection_error_sq(&self, r: usize, v: &DVector<f64>) -> Result<f64> {
        self.check_r(r)?;
        ensure_dim(self.dim(), v.len())?;
        let g = &self.whitener * v;
        let u = self.whitened_modes.columns(0, r);
        let e = &g - u * u.tr_mul(&g);
        Ok(e.norm_squared())
    }

    /// `||(I - P^r) v||_0^2` with the block mass matrix `mass`.
    pub fn l2_projection_error_sq(
        &self,
        r: usize,
        v: &DVector<f64>,
        mass: &DMatrix<f64>,
    ) -> Result<f64> {
        let c = self.coefficients(r, v)?;
        let e = v - self.modes.columns(0, r) * c;
        Ok(e.dot(&(mass * &e)))
    }

    fn check_source(&self, set: &SnapshotSet) -> Result<()> {
        if set.len() != self.n_members
            || set.meta.kind != self.source.kind
            || set.meta.m != self.source.m
            || set.meta.l != self.source.l
            || set.meta.s != self.source.s
            || set.dof_len() != self.dim()
        {
            return Err(Error::InvalidArgument(
                "basis was not built from this snapshot set".into(),
            ));
        }
        Ok(())
    }

    /// Per-member `||grad (I - P^r) y_j||^2` for the weighted members.
    pub fn member_errors(&self, set: &SnapshotSet, r: usize) -> Result<Vec<f64>> {
        self.check_source(set)?;
        if r == 0 {
            return Ok(set
                .fields()
                .map(|f| (&self.whitener * f.coeffs()).norm_squared())
                .collect());
        }
        set.fields()
            .map(|f| self.h1_projection_error_sq(r, f.coeffs()))
            .collect()
    }

    /// `|(1/N) sum_j ||grad (I-P^r) y_j||^2 - sum_{k>r} lambda_k| / tail`.
    pub fn tail_identity_residual(&self, set: &SnapshotSet, r: usize) -> Result<f64> {
        let errs = self.member_errors(set, r)?;
        let lhs = sorted_sum(&errs) / set.len() as f64;
        let t = self.tail(r).sigma_sq;
        if r == self.d_r() {
            // both sides are at round-off level; report the absolute gap
            // relative to the leading eigenvalue
            return Ok((lhs - t).abs() / self.eigen.lambdas[0]);
        }
        Ok((lhs - t).abs() / t.max(1e-300))
    }

    /// The tail identity regrouped by tier: unweighted quotient errors with
    /// the natural prefactors of each tier must add up to the tail.
    pub fn tier_identity_residual(&self, set: &SnapshotSet, r: usize) -> Result<f64> {
        let errs = self.member_errors(set, r)?;
        let meta = &set.meta;
        let (m, l, s) = (meta.m as f64, meta.l as f64, meta.s as f64);
        let n = set.len() as f64;
        let prefactor = |tier: Tier| -> Result<f64> {
            Ok(match (meta.kind, tier) {
                (_, Tier::Initial) => 1.0,
                (SetKind::New1p | SetKind::New2p, Tier::Dt) => 1.0 / (m + 1.0),
                (SetKind::New1p, Tier::DtDalpha) => 1.0 / n,
                (SetKind::New2p, Tier::DtDalpha) => 1.0 / ((m + 1.0) * (l + 1.0)),
                (SetKind::New2p, Tier::DtDalphaDbeta) => 1.0 / n,
                (SetKind::Standard, Tier::Plain) => 1.0 / n,
                _ => {
                    return Err(Error::UnsupportedVariant(format!(
                        "tier {tier} in a {} set",
                        meta.kind.as_str()
                    )))
                }
            })
        };
        let _ = s;
        let mut terms = Vec::with_capacity(errs.len());
        for (e, mem) in errs.iter().zip(&set.members) {
            let w = mem.provenance.weight;
            terms.push(prefactor(mem.provenance.tier)? * e / (w * w));
        }
        let lhs = sorted_sum(&terms);
        let t = self.tail(r).sigma_sq;
        Ok((lhs - t).abs() / t.max(1e-300))
    }
}

fn sorted_sum(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.iter().sum()
}

/// Eigenvalues of `S` from an independent path: singular values of the
/// Cholesky-whitened weighted snapshot matrix computed by the library SVD.
pub fn svd_oracle(set: &SnapshotSet, stiffness: &SymMatrix) -> Result<Vec<f64>> {
    let y = snapshot_matrix(set)?;
    let a = stiffness.block_diag(set.meta.components);
    ensure_dim(a.nrows(), y.nrows())?;
    let l = a
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("stiffness matrix is not positive definite".into()))?
        .l();
    let g = l.transpose() * y / (set.len() as f64).sqrt();
    let mut s: Vec<f64> = g
        .svd(false, false)
        .singular_values
        .iter()
        .map(|s| s * s)
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Largest relative deviation between two spectra over eigenvalues above
/// `rel_floor * lambda_1`.
pub fn spectrum_deviation(a: &[f64], b: &[f64], rel_floor: f64) -> f64 {
    let l1 = a.first().copied().unwrap_or(0.0);
    a.iter()
        .zip(b)
        .filter(|(x, _)| **x > rel_floor * l1)
        .map(|(x, y)| (x - y).abs() / x)
        .fold(0.0, f64::max)
}
