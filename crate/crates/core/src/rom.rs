//! Galerkin POD reduced-order model.
//!
//! With modes `Phi` (FEM coefficients as columns), the reduced system is
//! `Mhat a' = -nu Ahat a - Phi^T G(Phi a) + Phi^T F(t)`, where
//! `Mhat = Phi^T M Phi` and `Ahat = Phi^T A Phi`. The nonlinearity is
//! evaluated at full order on the lifted state with the FOM quadrature.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::integrate::{
    find_periodic_orbit, integrate, IntegratorConfig, OdeSystem, OrbitConfig, PeriodicOrbit,
    Trajectory,
};
use crate::mesh::Field;
use crate::model::{ParamPoint, SemidiscreteSystem};
use crate::pod::PodBasis;

/// Largest tolerated `|Ahat - I|` entry.
pub const STIFFNESS_IDENTITY_TOL: f64 = 1e-9;

/// Default period tolerance of ROM orbits.
pub const ROM_PERIOD_RTOL: f64 = 1e-8;

/// Reduced operators of one basis truncation on one semidiscrete system.
#[derive(Clone, Debug)]
pub struct RomOperators<'a> {
    sys: &'a SemidiscreteSystem,
    phi: DMatrix<f64>,
    /// `(A Phi)^T`, giving modal coordinates of `P^r u`.
    restrict: DMatrix<f64>,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    identity_defect: f64,
}

impl<'a> RomOperators<'a> {
    /// Reduces `sys` onto the first `r` modes of `basis`.
    pub fn reduce(basis: &PodBasis, r: usize, sys: &'a SemidiscreteSystem) -> Result<Self> {
        let phi = basis.matrix(r)?;
        ensure_dim(sys.dim(), phi.nrows())?;
        let a = sys.space().stiffness().block_diag(sys.components());
        let a_phi = &a * &phi;
        let stiffness = phi.tr_mul(&a_phi);
        let mut mass = DMatrix::zeros(r, r);
        for (k, col) in phi.column_iter().enumerate() {
            let m_col = sys.mass_mul(&col.into_owned());
            mass.column_mut(k).copy_from(&phi.tr_mul(&m_col));
        }
        let mass = (&mass + mass.transpose()) * 0.5;
        let identity_defect = (&stiffness - DMatrix::identity(r, r)).amax();
        log::debug!("reduced stiffness r={r}: |Ahat - I|max = {identity_defect:.2e}");
        if identity_defect > STIFFNESS_IDENTITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "modes are not H1-orthonormal on this system (defect {identity_defect:.2e})"
            )));
        }
        Ok(Self {
            sys,
            restrict: a_phi.transpose(),
            phi,
            mass,
            stiffness,
            identity_defect,
        })
    }

    pub fn r(&self) -> usize {
        self.phi.ncols()
    }

    pub fn system(&self) -> &SemidiscreteSystem {
        self.sys
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn identity_defect(&self) -> f64 {
        self.identity_defect
    }

    /// `Phi a` as a field.
    pub fn lift(&self, a: &DVector<f64>) -> Result<Field> {
        ensure_dim(self.r(), a.len())?;
        Field::new(self.sys.components(), &self.phi * a)
    }

    /// Modal coordinates of the H1 projection `P^r u`.
    pub fn project(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(self.sys.dim(), u.len())?;
        Ok(&self.restrict * u)
    }

    /// Modal coordinates of `P^r` applied to the FOM initial state.
    pub fn initial_coords(&self, p: &ParamPoint) -> Result<DVector<f64>> {
        self.project(self.sys.initial_state(p)?.coeffs())
    }

    /// `Rhat = -nu Ahat a - Phi^T (G(Phi a) - F(t))`.
    pub fn rom_rhs(
        &self,
        p: &ParamPoint,
        t: f64,
        a: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        ensure_dim(self.r(), a.len())?;
        ensure_dim(self.r(), out.len())?;
        let u = &self.phi * a;
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState(format!("lifted ROM state at t={t}")));
        }
        let mut g = DVector::zeros(self.sys.dim());
        self.sys.reaction_vector(p, t, &u, &mut g)?;
        let nu = self.sys.model().diffusion(p);
        out.gemv_tr(-1.0, &self.phi, &g, 0.0);
        out.gemv(-nu, &self.stiffness, a, 1.0);
        Ok(())
    }

    /// `-nu Ahat - Phi^T (dG/dU) Phi`.
    pub fn rom_jacobian(&self, p: &ParamPoint, a: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_dim(self.r(), a.len())?;
        let u = &self.phi * a;
        let jg = self.sys.reaction_jacobian(p, &u)?;
        let nu = self.sys.model().diffusion(p);
        Ok(-(self.phi.tr_mul(&(jg * &self.phi))) - &self.stiffness * nu)
    }

    /// The reduced system at `p` as an ODE.
    pub fn at(&self, p: ParamPoint) -> RomOde<'_> {
        RomOde { ops: self, p }
    }
}

#[derive(Clone, Copy)]
pub struct RomOde<'a> {
    ops: &'a RomOperators<'a>,
    p: ParamPoint,
}

impl OdeSystem for RomOde<'_> {
    fn dim(&self) -> usize {
        self.ops.r()
    }

    fn mass(&self) -> &DMatrix<f64> {
        &self.ops.mass
    }

    fn rhs(&self, t: f64, y: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        self.ops.rom_rhs(&self.p, t, y, out)
    }

    fn jacobian(&self, _t: f64, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.ops.rom_jacobian(&self.p, y)
    }
}

/// Integrates the reduced system from `a0`.
pub fn integrate_rom(
    ops: &RomOperators<'_>,
    p: ParamPoint,
    a0: &DVector<f64>,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    output_times: Option<&[f64]>,
) -> Result<Trajectory> {
    integrate(&ops.at(p), a0, t_span, cfg, output_times)
}

/// Orbit settings for reduced models: the FOM defaults with the tighter
/// period tolerance.
pub fn rom_orbit_config() -> OrbitConfig {
    OrbitConfig::with_period_rtol(ROM_PERIOD_RTOL)
}

/// Periodic orbit of the reduced system, anchored at a local maximum of
/// `a^T Mhat a` (the squared L2 norm of the lift).
pub fn rom_periodic_orbit(
    ops: &RomOperators<'_>,
    p: ParamPoint,
    a_init: &DVector<f64>,
    cfg: &OrbitConfig,
) -> Result<PeriodicOrbit> {
    find_periodic_orbit(&ops.at(p), p, a_init, cfg)
}

#[cfg(test)]
mod tests;
