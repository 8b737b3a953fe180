//! Parametric semilinear reaction-diffusion models and their finite-element
//! semidiscretization `M U' = -nu A U - G(U) + F(t)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::BandStructure;
use crate::mesh::{BcKind, FemSpace, Field, Mesh, RefQuadrature, QUAD_POINTS};

/// A point in parameter space. `alpha` is the primary parameter; `beta2` is
/// the optional second one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamPoint {
    pub alpha: f64,
    pub beta2: Option<f64>,
}

impl ParamPoint {
    pub fn one(alpha: f64) -> Self {
        Self { alpha, beta2: None }
    }

    pub fn two(alpha: f64, beta2: f64) -> Self {
        Self {
            alpha,
            beta2: Some(beta2),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta2.is_none_or(f64::is_finite)
    }
}

impl fmt::Display for ParamPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.beta2 {
            None => write!(f, "{}", self.alpha),
            Some(b) => write!(f, "({}, {})", self.alpha, b),
        }
    }
}

/// Pointwise data of `u_t - nu(p) u_xx + g(p, u) = f(p, t, x)`.
///
/// `g` acts on the vector of component values at a single point.
pub trait ParametricModel: Send + Sync {
    fn n_components(&self) -> usize;

    /// Boundary kinds at (left, right), shared by every component.
    fn bc(&self) -> (BcKind, BcKind);

    fn diffusion(&self, p: &ParamPoint) -> f64;

    fn reaction(&self, p: &ParamPoint, vals: &[f64], out: &mut [f64]);

    /// Row-major `d g_i / d u_j`.
    fn reaction_jacobian(&self, p: &ParamPoint, vals: &[f64], out: &mut [f64]);

    fn has_forcing(&self) -> bool {
        false
    }

    fn forcing(&self, _p: &ParamPoint, _t: f64, _x: f64, out: &mut [f64]) {
        out.fill(0.0);
    }

    /// Initial condition; must vanish at Dirichlet ends.
    fn initial_condition(&self, p: &ParamPoint, component: usize, x: f64) -> f64;

    /// Global Lipschitz constant of `g(p, .)`, when one exists.
    fn lipschitz_bound(&self, _p: &ParamPoint) -> Option<f64> {
        None
    }

    fn describe(&self) -> String;
}

/// Brusselator with diffusion, shifted so that the steady state
/// `(y, z) = (a, b/a)` becomes `(u, v) = (0, 0)`:
///
/// ```text
/// u_t = nu u_xx + (a+u)^2 (b/a+v) - (b+1)(a+u) + a
/// v_t = nu v_xx + b (a+u) - (a+u)^2 (b/a+v)
/// ```
///
/// with `u_x = v_x = 0` at the left end and `u = v = 0` at the right end.
/// `p.alpha` is `b`; when `p.beta2` is present it is `rho = -log10(nu)`,
/// otherwise the model's own `nu` is used.
#[derive(Clone, Debug, PartialEq)]
pub struct Brusselator {
    alpha_const: f64,
    nu: f64,
    perturbation: f64,
}

impl Brusselator {
    pub fn new(alpha_const: f64, nu: f64) -> Result<Self> {
        if !(alpha_const > 0.0 && alpha_const.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Brusselator constant must be positive, got {alpha_const}"
            )));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "diffusion must be positive, got {nu}"
            )));
        }
        Ok(Self {
            alpha_const,
            nu,
            perturbation: 1e-2,
        })
    }

    /// Amplitude of the `cos(pi x / 2)` perturbation used as initial data.
    pub fn with_perturbation(mut self, amplitude: f64) -> Self {
        self.perturbation = amplitude;
        self
    }

    pub fn alpha_const(&self) -> f64 {
        self.alpha_const
    }

    pub fn base_nu(&self) -> f64 {
        self.nu
    }

    pub fn perturbation(&self) -> f64 {
        self.perturbation
    }

    /// Shifted model and the parameter point for `(beta, nu)`.
    pub fn shifted(alpha_const: f64, beta: f64, nu: f64) -> Result<(Self, ParamPoint)> {
        Ok((Self::new(alpha_const, nu)?, ParamPoint::one(beta)))
    }

    fn reaction_terms(&self, beta: f64, u: f64, v: f64) -> (f64, f64) {
        let a = self.alpha_const;
        let y = a + u;
        let z = beta / a + v;
        let yyz = y * y * z;
        (yyz - (beta + 1.0) * y + a, beta * y - yyz)
    }
}

impl ParametricModel for Brusselator {
    fn n_components(&self) -> usize {
        2
    }

    fn bc(&self) -> (BcKind, BcKind) {
        (BcKind::Neumann0, BcKind::Dirichlet0)
    }

    fn diffusion(&self, p: &ParamPoint) -> f64 {
        match p.beta2 {
            Some(rho) => 10f64.powf(-rho),
            None => self.nu,
        }
    }

    fn reaction(&self, p: &ParamPoint, vals: &[f64], out: &mut [f64]) {
        let (fu, fv) = self.reaction_terms(p.alpha, vals[0], vals[1]);
        // g is the negated source term.
        out[0] = -fu;
        out[1] = -fv;
    }

    fn reaction_jacobian(&self, p: &ParamPoint, vals: &[f64], out: &mut [f64]) {
        let a = self.alpha_const;
        let beta = p.alpha;
        let y = a + vals[0];
        let z = beta / a + vals[1];
        let two_yz = 2.0 * y * z;
        let yy = y * y;
        out[0] = -(two_yz - (beta + 1.0));
        out[1] = -yy;
        out[2] = -(beta - two_yz);
        out[3] = yy;
    }

    fn initial_condition(&self, _p: &ParamPoint, _component: usize, x: f64) -> f64 {
        self.perturbation * (std::f64::consts::FRAC_PI_2 * x).cos()
    }

    fn describe(&self) -> String {
        format!(
            "brusselator(alpha={}, nu={}, perturbation={}*cos(pi*x/2) per component)",
            self.alpha_const, self.nu, self.perturbation
        )
    }
}

/// Nonlinearity of the scalar model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarReaction {
    Zero,
    /// `c sin(u)`, globally Lipschitz with constant `|c|`.
    Sine(f64),
    /// `c u^3`.
    Cubic(f64),
}

/// Scalar model on a domain with homogeneous Dirichlet ends:
/// `u_t - nu u_xx + g(u) = amp * alpha * sin(pi x) cos(2 pi t)`,
/// `u(0) = alpha * sin(pi x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarModel {
    nu: f64,
    reaction: ScalarReaction,
    forcing_amplitude: f64,
    length: f64,
}

impl ScalarModel {
    pub fn new(nu: f64, reaction: ScalarReaction, forcing_amplitude: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "diffusion must be positive, got {nu}"
            )));
        }
        Ok(Self {
            nu,
            reaction,
            forcing_amplitude,
            length: 1.0,
        })
    }

    /// Domain length used by the sine profiles of the data (default 1).
    pub fn on_length(mut self, length: f64) -> Self {
        self.length = length;
        self
    }

    pub fn reaction_kind(&self) -> ScalarReaction {
        self.reaction
    }
}

impl ParametricModel for ScalarModel {
    fn n_components(&self) -> usize {
        1
    }

    fn bc(&self) -> (BcKind, BcKind) {
        (BcKind::Dirichlet0, BcKind::Dirichlet0)
    }

    fn diffusion(&self, _p: &ParamPoint) -> f64 {
        self.nu
    }

    fn reaction(&self, _p: &ParamPoint, vals: &[f64], out: &mut [f64]) {
        let u = vals[0];
        out[0] = match self.reaction {
            ScalarReaction::Zero => 0.0,
            ScalarReaction::Sine(c) => c * u.sin(),
            ScalarReaction::Cubic(c) => c * u * u * u,
        };
    }

    fn reaction_jacobian(&self, _p: &ParamPoint, vals: &[f64], out: &mut [f64]) {
        let u = vals[0];
        out[0] = match self.reaction {
            ScalarReaction::Zero => 0.0,
            ScalarReaction::Sine(c) => c * u.cos(),
            ScalarReaction::Cubic(c) => 3.0 * c * u * u,
        };
    }

    fn has_forcing(&self) -> bool {
        self.forcing_amplitude != 0.0
    }

    fn forcing(&self, p: &ParamPoint, t: f64, x: f64, out: &mut [f64]) {
        let pi = std::f64::consts::PI;
        out[0] =
            self.forcing_amplitude * p.alpha * (pi * x / self.length).sin() * (2.0 * pi * t).cos();
    }

    fn initial_condition(&self, p: &ParamPoint, _component: usize, x: f64) -> f64 {
        let s = (std::f64::consts::PI * x / self.length).sin();
        // Snap roundoff at the end nodes to an exact zero.
        if s.abs() < 1e-14 {
            0.0
        } else {
            p.alpha * s
        }
    }

    fn lipschitz_bound(&self, _p: &ParamPoint) -> Option<f64> {
        match self.reaction {
            ScalarReaction::Zero => Some(0.0),
            ScalarReaction::Sine(c) => Some(c.abs()),
            ScalarReaction::Cubic(_) => None,
        }
    }

    fn describe(&self) -> String {
        format!(
            "scalar(nu={}, g={:?}, forcing amplitude={})",
            self.nu, self.reaction, self.forcing_amplitude
        )
    }
}

/// Finite-element semidiscretization of a [`ParametricModel`].
///
/// State vectors are [`Field`] coefficients: component-major on the free
/// nodes. Nonlinear and forcing terms are integrated with the 4-point Gauss
/// rule applied to the P2 representation of the state.
#[derive(Clone)]
pub struct SemidiscreteSystem {
    model: Arc<dyn ParametricModel>,
    space: FemSpace,
    mass: DMatrix<f64>,
    quad: RefQuadrature,
    local_stiffness: [[f64; 3]; 3],
    elem_free: Vec<[Option<usize>; 3]>,
    band: BandStructure,
}

impl fmt::Debug for SemidiscreteSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemidiscreteSystem")
            .field("model", &self.model.describe())
            .field("n_elems", &self.space.mesh().n_elems())
            .field("dim", &self.dim())
            .finish()
    }
}

impl SemidiscreteSystem {
    pub fn new(model: Arc<dyn ParametricModel>, mesh: Mesh) -> Self {
        let (left, right) = model.bc();
        let space = FemSpace::new(mesh, left, right);
        let mass = space.mass().block_diag(model.n_components());
        let quad = RefQuadrature::gauss4();
        let h = space.mesh().h();
        let mut local_stiffness = [[0.0; 3]; 3];
        for (a, row) in local_stiffness.iter_mut().enumerate() {
            for (b, entry) in row.iter_mut().enumerate() {
                *entry = (0..QUAD_POINTS)
                    .map(|q| quad.weights[q] * quad.dphi[q][a] * quad.dphi[q][b] / h)
                    .sum();
            }
        }
        let model_nc = model.n_components();
        let n_free = space.n_free();
        let elem_free = (0..space.mesh().n_elems())
            .map(|e| space.mesh().elem_dofs(e).map(|n| space.bc().free_index(n)))
            .collect();
        Self {
            model,
            space,
            mass,
            quad,
            local_stiffness,
            elem_free,
            band: BandStructure::interleaved(model_nc, n_free, 2),
        }
    }

    pub fn model(&self) -> &Arc<dyn ParametricModel> {
        &self.model
    }

    pub fn space(&self) -> &FemSpace {
        &self.space
    }

    pub fn components(&self) -> usize {
        self.model.n_components()
    }

    /// Total number of unknowns.
    pub fn dim(&self) -> usize {
        self.components() * self.space.n_free()
    }

    /// Block-diagonal mass matrix of the full state.
    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    /// Node-interleaving permutation that makes `M - c dR/dU` banded.
    pub fn band_structure(&self) -> &BandStructure {
        &self.band
    }

    /// `M x` exploiting the block-diagonal, pentadiagonal mass matrix.
    pub fn mass_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.space.n_free();
        let m = self.space.mass().matrix();
        let mut out = DVector::zeros(x.len());
        for c in 0..self.components() {
            let off = c * n;
            for i in 0..n {
                let mut s = 0.0;
                for j in i.saturating_sub(2)..(i + 3).min(n) {
                    s += m[(i, j)] * x[off + j];
                }
                out[off + i] = s;
            }
        }
        out
    }

    /// Initial data of the model interpolated at the nodes.
    pub fn initial_state(&self, p: &ParamPoint) -> Result<Field> {
        self.space.interpolate(self.components(), |c, x| {
            self.model.initial_condition(p, c, x)
        })
    }

    pub fn field(&self, coeffs: DVector<f64>) -> Result<Field> {
        ensure_dim(self.dim(), coeffs.len())?;
        Field::new(self.components(), coeffs)
    }

    fn gather(&self, u: &DVector<f64>, e: usize, c: usize) -> [f64; 3] {
        let n = self.space.n_free();
        self.elem_free[e].map(|i| i.map_or(0.0, |i| u[c * n + i]))
    }

    /// Adds `-nu A u` to `out`.
    fn add_diffusion(&self, nu: f64, u: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.space.n_free();
        for c in 0..self.components() {
            for e in 0..self.elem_free.len() {
                let ue = self.gather(u, e, c);
                for (a, slot) in self.elem_free[e].iter().enumerate() {
                    if let Some(i) = slot {
                        let k = &self.local_stiffness[a];
                        out[c * n + i] -= nu * (k[0] * ue[0] + k[1] * ue[1] + k[2] * ue[2]);
                    }
                }
            }
        }
    }

    /// `G(u) - F(t)`: the assembled nonlinearity minus the forcing.
    pub fn reaction_vector(
        &self,
        p: &ParamPoint,
        t: f64,
        u: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        ensure_dim(self.dim(), u.len())?;
        ensure_dim(self.dim(), out.len())?;
        out.fill(0.0);
        let nc = self.components();
        let n = self.space.n_free();
        let h = self.space.mesh().h();
        let forcing = self.model.has_forcing();
        let mut vals = vec![0.0; nc];
        let mut g = vec![0.0; nc];
        let mut f = vec![0.0; nc];
        let mut ue = vec![[0.0; 3]; nc];
        for e in 0..self.elem_free.len() {
            for (c, slot) in ue.iter_mut().enumerate() {
                *slot = self.gather(u, e, c);
            }
            let x0 = self.space.mesh().elem_origin(e);
            for q in 0..QUAD_POINTS {
                let phi = &self.quad.phi[q];
                for c in 0..nc {
                    vals[c] = phi[0] * ue[c][0] + phi[1] * ue[c][1] + phi[2] * ue[c][2];
                }
                self.model.reaction(p, &vals, &mut g);
                if forcing {
                    self.model.forcing(p, t, x0 + self.quad.xi[q] * h, &mut f);
                    for c in 0..nc {
                        g[c] -= f[c];
                    }
                }
                let w = self.quad.weights[q] * h;
                for (a, slot) in self.elem_free[e].iter().enumerate() {
                    if let Some(i) = slot {
                        for c in 0..nc {
                            out[c * n + i] += w * g[c] * phi[a];
                        }
                    }
                }
            }
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteState(format!(
                "nonlinear term is not finite at t={t}"
            )))
        }
    }

    /// `d G / d U` assembled with the same quadrature as [`Self::reaction_vector`].
    pub fn reaction_jacobian(&self, p: &ParamPoint, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_dim(self.dim(), u.len())?;
        let nc = self.components();
        let n = self.space.n_free();
        let h = self.space.mesh().h();
        let mut jac = DMatrix::zeros(self.dim(), self.dim());
        let mut vals = vec![0.0; nc];
        let mut dg = vec![0.0; nc * nc];
        let mut ue = vec![[0.0; 3]; nc];
        for e in 0..self.elem_free.len() {
            for (c, slot) in ue.iter_mut().enumerate() {
                *slot = self.gather(u, e, c);
            }
            for q in 0..QUAD_POINTS {
                let phi = &self.quad.phi[q];
                for c in 0..nc {
                    vals[c] = phi[0] * ue[c][0] + phi[1] * ue[c][1] + phi[2] * ue[c][2];
                }
                self.model.reaction_jacobian(p, &vals, &mut dg);
                let w = self.quad.weights[q] * h;
                for (a, sa) in self.elem_free[e].iter().enumerate() {
                    let Some(i) = sa else { continue };
                    for (b, sb) in self.elem_free[e].iter().enumerate() {
                        let Some(j) = sb else { continue };
                        let wab = w * phi[a] * phi[b];
                        for ci in 0..nc {
                            for cj in 0..nc {
                                jac[(ci * n + i, cj * n + j)] += wab * dg[ci * nc + cj];
                            }
                        }
                    }
                }
            }
        }
        if jac.iter().all(|v: &f64| v.is_finite()) {
            Ok(jac)
        } else {
            Err(Error::NonFiniteState(
                "nonlinear Jacobian is not finite".into(),
            ))
        }
    }

    /// Right-hand side `R = -nu A U - G(U) + F(t)` of `M U' = R`.
    pub fn rhs(
        &self,
        p: &ParamPoint,
        t: f64,
        u: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        self.reaction_vector(p, t, u, out)?;
        out.neg_mut();
        self.add_diffusion(self.model.diffusion(p), u, out);
        Ok(())
    }

    /// [`Self::rhs`] on fields.
    pub fn fom_rhs(&self, p: &ParamPoint, t: f64, u: &Field) -> Result<Field> {
        let mut out = DVector::zeros(self.dim());
        self.rhs(p, t, u.coeffs(), &mut out)?;
        Field::new(self.components(), out)
    }

    /// `dR/dU = -nu A - dG/dU`.
    pub fn fom_jacobian(&self, p: &ParamPoint, _t: f64, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut jac = self.reaction_jacobian(p, u)?;
        jac.neg_mut();
        let nu = self.model.diffusion(p);
        let n = self.space.n_free();
        let a = self.space.stiffness().matrix();
        for c in 0..self.components() {
            let mut block = jac.view_mut((c * n, c * n), (n, n));
            block -= a * nu;
        }
        Ok(jac)
    }

    /// Binds the system to a parameter value for time integration.
    pub fn at(&self, p: ParamPoint) -> FomOde<'_> {
        FomOde { sys: self, p }
    }
}

/// A [`SemidiscreteSystem`] at a fixed parameter, as an ODE for the integrator.
#[derive(Clone, Copy)]
pub struct FomOde<'a> {
    sys: &'a SemidiscreteSystem,
    p: ParamPoint,
}

impl FomOde<'_> {
    pub fn param(&self) -> ParamPoint {
        self.p
    }

    pub fn system(&self) -> &SemidiscreteSystem {
        self.sys
    }
}

impl crate::integrate::OdeSystem for FomOde<'_> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn mass(&self) -> &DMatrix<f64> {
        self.sys.mass()
    }

    fn rhs(&self, t: f64, y: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        self.sys.rhs(&self.p, t, y, out)
    }

    fn jacobian(&self, t: f64, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.sys.fom_jacobian(&self.p, t, y)
    }

    fn mass_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.sys.mass_mul(x)
    }

    fn band_structure(&self) -> Option<&BandStructure> {
        Some(&self.sys.band)
    }
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::integrate::OdeSystem;

    fn brusselator_system(n: usize, nu: f64) -> SemidiscreteSystem {
        let model = Brusselator::new(1.0, nu).unwrap();
        SemidiscreteSystem::new(Arc::new(model), Mesh::uniform(n, (0.0, 1.0)).unwrap())
    }

    fn random_state(dim: usize, scale: f64, rng: &mut StdRng) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
    }

    #[test]
    fn brusselator_equilibrium_is_stationary() {
        for &(beta, nu) in &[(2.75, 0.01), (3.25, 0.01), (4.25, 0.1), (3.0, 0.003)] {
            let sys = brusselator_system(10, nu);
            let r = sys
                .fom_rhs(
                    &ParamPoint::one(beta),
                    0.0,
                    &Field::zeros(2, sys.space().n_free()),
                )
                .unwrap();
            assert!(r.coeffs().amax() < 1e-15, "beta={beta}");
        }
    }

    #[test]
    fn model_validation() {
        assert!(Brusselator::new(0.0, 0.01).is_err());
        assert!(Brusselator::new(1.0, -1.0).is_err());
        assert!(ScalarModel::new(0.0, ScalarReaction::Zero, 0.0).is_err());
        let (m, p) = Brusselator::shifted(1.0, 3.25, 0.01).unwrap();
        assert_eq!(p.alpha, 3.25);
        assert_eq!(m.diffusion(&p), 0.01);
        assert!((m.diffusion(&ParamPoint::two(3.25, 2.0)) - 0.01).abs() < 1e-17);
    }

    #[test]
    fn linear_decay_rhs_is_minus_stiffness() {
        let model = ScalarModel::new(1.0, ScalarReaction::Zero, 0.0).unwrap();
        let sys = SemidiscreteSystem::new(Arc::new(model), Mesh::uniform(7, (0.0, 1.0)).unwrap());
        let mut rng = StdRng::seed_from_u64(3);
        let u = random_state(sys.dim(), 1.0, &mut rng);
        let mut r = DVector::zeros(sys.dim());
        sys.rhs(&ParamPoint::one(1.0), 0.3, &u, &mut r).unwrap();
        let expected = -(sys.space().stiffness().matrix() * &u);
        assert!((r - expected).amax() < 1e-12);
        let jac = sys.fom_jacobian(&ParamPoint::one(1.0), 0.0, &u).unwrap();
        assert!((jac + sys.space().stiffness().matrix()).amax() < 1e-14);
    }

    // Oracle: on a 2-element mesh over [0,1] (h = 1/2) with full Dirichlet ends
    // the free nodes are 1, 2, 3. For u_h with nodal values (a, b, c) the cubic
    // The integrand u_h^3 phi_i has degree 8 per element, one more than the
    // 4-point rule integrates exactly, so the oracle is the same rule applied
    // by hand through the Lagrange form.
    fn cubic_load_by_hand(nodes: &[f64], weights: &[f64]) -> [f64; 3] {
        let nodal = [0.0, 0.7, -0.4, 1.3, 0.0];
        let lagrange = |xs: [f64; 3], x: f64, k: usize| {
            let mut v = 1.0;
            for m in 0..3 {
                if m != k {
                    v *= (x - xs[m]) / (xs[k] - xs[m]);
                }
            }
            v
        };
        let mut out = [0.0; 3];
        for e in 0..2 {
            let xs = [0.5 * e as f64, 0.5 * e as f64 + 0.25, 0.5 * e as f64 + 0.5];
            for (xq, wq) in nodes.iter().zip(weights) {
                let x = xs[0] + 0.25 * (xq + 1.0);
                let w = 0.25 * wq;
                let uh: f64 = (0..3).map(|k| nodal[2 * e + k] * lagrange(xs, x, k)).sum();
                for k in 0..3 {
                    let node = 2 * e + k;
                    if (1..=3).contains(&node) {
                        out[node - 1] += w * uh.powi(3) * lagrange(xs, x, k);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn cubic_nonlinearity_matches_independent_quadrature() {
        let model = ScalarModel::new(1.0, ScalarReaction::Cubic(1.0), 0.0).unwrap();
        let sys = SemidiscreteSystem::new(Arc::new(model), Mesh::uniform(2, (0.0, 1.0)).unwrap());
        let u = DVector::from_vec(vec![0.7, -0.4, 1.3]);
        let mut g = DVector::zeros(3);
        sys.reaction_vector(&ParamPoint::one(1.0), 0.0, &u, &mut g)
            .unwrap();

        let r = (525.0 - 70.0 * 30f64.sqrt()).sqrt() / 35.0;
        let s = (525.0 + 70.0 * 30f64.sqrt()).sqrt() / 35.0;
        let wr = (18.0 + 30f64.sqrt()) / 36.0;
        let ws = (18.0 - 30f64.sqrt()) / 36.0;
        let four = cubic_load_by_hand(&[-s, -r, r, s], &[ws, wr, wr, ws]);
        for i in 0..3 {
            assert!((g[i] - four[i]).abs() < 1e-14, "{g:?} vs {four:?}");
        }
    }

    fn check_jacobian_fd(sys: &SemidiscreteSystem, p: ParamPoint, u: &DVector<f64>) -> f64 {
        let jac = sys.fom_jacobian(&p, 0.0, u).unwrap();
        let eps = 1e-7;
        let mut worst: f64 = 0.0;
        let mut rp = DVector::zeros(sys.dim());
        let mut rm = DVector::zeros(sys.dim());
        for i in 0..sys.dim() {
            let mut up = u.clone();
            up[i] += eps;
            let mut um = u.clone();
            um[i] -= eps;
            sys.rhs(&p, 0.0, &up, &mut rp).unwrap();
            sys.rhs(&p, 0.0, &um, &mut rm).unwrap();
            let fd = (&rp - &rm) / (2.0 * eps);
            let col = jac.column(i);
            let err = (&fd - col).norm() / col.norm().max(1e-300);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        let sys = brusselator_system(8, 0.01);
        for _ in 0..10 {
            let u = random_state(sys.dim(), 0.8, &mut rng);
            let err = check_jacobian_fd(&sys, ParamPoint::one(3.25), &u);
            assert!(err <= 1e-5, "relative column error {err}");
        }
        let model = ScalarModel::new(0.1, ScalarReaction::Sine(0.5), 1.0).unwrap();
        let sys = SemidiscreteSystem::new(Arc::new(model), Mesh::uniform(6, (0.0, 1.0)).unwrap());
        let u = random_state(sys.dim(), 2.0, &mut rng);
        assert!(check_jacobian_fd(&sys, ParamPoint::one(1.0), &u) <= 1e-5);
    }

    #[test]
    fn brusselator_linearization_at_equilibrium() {
        let sys = brusselator_system(6, 0.01);
        let p = ParamPoint::one(3.25);
        let jac = sys
            .fom_jacobian(&p, 0.0, &DVector::zeros(sys.dim()))
            .unwrap();
        // Analytic linearization of the source at (u, v) = 0 with a = 1:
        // [[b - 1, 1], [-b, -1]]; the Jacobian of R is M-weighted by it.
        let m = sys.space().mass().matrix();
        let a = sys.space().stiffness().matrix();
        let n = sys.space().n_free();
        let b = 3.25;
        let blocks = [[b - 1.0, 1.0], [-b, -1.0]];
        for ci in 0..2 {
            for cj in 0..2 {
                let mut expected = m * blocks[ci][cj];
                if ci == cj {
                    expected -= a * 0.01;
                }
                let got = jac.view((ci * n, cj * n), (n, n));
                assert!((got - expected).amax() < 1e-13);
            }
        }
    }

    #[test]
    fn brusselator_equilibrium_has_unstable_complex_pair() {
        let sys = brusselator_system(20, 0.01);
        let p = ParamPoint::one(3.25);
        let jac = sys
            .fom_jacobian(&p, 0.0, &DVector::zeros(sys.dim()))
            .unwrap();
        let minv = sys.mass().clone().try_inverse().unwrap();
        let eig = (minv * jac).complex_eigenvalues();
        let unstable: Vec<_> = eig.iter().filter(|z| z.re > 0.0).collect();
        assert!(!unstable.is_empty());
        assert!(unstable.iter().all(|z| z.im.abs() > 1e-3));
    }

    #[test]
    fn rhs_is_continuous_in_parameters() {
        let sys = brusselator_system(8, 0.01);
        let mut rng = StdRng::seed_from_u64(5);
        let u = random_state(sys.dim(), 0.5, &mut rng);
        let eval = |b: f64| {
            let mut r = DVector::zeros(sys.dim());
            sys.rhs(&ParamPoint::one(b), 0.0, &u, &mut r).unwrap();
            r
        };
        let base = eval(3.0);
        let diffs: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
            .iter()
            .map(|d| (eval(3.0 + d) - &base).norm())
            .collect();
        assert!(diffs.windows(2).all(|w| w[1] < w[0]));
        assert!(diffs[3] < 1e-3 * diffs[0] * 10.0);
    }

    #[test]
    fn nan_state_is_reported() {
        let sys = brusselator_system(4, 0.01);
        let mut u = DVector::zeros(sys.dim());
        u[3] = f64::NAN;
        let mut r = DVector::zeros(sys.dim());
        assert!(matches!(
            sys.rhs(&ParamPoint::one(3.0), 0.0, &u, &mut r),
            Err(Error::NonFiniteState(_))
        ));
    }

    #[test]
    fn ode_binding_matches_system() {
        let sys = brusselator_system(5, 0.01);
        let ode = sys.at(ParamPoint::one(3.0));
        assert_eq!(ode.dim(), sys.dim());
        assert_eq!(ode.mass().nrows(), 2 * sys.space().n_free());
        let init = sys.initial_state(&ParamPoint::one(3.0)).unwrap();
        assert!((init.coeffs()[0] - 1e-2).abs() < 1e-15);
    }
}
