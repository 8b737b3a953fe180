//! One-dimensional quadratic Lagrange finite elements.
//!
//! Nodes are numbered left to right with vertices at even indices and element
//! midpoints at odd indices, so element `e` owns nodes `2e, 2e+1, 2e+2`.
//! Homogeneous Dirichlet ends are eliminated from the unknowns; every discrete
//! quantity (matrices, [`Field`] coefficients) lives on the free nodes only.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};

/// Gauss-Legendre abscissae on [-1, 1], four points (exact to degree 7).
const GAUSS_X: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS_W: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Number of quadrature points per element.
pub const QUAD_POINTS: usize = 4;

/// P2 shape functions on the reference element [0, 1].
pub fn shape(xi: f64) -> [f64; 3] {
    [
        (1.0 - xi) * (1.0 - 2.0 * xi),
        4.0 * xi * (1.0 - xi),
        xi * (2.0 * xi - 1.0),
    ]
}

/// Reference derivatives d/dxi of [`shape`].
pub fn shape_deriv(xi: f64) -> [f64; 3] {
    [4.0 * xi - 3.0, 4.0 - 8.0 * xi, 4.0 * xi - 1.0]
}

/// Quadrature rule mapped to the reference element [0, 1] with shape values
/// tabulated at its points.
#[derive(Clone, Debug)]
pub struct RefQuadrature {
    pub xi: [f64; QUAD_POINTS],
    pub weights: [f64; QUAD_POINTS],
    pub phi: [[f64; 3]; QUAD_POINTS],
    pub dphi: [[f64; 3]; QUAD_POINTS],
}

impl RefQuadrature {
    pub fn gauss4() -> Self {
        let mut xi = [0.0; QUAD_POINTS];
        let mut weights = [0.0; QUAD_POINTS];
        let mut phi = [[0.0; 3]; QUAD_POINTS];
        let mut dphi = [[0.0; 3]; QUAD_POINTS];
        for q in 0..QUAD_POINTS {
            xi[q] = 0.5 * (GAUSS_X[q] + 1.0);
            weights[q] = 0.5 * GAUSS_W[q];
            phi[q] = shape(xi[q]);
            dphi[q] = shape_deriv(xi[q]);
        }
        Self {
            xi,
            weights,
            phi,
            dphi,
        }
    }
}

/// Uniform P2 mesh of an interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    n_elems: usize,
    domain: (f64, f64),
    node_coords: Vec<f64>,
}

impl Mesh {
    /// Uniform mesh with `n_elems` quadratic elements on `[a, b]`.
    pub fn uniform(n_elems: usize, domain: (f64, f64)) -> Result<Self> {
        if n_elems < 2 {
            return Err(Error::InvalidArgument(format!(
                "mesh needs at least 2 elements, got {n_elems}"
            )));
        }
        let (a, b) = domain;
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::InvalidArgument(format!("bad domain [{a}, {b}]")));
        }
        let n_nodes = 2 * n_elems + 1;
        let half = (b - a) / (2 * n_elems) as f64;
        let mut node_coords: Vec<f64> = (0..n_nodes).map(|i| a + i as f64 * half).collect();
        node_coords[n_nodes - 1] = b;
        Ok(Self {
            n_elems,
            domain,
            node_coords,
        })
    }

    pub fn n_elems(&self) -> usize {
        self.n_elems
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn length(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    /// Element length.
    pub fn h(&self) -> f64 {
        self.length() / self.n_elems as f64
    }

    pub fn node_coords(&self) -> &[f64] {
        &self.node_coords
    }

    /// Global node indices of element `e` (left vertex, midpoint, right vertex).
    pub fn elem_dofs(&self, e: usize) -> [usize; 3] {
        [2 * e, 2 * e + 1, 2 * e + 2]
    }

    /// Left endpoint of element `e`.
    pub fn elem_origin(&self, e: usize) -> f64 {
        self.node_coords[2 * e]
    }

    /// Element containing `x` and the local coordinate in [0, 1].
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.domain.0) / self.h();
        let e = (s.floor().max(0.0) as usize).min(self.n_elems - 1);
        (e, s - e as f64)
    }

    /// Uniform refinement splitting every element in two.
    pub fn refined(&self) -> Self {
        Self::uniform(2 * self.n_elems, self.domain).expect("refinement of a valid mesh")
    }
}

/// Boundary behaviour at one end of the interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcKind {
    /// Homogeneous Dirichlet: the end node is eliminated.
    Dirichlet0,
    /// Homogeneous Neumann: natural condition, the node stays free.
    Neumann0,
}

impl BcKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BcKind::Dirichlet0 => "dirichlet0",
            BcKind::Neumann0 => "neumann0",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dirichlet0" => Some(BcKind::Dirichlet0),
            "neumann0" => Some(BcKind::Neumann0),
            _ => None,
        }
    }
}

/// Boundary conditions and the resulting free-node numbering.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryCondition {
    left: BcKind,
    right: BcKind,
    free_dofs: Vec<usize>,
    node_to_free: Vec<Option<usize>>,
}

impl BoundaryCondition {
    pub fn new(mesh: &Mesh, left: BcKind, right: BcKind) -> Self {
        let n = mesh.n_nodes();
        let mut free_dofs = Vec::with_capacity(n);
        let mut node_to_free = vec![None; n];
        for (node, slot) in node_to_free.iter_mut().enumerate() {
            let pinned = (node == 0 && left == BcKind::Dirichlet0)
                || (node == n - 1 && right == BcKind::Dirichlet0);
            if !pinned {
                *slot = Some(free_dofs.len());
                free_dofs.push(node);
            }
        }
        Self {
            left,
            right,
            free_dofs,
            node_to_free,
        }
    }

    pub fn left(&self) -> BcKind {
        self.left
    }

    pub fn right(&self) -> BcKind {
        self.right
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        self.node_to_free[node]
    }

    pub fn has_dirichlet(&self) -> bool {
        self.left == BcKind::Dirichlet0 || self.right == BcKind::Dirichlet0
    }
}

/// Dense symmetric matrix. Symmetry is exact: the upper triangle is mirrored
/// from the lower one on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, copying its lower triangle onto the upper one.
    pub fn from_lower(mut m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let n = m.nrows();
        for j in 0..n {
            for i in 0..j {
                m[(i, j)] = m[(j, i)];
            }
        }
        Ok(Self(m))
    }

    /// Wraps `m` after checking that it is symmetric to `tol` relative to its
    /// largest entry, then symmetrizes exactly.
    pub fn checked(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > tol * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `u^T S v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            let col = self.0.column(j);
            let mut s = 0.0;
            for i in 0..n {
                s += u[i] * col[i];
            }
            acc += s * v[j];
        }
        acc
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.clone().cholesky().is_some()
    }

    /// Block-diagonal matrix with `copies` copies of `self`.
    pub fn block_diag(&self, copies: usize) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n * copies, n * copies);
        for c in 0..copies {
            out.view_mut((c * n, c * n), (n, n)).copy_from(&self.0);
        }
        out
    }
}

/// Coefficient vector of a (possibly vector-valued) finite-element function
/// on the free nodes, stored component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    components: usize,
    coeffs: DVector<f64>,
}

impl Field {
    pub fn zeros(components: usize, n_free: usize) -> Self {
        Self {
            components,
            coeffs: DVector::zeros(components * n_free),
        }
    }

    pub fn new(components: usize, coeffs: DVector<f64>) -> Result<Self> {
        if components == 0 || !coeffs.len().is_multiple_of(components) {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients cannot be split into {components} components",
                coeffs.len()
            )));
        }
        Ok(Self { components, coeffs })
    }

    pub fn from_vec(components: usize, coeffs: Vec<f64>) -> Result<Self> {
        Self::new(components, DVector::from_vec(coeffs))
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Free nodes per component.
    pub fn n_free(&self) -> usize {
        self.coeffs.len() / self.components
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut DVector<f64> {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> DVector<f64> {
        self.coeffs
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.n_free();
        &self.coeffs.as_slice()[c * n..(c + 1) * n]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            components: self.components,
            coeffs: &self.coeffs * s,
        }
    }

    /// `(self - other) / denom`.
    pub fn difference_quotient(&self, other: &Field, denom: f64) -> Result<Self> {
        ensure_dim(self.len(), other.len())?;
        Ok(Self {
            components: self.components,
            coeffs: (&self.coeffs - &other.coeffs) / denom,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }
}

/// Mesh, boundary conditions and the assembled single-component mass and
/// stiffness matrices.
#[derive(Clone, Debug)]
pub struct FemSpace {
    mesh: Mesh,
    bc: BoundaryCondition,
    mass: SymMatrix,
    stiffness: SymMatrix,
}

impl FemSpace {
    pub fn new(mesh: Mesh, left: BcKind, right: BcKind) -> Self {
        let bc = BoundaryCondition::new(&mesh, left, right);
        let mass = assemble_mass(&mesh, &bc);
        let stiffness = assemble_stiffness(&mesh, &bc);
        Self {
            mesh,
            bc,
            mass,
            stiffness,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn bc(&self) -> &BoundaryCondition {
        &self.bc
    }

    pub fn mass(&self) -> &SymMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &SymMatrix {
        &self.stiffness
    }

    pub fn n_free(&self) -> usize {
        self.bc.n_free()
    }

    pub fn l2_inner(&self, u: &Field, v: &Field) -> Result<f64> {
        l2_inner(&self.mass, u, v)
    }

    pub fn h1_semi_inner(&self, u: &Field, v: &Field) -> Result<f64> {
        h1_semi_inner(&self.stiffness, u, v)
    }

    pub fn l2_norm(&self, u: &Field) -> f64 {
        block_inner(&self.mass, u, u).map_or(f64::NAN, |s| s.max(0.0).sqrt())
    }

    pub fn h1_semi_norm(&self, u: &Field) -> f64 {
        block_inner(&self.stiffness, u, u).map_or(f64::NAN, |s| s.max(0.0).sqrt())
    }

    pub fn interpolate<F>(&self, components: usize, f: F) -> Result<Field>
    where
        F: Fn(usize, f64) -> f64,
    {
        interpolate_nodal(f, components, &self.mesh, &self.bc)
    }

    /// Point value of component `c` of `u` at `x`.
    pub fn eval(&self, u: &Field, c: usize, x: f64) -> f64 {
        let (e, xi) = self.mesh.locate(x);
        let n = shape(xi);
        let vals = u.component(c);
        self.mesh
            .elem_dofs(e)
            .iter()
            .zip(n.iter())
            .map(|(&node, &w)| self.bc.free_index(node).map_or(0.0, |i| w * vals[i]))
            .sum()
    }

    /// Exact injection of `u` into the uniformly refined space `fine`
    /// (nested P2 spaces, so this is lossless).
    pub fn prolongate(&self, u: &Field, fine: &FemSpace) -> Result<Field> {
        if fine.mesh.n_elems() != 2 * self.mesh.n_elems()
            || fine.mesh.domain() != self.mesh.domain()
        {
            return Err(Error::InvalidArgument(
                "target space is not a uniform refinement".into(),
            ));
        }
        let comps = u.components();
        let nf = fine.n_free();
        let mut out = Vec::with_capacity(comps * nf);
        for c in 0..comps {
            for &node in fine.bc.free_dofs() {
                out.push(self.eval(u, c, fine.mesh.node_coords()[node]));
            }
        }
        Field::from_vec(comps, out)
    }
}

/// Assembles the mass matrix `(phi_i, phi_j)` on the free nodes.
pub fn assemble_mass(mesh: &Mesh, bc: &BoundaryCondition) -> SymMatrix {
    assemble(mesh, bc, |quad, q, a, b, h| {
        quad.weights[q] * quad.phi[q][a] * quad.phi[q][b] * h
    })
}

/// Assembles the stiffness matrix `(phi_i', phi_j')` on the free nodes.
pub fn assemble_stiffness(mesh: &Mesh, bc: &BoundaryCondition) -> SymMatrix {
    assemble(mesh, bc, |quad, q, a, b, h| {
        quad.weights[q] * quad.dphi[q][a] * quad.dphi[q][b] / h
    })
}

fn assemble<K>(mesh: &Mesh, bc: &BoundaryCondition, kernel: K) -> SymMatrix
where
    K: Fn(&RefQuadrature, usize, usize, usize, f64) -> f64,
{
    let quad = RefQuadrature::gauss4();
    let h = mesh.h();
    let n = bc.n_free();
    let mut m = DMatrix::zeros(n, n);
    let mut local = [[0.0; 3]; 3];
    for (a, row) in local.iter_mut().enumerate() {
        for (b, entry) in row.iter_mut().enumerate() {
            *entry = (0..QUAD_POINTS).map(|q| kernel(&quad, q, a, b, h)).sum();
        }
    }
    for e in 0..mesh.n_elems() {
        let dofs = mesh.elem_dofs(e).map(|node| bc.free_index(node));
        for a in 0..3 {
            let Some(i) = dofs[a] else { continue };
            for b in 0..3 {
                let Some(j) = dofs[b] else { continue };
                m[(i, j)] += local[a][b];
            }
        }
    }
    SymMatrix::from_lower(m).expect("square by construction")
}

fn block_inner(mat: &SymMatrix, u: &Field, v: &Field) -> Result<f64> {
    ensure_dim(u.len(), v.len())?;
    ensure_dim(u.components(), v.components())?;
    ensure_dim(mat.dim(), u.n_free())?;
    Ok((0..u.components())
        .map(|c| mat.bilinear(u.component(c), v.component(c)))
        .sum())
}

/// H1 seminorm inner product `(grad u, grad v)`, summed over components.
pub fn h1_semi_inner(stiffness: &SymMatrix, u: &Field, v: &Field) -> Result<f64> {
    block_inner(stiffness, u, v)
}

/// L2 inner product `(u, v)`, summed over components.
pub fn l2_inner(mass: &SymMatrix, u: &Field, v: &Field) -> Result<f64> {
    block_inner(mass, u, v)
}

/// Nodal Lagrange interpolant of `f(component, x)` on the free nodes.
pub fn interpolate_nodal<F>(
    f: F,
    components: usize,
    mesh: &Mesh,
    bc: &BoundaryCondition,
) -> Result<Field>
where
    F: Fn(usize, f64) -> f64,
{
    if components == 0 {
        return Err(Error::InvalidArgument("zero components".into()));
    }
    let coords = mesh.node_coords();
    let last = mesh.n_nodes() - 1;
    let mut out = Vec::with_capacity(components * bc.n_free());
    for c in 0..components {
        for (node, &x) in coords.iter().enumerate() {
            let value = f(c, x);
            if !value.is_finite() {
                return Err(Error::NonFiniteState(format!(
                    "interpolated function is {value} at x={x}"
                )));
            }
            if bc.free_index(node).is_some() {
                out.push(value);
            } else if value.abs() > 1e-12 {
                debug_assert!(node == 0 || node == last);
                return Err(Error::InconsistentBc {
                    component: c,
                    x,
                    value,
                });
            }
        }
    }
    Field::from_vec(components, out)
}

/// Poincaré constant `C_p = lambda_min^{-1/2}` of the discrete operator pair,
/// where `lambda_min` is the smallest generalized eigenvalue of `A v = lambda M v`.
pub fn poincare_constant(mass: &SymMatrix, stiffness: &SymMatrix) -> Result<f64> {
    ensure_dim(mass.dim(), stiffness.dim())?;
    let chol = stiffness.matrix().clone().cholesky().ok_or_else(|| {
        Error::InvalidArgument("stiffness matrix is not positive definite".into())
    })?;
    let m = mass.matrix();
    let n = mass.dim();
    let mut v = DVector::from_element(n, 1.0);
    let mut lambda_old = f64::INFINITY;
    for _ in 0..10_000 {
        let rhs = m * &v;
        let x = chol.solve(&rhs);
        let norm = (x.dot(&(m * &x))).sqrt();
        v = x / norm;
        let lambda = v.dot(&(stiffness.matrix() * &v));
        if (lambda - lambda_old).abs() <= 1e-10 * lambda {
            return Ok(lambda.powf(-0.5));
        }
        lambda_old = lambda;
    }
    Err(Error::InvalidArgument(
        "inverse iteration for the Poincaré constant did not converge".into(),
    ))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn space(n: usize, left: BcKind, right: BcKind) -> FemSpace {
        FemSpace::new(Mesh::uniform(n, (0.0, 1.0)).unwrap(), left, right)
    }

    #[test]
    fn mesh_layout() {
        let m = Mesh::uniform(50, (0.0, 1.0)).unwrap();
        assert_eq!(m.n_nodes(), 101);
        assert!((m.h() - 0.02).abs() < 1e-15);
        let m = Mesh::uniform(2, (0.0, 1.0)).unwrap();
        assert_eq!(m.node_coords(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(Mesh::uniform(80, (0.0, 1.0)).unwrap().n_nodes(), 161);
        assert!(matches!(
            Mesh::uniform(1, (0.0, 1.0)),
            Err(Error::InvalidArgument(_))
        ));
        let m = Mesh::uniform(7, (-1.0, 2.0)).unwrap();
        assert!(m.node_coords().windows(2).all(|w| w[1] > w[0]));
        assert_eq!(m.node_coords()[0], -1.0);
        assert_eq!(*m.node_coords().last().unwrap(), 2.0);
    }

    #[test]
    fn free_dofs_follow_bc() {
        let mesh = Mesh::uniform(3, (0.0, 1.0)).unwrap();
        let bc = BoundaryCondition::new(&mesh, BcKind::Neumann0, BcKind::Dirichlet0);
        assert_eq!(bc.free_dofs(), &[0, 1, 2, 3, 4, 5]);
        let bc = BoundaryCondition::new(&mesh, BcKind::Dirichlet0, BcKind::Dirichlet0);
        assert_eq!(bc.free_dofs(), &[1, 2, 3, 4, 5]);
        assert_eq!(bc.free_index(0), None);
        assert_eq!(bc.free_index(1), Some(0));
    }

    // Element matrices from symbolic integration of P2 shape-function products:
    // mass h/30 [[4,2,-1],[2,16,2],[-1,2,4]], stiffness 1/(3h) [[7,-8,1],[-8,16,-8],[1,-8,7]].
    #[test]
    fn two_element_matrices_match_hand_assembly() {
        let s = space(2, BcKind::Neumann0, BcKind::Neumann0);
        #[rustfmt::skip]
        let mass = [
            4.0, 2.0, -1.0, 0.0, 0.0,
            2.0, 16.0, 2.0, 0.0, 0.0,
            -1.0, 2.0, 8.0, 2.0, -1.0,
            0.0, 0.0, 2.0, 16.0, 2.0,
            0.0, 0.0, -1.0, 2.0, 4.0,
        ];
        #[rustfmt::skip]
        let stiff = [
            7.0, -8.0, 1.0, 0.0, 0.0,
            -8.0, 16.0, -8.0, 0.0, 0.0,
            1.0, -8.0, 14.0, -8.0, 1.0,
            0.0, 0.0, -8.0, 16.0, -8.0,
            0.0, 0.0, 1.0, -8.0, 7.0,
        ];
        for i in 0..5 {
            for j in 0..5 {
                let m = s.mass().matrix()[(i, j)];
                let a = s.stiffness().matrix()[(i, j)];
                assert!((m - mass[i * 5 + j] / 60.0).abs() < 1e-15, "M[{i},{j}]={m}");
                assert!(
                    (a - stiff[i * 5 + j] * 2.0 / 3.0).abs() < 1e-14,
                    "A[{i},{j}]={a}"
                );
            }
        }
    }

    #[test]
    fn mass_partition_of_unity() {
        let s = space(13, BcKind::Neumann0, BcKind::Neumann0);
        let one = s.interpolate(1, |_, _| 1.0).unwrap();
        assert!((s.l2_inner(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        assert!((s.mass().matrix().sum() - 1.0).abs() < 1e-14);
        // Row sums are the integrals of the basis functions.
        let h = s.mesh().h();
        let rows = s.mass().matrix().column_sum();
        assert!((rows[0] - h / 6.0).abs() < 1e-15);
        assert!((rows[1] - 2.0 * h / 3.0).abs() < 1e-15);
        assert!((rows[2] - h / 3.0).abs() < 1e-15);
        assert!(s.mass().is_positive_definite());
    }

    #[test]
    fn stiffness_exact_on_polynomials() {
        let s = space(9, BcKind::Dirichlet0, BcKind::Neumann0);
        let v = s.interpolate(1, |_, x| x).unwrap();
        assert!((s.h1_semi_inner(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let s = space(9, BcKind::Dirichlet0, BcKind::Dirichlet0);
        let v = s.interpolate(1, |_, x| x * (1.0 - x)).unwrap();
        assert!((s.h1_semi_inner(&v, &v).unwrap() - 1.0 / 3.0).abs() < 1e-13);
        assert!(s.stiffness().is_positive_definite());
        // Two components each contributing 1/3.
        let w = s.interpolate(2, |_, x| x * (1.0 - x)).unwrap();
        assert!((s.h1_semi_norm(&w).powi(2) - 2.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn neumann_stiffness_is_singular() {
        let s = space(4, BcKind::Neumann0, BcKind::Neumann0);
        let one = s.interpolate(1, |_, _| 1.0).unwrap();
        assert!(s.h1_semi_norm(&one) < 1e-7);
        assert!(matches!(
            poincare_constant(s.mass(), s.stiffness()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn inner_products_basic() {
        let s = space(6, BcKind::Dirichlet0, BcKind::Dirichlet0);
        let u = s
            .interpolate(1, |_, x| (3.0 * x).sin() * x * (1.0 - x))
            .unwrap();
        let v = s.interpolate(1, |_, x| x * x * (1.0 - x)).unwrap();
        let z = Field::zeros(1, s.n_free());
        assert_eq!(s.h1_semi_inner(&z, &v).unwrap(), 0.0);
        let a = s.h1_semi_inner(&u, &v).unwrap();
        let b = s.h1_semi_inner(&v, &u).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs());
        let lhs = s.l2_inner(&u.scaled(2.5), &v).unwrap();
        let rhs = 2.5 * s.l2_inner(&u, &v).unwrap();
        assert!((lhs - rhs).abs() <= 1e-14 * rhs.abs());
        let bad = Field::zeros(1, s.n_free() + 1);
        assert!(matches!(
            s.l2_inner(&u, &bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sine_l2_norm() {
        // |I_h sin(pi x)|^2 - 1/2 is O(h^4) for P2 nodal interpolation.
        let defect = |n: usize| {
            let s = space(n, BcKind::Dirichlet0, BcKind::Dirichlet0);
            let u = s.interpolate(1, |_, x| (PI * x).sin()).unwrap();
            s.l2_inner(&u, &u).unwrap() - 0.5
        };
        let (d25, d50) = (defect(25), defect(50));
        assert!(d50.abs() < 2e-8, "{d50:e}");
        assert!(((d25 / d50).log2() - 4.0).abs() < 0.1);
    }

    #[test]
    fn interpolation_properties() {
        let s = space(5, BcKind::Dirichlet0, BcKind::Dirichlet0);
        let z = s.interpolate(1, |_, _| 0.0).unwrap();
        assert!(z.coeffs().iter().all(|&c| c == 0.0));
        let q = s.interpolate(1, |_, x| x * (1.0 - x)).unwrap();
        for k in 0..200 {
            let x = k as f64 / 199.0;
            assert!((s.eval(&q, 0, x) - x * (1.0 - x)).abs() < 1e-14);
        }
        let err = s.interpolate(1, |_, x| x + 1.0);
        assert!(matches!(err, Err(Error::InconsistentBc { .. })));
    }

    #[test]
    fn interpolation_error_is_third_order() {
        let max_err = |n: usize| {
            let s = space(n, BcKind::Dirichlet0, BcKind::Dirichlet0);
            let u = s.interpolate(1, |_, x| (PI * x).sin()).unwrap();
            let samples = 20 * n * 10;
            (0..=samples)
                .map(|k| {
                    let x = k as f64 / samples as f64;
                    (s.eval(&u, 0, x) - (PI * x).sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (max_err(10), max_err(20), max_err(40));
        for ratio in [e1 / e2, e2 / e3] {
            let order = ratio.log2();
            assert!((order - 3.0).abs() < 0.15, "observed order {order}");
        }
        // Nodal values are exact by definition.
        let s = space(10, BcKind::Dirichlet0, BcKind::Dirichlet0);
        let u = s.interpolate(1, |_, x| (PI * x).sin()).unwrap();
        for &x in s.mesh().node_coords() {
            assert!((s.eval(&u, 0, x) - (PI * x).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn poincare_constants() {
        let s = space(64, BcKind::Dirichlet0, BcKind::Dirichlet0);
        let cp = poincare_constant(s.mass(), s.stiffness()).unwrap();
        assert!((cp - 1.0 / PI).abs() < 1e-4, "{cp}");
        let s = space(64, BcKind::Neumann0, BcKind::Dirichlet0);
        let cp = poincare_constant(s.mass(), s.stiffness()).unwrap();
        assert!((cp - 2.0 / PI).abs() < 1e-4, "{cp}");

        let s1 = space(20, BcKind::Dirichlet0, BcKind::Dirichlet0);
        let s2 = FemSpace::new(
            Mesh::uniform(20, (0.0, 2.0)).unwrap(),
            BcKind::Dirichlet0,
            BcKind::Dirichlet0,
        );
        let c1 = poincare_constant(s1.mass(), s1.stiffness()).unwrap();
        let c2 = poincare_constant(s2.mass(), s2.stiffness()).unwrap();
        assert!((c2 / c1 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn poincare_converges_from_below_at_fourth_order() {
        let lambdas: Vec<f64> = [4, 8, 16]
            .iter()
            .map(|&n| {
                let s = space(n, BcKind::Dirichlet0, BcKind::Dirichlet0);
                poincare_constant(s.mass(), s.stiffness()).unwrap().powi(-2)
            })
            .collect();
        let cps: Vec<f64> = lambdas.iter().map(|l| l.powf(-0.5)).collect();
        assert!(cps[0] < cps[1] && cps[1] < cps[2] && cps[2] < 1.0 / PI);
        let exact = PI * PI;
        let ratio = (lambdas[0] - exact) / (lambdas[1] - exact);
        assert!((ratio.log2() - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn prolongation_is_exact() {
        let coarse = space(6, BcKind::Neumann0, BcKind::Dirichlet0);
        let fine = space(12, BcKind::Neumann0, BcKind::Dirichlet0);
        let u = coarse
            .interpolate(2, |c, x| {
                (1.0 + c as f64) * (1.0 - x * x) + (3.0 * x).cos() * (1.0 - x)
            })
            .unwrap();
        let uf = coarse.prolongate(&u, &fine).unwrap();
        let (a, b) = (coarse.h1_semi_norm(&u), fine.h1_semi_norm(&uf));
        assert!((a - b).abs() < 1e-12 * a);
        let (a, b) = (coarse.l2_norm(&u), fine.l2_norm(&uf));
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn sym_matrix_checks() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.5, 1.0]);
        assert!(matches!(
            SymMatrix::checked(m, 1e-12),
            Err(Error::NotSymmetric(_))
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let s = SymMatrix::checked(m, 1e-12).unwrap();
        assert_eq!(s.bilinear(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
        let b = s.block_diag(2);
        assert_eq!(b[(3, 2)], 2.0);
        assert_eq!(b[(0, 2)], 0.0);
    }
}
