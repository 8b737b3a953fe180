use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::mesh::{poincare_constant, Mesh};
use crate::model::{Brusselator, ScalarModel, ScalarReaction};
use crate::snapshots::{build_set_standard, SnapshotBlock};

fn brusselator(n: usize) -> SemidiscreteSystem {
    let model = Brusselator::new(1.0, 1.0 / 50.0).unwrap();
    SemidiscreteSystem::new(Arc::new(model), Mesh::uniform(n, (0.0, 1.0)).unwrap())
}

fn scalar(n: usize, g: ScalarReaction, amp: f64) -> SemidiscreteSystem {
    let model = ScalarModel::new(0.1, g, amp).unwrap();
    SemidiscreteSystem::new(Arc::new(model), Mesh::uniform(n, (0.0, 1.0)).unwrap())
}

/// Basis from a standard set of smooth fields that vanish where the
/// boundary conditions require.
fn smooth_basis(sys: &SemidiscreteSystem, count: usize) -> PodBasis {
    let sp = sys.space();
    let comps = sys.components();
    let states: Vec<Field> = (0..count)
        .map(|j| {
            let s = j as f64 * 0.37;
            sp.interpolate(comps, |c, x| {
                let k = (j + c + 1) as f64;
                x * (1.0 - x) * ((k * x + s).sin() + 0.3 * (2.0 * (c + 1) as f64 * x + s).cos())
            })
            .unwrap()
        })
        .collect();
    let block = SnapshotBlock::new(ParamPoint::one(1.0), 1.0, states, None).unwrap();
    PodBasis::build(&build_set_standard(&[block]).unwrap(), sp).unwrap()
}

fn weighted_rms(diff: &DVector<f64>, reference: &DVector<f64>, cfg: &IntegratorConfig) -> f64 {
    let n = diff.len() as f64;
    (diff
        .iter()
        .zip(reference.iter())
        .map(|(d, y)| (d / (cfg.atol + cfg.rtol * y.abs())).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

fn random_coords(rng: &mut StdRng, r: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(r, |_, _| scale * (rng.random::<f64>() - 0.5))
}

#[test]
fn one_mode_operators() {
    let sys = brusselator(10);
    let basis = smooth_basis(&sys, 6);
    let ops = RomOperators::reduce(&basis, 1, &sys).unwrap();
    assert_eq!(ops.r(), 1);
    assert!((ops.stiffness()[(0, 0)] - 1.0).abs() < 1e-12);
    assert!(RomOperators::reduce(&basis, 0, &sys).is_err());
    assert!(RomOperators::reduce(&basis, basis.d_r() + 1, &sys).is_err());
}

#[test]
fn reduced_mass_is_spd_and_bounded_by_poincare() {
    let sys = brusselator(12);
    let basis = smooth_basis(&sys, 8);
    let ops = RomOperators::reduce(&basis, basis.d_r(), &sys).unwrap();
    let m = ops.mass();
    assert!((m - m.transpose()).amax() < 1e-13);
    let cp = poincare_constant(sys.space().mass(), sys.space().stiffness()).unwrap();
    let eig = m.clone().symmetric_eigen();
    for &l in eig.eigenvalues.iter() {
        assert!(l > 0.0 && l <= cp * cp * (1.0 + 1e-9), "{l} vs {}", cp * cp);
    }
    assert!(ops.identity_defect() <= STIFFNESS_IDENTITY_TOL);
}

#[test]
fn equilibrium_is_preserved() {
    let sys = brusselator(10);
    let basis = smooth_basis(&sys, 6);
    let ops = RomOperators::reduce(&basis, basis.d_r(), &sys).unwrap();
    let zero = DVector::zeros(ops.r());
    let mut out = DVector::from_element(ops.r(), 1.0);
    for beta in [2.75, 3.5, 4.25] {
        for p in [ParamPoint::one(beta), ParamPoint::two(beta, 1.5)] {
            ops.rom_rhs(&p, 0.0, &zero, &mut out).unwrap();
            assert!(out.amax() < 1e-14, "{p}");
        }
    }
}

#[test]
fn linear_modal_decay() {
    let sys = scalar(10, ScalarReaction::Zero, 0.0);
    let basis = smooth_basis(&sys, 5);
    let ops = RomOperators::reduce(&basis, basis.d_r(), &sys).unwrap();
    let mut rng = StdRng::seed_from_u64(1);
    let a = random_coords(&mut rng, ops.r(), 2.0);
    let mut out = DVector::zeros(ops.r());
    ops.rom_rhs(&ParamPoint::one(1.0), 0.3, &a, &mut out)
        .unwrap();
    assert!((out + &a * 0.1).amax() < 1e-10 * a.amax());
}

#[test]
fn galerkin_consistency() {
    let mut rng = StdRng::seed_from_u64(2);
    let cases: Vec<(SemidiscreteSystem, ParamPoint, f64)> = vec![
        (brusselator(10), ParamPoint::one(3.25), 0.3),
        (brusselator(10), ParamPoint::two(4.0, 2.0), 0.3),
        (
            scalar(12, ScalarReaction::Sine(0.5), 1.0),
            ParamPoint::one(1.5),
            2.0,
        ),
        (
            scalar(12, ScalarReaction::Cubic(1.0), 0.0),
            ParamPoint::one(1.0),
            1.0,
        ),
    ];
    for (sys, p, scale) in &cases {
        let basis = smooth_basis(sys, 6);
        let ops = RomOperators::reduce(&basis, basis.d_r(), sys).unwrap();
        for _ in 0..20 {
            let a = random_coords(&mut rng, ops.r(), *scale);
            let t = rng.random::<f64>();
            let mut rhat = DVector::zeros(ops.r());
            ops.rom_rhs(p, t, &a, &mut rhat).unwrap();
            let full = sys.fom_rhs(p, t, &ops.lift(&a).unwrap()).unwrap();
            let proj = ops.modes().tr_mul(full.coeffs());
            assert!(
                (&proj - &rhat).norm() <= 1e-12 * rhat.norm().max(1e-300),
                "{p}"
            );
        }
    }
}

#[test]
fn reduced_jacobian_matches_central_differences() {
    let mut rng = StdRng::seed_from_u64(3);
    for (sys, p) in [
        (brusselator(8), ParamPoint::one(3.0)),
        (
            scalar(8, ScalarReaction::Sine(0.5), 0.0),
            ParamPoint::one(1.0),
        ),
    ] {
        let basis = smooth_basis(&sys, 5);
        let ops = RomOperators::reduce(&basis, basis.d_r(), &sys).unwrap();
        let r = ops.r();
        let a = random_coords(&mut rng, r, 0.5);
        let jac = ops.rom_jacobian(&p, &a).unwrap();
        let eps = 1e-7;
        let mut fd = DMatrix::zeros(r, r);
        let (mut fp, mut fm) = (DVector::zeros(r), DVector::zeros(r));
        for k in 0..r {
            let mut ap = a.clone();
            ap[k] += eps;
            let mut am = a.clone();
            am[k] -= eps;
            ops.rom_rhs(&p, 0.0, &ap, &mut fp).unwrap();
            ops.rom_rhs(&p, 0.0, &am, &mut fm).unwrap();
            fd.column_mut(k).copy_from(&((&fp - &fm) / (2.0 * eps)));
        }
        assert!((&jac - &fd).norm() <= 1e-5 * jac.norm());
    }
}

/// Generalized eigenvectors of `A v = lambda M v`, lowest first.
fn lowest_eigenvectors(sys: &SemidiscreteSystem, count: usize) -> Vec<DVector<f64>> {
    let l = sys.space().mass().matrix().clone().cholesky().unwrap();
    let li = l.l().try_inverse().unwrap();
    let c = &li * sys.space().stiffness().matrix() * li.transpose();
    let e = c.symmetric_eigen();
    let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    idx.into_iter()
        .take(count)
        .map(|i| li.transpose() * e.eigenvectors.column(i))
        .collect()
}

// A linear problem started in a span of generalized eigenvectors stays
// there, so the full-rank ROM reproduces the FOM.
#[test]
fn rom_tracks_fom_on_invariant_subspace() {
    let sys = scalar(12, ScalarReaction::Zero, 0.0);
    let vecs = lowest_eigenvectors(&sys, 3);
    let u0 = &vecs[0] * 1.0 + &vecs[1] * 0.5 - &vecs[2] * 0.25;
    let states: Vec<Field> = vecs
        .iter()
        .map(|v| Field::new(1, v.clone()).unwrap())
        .collect();
    let block = SnapshotBlock::new(ParamPoint::one(1.0), 1.0, states, None).unwrap();
    let basis = PodBasis::build(&build_set_standard(&[block]).unwrap(), sys.space()).unwrap();
    assert_eq!(basis.d_r(), 3);
    let ops = RomOperators::reduce(&basis, 3, &sys).unwrap();
    let p = ParamPoint::one(1.0);
    let cfg = IntegratorConfig::default();
    let fom = integrate(&sys.at(p), &u0, (0.0, 0.5), &cfg, Some(&[0.5])).unwrap();
    let a0 = ops.project(&u0).unwrap();
    let rom = integrate_rom(&ops, p, &a0, (0.0, 0.5), &cfg, Some(&[0.5])).unwrap();
    let lift = ops.lift(&rom.states[0]).unwrap();
    let diff = lift.coeffs() - &fom.states[0];
    let err = diff.norm() / fom.states[0].norm();
    assert!(err <= 100.0 * cfg.rtol, "{err:e}");
}

#[test]
fn initial_coords_are_projection_of_fom_initial_state() {
    let sys = brusselator(10);
    let basis = smooth_basis(&sys, 6);
    let r = basis.d_r();
    let ops = RomOperators::reduce(&basis, r, &sys).unwrap();
    let p = ParamPoint::one(3.0);
    let u0 = sys.initial_state(&p).unwrap();
    let a0 = ops.initial_coords(&p).unwrap();
    let direct = basis.project_h01(r, &u0).unwrap();
    assert!((ops.lift(&a0).unwrap().coeffs() - direct.coeffs()).amax() < 1e-14);
}

#[test]
fn tolerance_refinement_changes_endpoint_little() {
    let sys = brusselator(10);
    let basis = smooth_basis(&sys, 6);
    let ops = RomOperators::reduce(&basis, basis.d_r(), &sys).unwrap();
    let p = ParamPoint::one(3.25);
    let a0 = ops.initial_coords(&p).unwrap() * 20.0;
    let coarse = IntegratorConfig::with_tolerances(1e-8, 1e-11);
    let fine = IntegratorConfig::with_tolerances(0.5e-8, 0.5e-11);
    let ya = integrate_rom(&ops, p, &a0, (0.0, 5.0), &coarse, Some(&[5.0])).unwrap();
    let yb = integrate_rom(&ops, p, &a0, (0.0, 5.0), &fine, Some(&[5.0])).unwrap();
    let d = weighted_rms(&(&ya.states[0] - &yb.states[0]), &yb.states[0], &coarse);
    assert!(d < 10.0, "{d}");
}

#[test]
fn rom_config_uses_tighter_period_tolerance() {
    assert_eq!(rom_orbit_config().period_rtol, 1e-8);
    assert_eq!(rom_orbit_config().max_time, OrbitConfig::default().max_time);
}
