use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::mesh::Mesh;
use crate::model::{Brusselator, ParamPoint, ScalarModel, ScalarReaction, SemidiscreteSystem};

/// `M y' = M (K y + b)` for a constant matrix `K`.
struct Linear {
    mass: DMatrix<f64>,
    k: DMatrix<f64>,
    b: DVector<f64>,
}

impl Linear {
    fn new(k: DMatrix<f64>) -> Self {
        let n = k.nrows();
        Self {
            mass: DMatrix::identity(n, n),
            k,
            b: DVector::zeros(n),
        }
    }
}

impl OdeSystem for Linear {
    fn dim(&self) -> usize {
        self.k.nrows()
    }

    fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    fn rhs(&self, _t: f64, y: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        out.copy_from(&(&self.mass * (&self.k * y + &self.b)));
        Ok(())
    }

    fn jacobian(&self, _t: f64, _y: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(&self.mass * &self.k)
    }
}

fn harmonic(center: f64) -> Linear {
    let mut sys = Linear::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    sys.b = DVector::from_vec(vec![0.0, center]);
    sys
}

#[test]
fn exponential_decay() {
    let sys = Linear::new(DMatrix::from_element(1, 1, -1.0));
    let y0 = DVector::from_element(1, 1.0);
    let traj = integrate(&sys, &y0, (0.0, 1.0), &IntegratorConfig::default(), None).unwrap();
    let y1 = traj.states.last().unwrap()[0];
    assert!((y1 - (-1.0f64).exp()).abs() < 1e-7, "{y1}");
    assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(*traj.times.last().unwrap(), 1.0);
}

#[test]
fn config_validation() {
    assert!(IntegratorConfig::with_tolerances(1e-8, 1e-6)
        .validate()
        .is_err());
    assert!(IntegratorConfig::with_tolerances(1.0, 1e-6)
        .validate()
        .is_err());
    assert!(IntegratorConfig::with_tolerances(1e-6, 0.0)
        .validate()
        .is_err());
    let cfg = IntegratorConfig {
        max_order: 6,
        ..IntegratorConfig::default()
    };
    assert!(cfg.validate().is_err());
    let sys = Linear::new(DMatrix::from_element(1, 1, -1.0));
    let y0 = DVector::from_element(1, f64::NAN);
    assert!(integrate(&sys, &y0, (0.0, 1.0), &IntegratorConfig::default(), None).is_err());
    let y0 = DVector::from_element(1, 1.0);
    assert!(integrate(&sys, &y0, (1.0, 1.0), &IntegratorConfig::default(), None).is_err());
}

#[test]
fn max_steps_is_reported() {
    let sys = Linear::new(DMatrix::from_element(1, 1, -1.0));
    let cfg = IntegratorConfig {
        max_steps: 3,
        ..IntegratorConfig::default()
    };
    let err = integrate(
        &sys,
        &DVector::from_element(1, 1.0),
        (0.0, 10.0),
        &cfg,
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::MaxStepsExceeded(3)));
}

// The semidiscrete heat equation started from the first discrete
// eigenvector decays exactly like exp(-lambda_1 t), with lambda_1 the
// smallest generalized eigenvalue of (A, M).
#[test]
fn heat_equation_decays_with_discrete_eigenvalue() {
    let model = Arc::new(ScalarModel::new(1.0, ScalarReaction::Zero, 0.0).unwrap());
    let sys = SemidiscreteSystem::new(model, Mesh::uniform(16, (0.0, 1.0)).unwrap());
    let space = sys.space();
    let m = space.mass().matrix().clone();
    let a = space.stiffness().matrix().clone();
    let l = m.clone().cholesky().unwrap();
    let linv = l.l().try_inverse().unwrap();
    let sym = &linv * &a * linv.transpose();
    let eig = sym.symmetric_eigen();
    let (i_min, lambda1) =
        eig.eigenvalues
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc },
            );
    assert!((lambda1 - std::f64::consts::PI.powi(2)).abs() < 1e-3);
    let w = linv.transpose() * eig.eigenvectors.column(i_min);
    let y0 = &w / w.amax();
    let p = ParamPoint::one(1.0);
    let ode = sys.at(p);
    let traj = integrate(
        &ode,
        &y0,
        (0.0, 0.1),
        &IntegratorConfig::default(),
        Some(&[0.1]),
    )
    .unwrap();
    let expected = &y0 * (-lambda1 * 0.1).exp();
    let rel = (&traj.states[0] - &expected).norm() / expected.norm();
    assert!(rel < 1e-6, "relative error {rel:e}");
}

#[test]
fn dense_output_matches_step_states() {
    let sys = harmonic(0.0);
    let y0 = DVector::from_vec(vec![1.0, 0.0]);
    let traj = integrate(&sys, &y0, (0.0, 5.0), &IntegratorConfig::default(), None).unwrap();
    let mut prev = y0.clone();
    for seg in &traj.segments {
        let at_end = seg.eval(seg.t_new);
        assert_eq!(&at_end, seg.end_state());
        let at_start = seg.eval(seg.t_old);
        let rel = (&at_start - &prev).norm() / prev.norm();
        assert!(rel < 1e-13, "{rel:e}");
        prev = seg.end_state().clone();
    }
    for &t in &[0.3, 1.7, 2.2, 4.9] {
        let y = traj.eval(t);
        assert!((y[0] - t.cos()).abs() < 1e-6);
        assert!((y[1] + t.sin()).abs() < 1e-6);
    }
}

#[test]
fn output_times_do_not_change_steps() {
    let sys = harmonic(0.0);
    let y0 = DVector::from_vec(vec![1.0, 0.0]);
    let cfg = IntegratorConfig::default();
    let plain = integrate(&sys, &y0, (0.0, 3.0), &cfg, None).unwrap();
    let outs = [0.0, 0.5, 1.25, 3.0];
    let sampled = integrate(&sys, &y0, (0.0, 3.0), &cfg, Some(&outs)).unwrap();
    assert_eq!(plain.stats, sampled.stats);
    assert_eq!(sampled.times, outs.to_vec());
    assert_eq!(sampled.states[0], y0);
    for (t, y) in sampled.times.iter().zip(&sampled.states) {
        assert!((y - plain.eval(*t)).amax() < 1e-15);
    }
}

#[test]
fn implicit_euler_is_first_order() {
    let sys = Linear::new(DMatrix::from_element(1, 1, -2.0));
    let y0 = DVector::from_element(1, 1.0);
    let exact = (-2.0f64).exp();
    let errs: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&h| {
            let cfg = IntegratorConfig {
                max_order: 1,
                fixed_step: Some(h),
                ..IntegratorConfig::default()
            };
            let traj = integrate(&sys, &y0, (0.0, 1.0), &cfg, None).unwrap();
            (traj.states.last().unwrap()[0] - exact).abs()
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 1.0).abs() < 0.1, "order {order}");
    }
}

#[test]
fn ndf_formula_integrates_accurately() {
    let sys = Linear::new(DMatrix::from_element(1, 1, -1.0));
    let cfg = IntegratorConfig {
        formula: Formula::Ndf,
        ..IntegratorConfig::default()
    };
    let traj = integrate(&sys, &DVector::from_element(1, 1.0), (0.0, 1.0), &cfg, None).unwrap();
    assert!((traj.states.last().unwrap()[0] - (-1.0f64).exp()).abs() < 1e-7);
}

#[test]
fn harmonic_period() {
    let sys = harmonic(2.0);
    let y0 = DVector::from_vec(vec![2.5, 0.0]);
    let cfg = OrbitConfig {
        integrator: IntegratorConfig::with_tolerances(1e-12, 1e-14),
        period_rtol: 1e-10,
        max_time: 100.0,
        ..OrbitConfig::default()
    };
    let orbit = find_periodic_orbit(&sys, ParamPoint::one(0.0), &y0, &cfg).unwrap();
    assert!(orbit.converged);
    assert!(
        (orbit.period - 2.0 * std::f64::consts::PI).abs() < 1e-9,
        "{}",
        orbit.period
    );
    let samples = sample_orbit(&orbit, &sys, 8, &cfg.integrator).unwrap();
    assert_eq!(samples.states.len(), 9);
    assert_eq!(samples.states[0], orbit.initial_state);
    assert!(samples.closure_defect() < 1e-9);
    // the anchor is a maximum of |y|^2, so the derivative is orthogonal to y
    assert!(samples.states[0].dot(&samples.derivatives[0]).abs() < 1e-9);
}

#[test]
fn no_oscillation_is_an_error() {
    let sys = Linear::new(DMatrix::from_element(1, 1, -1.0));
    let cfg = OrbitConfig {
        max_time: 20.0,
        ..OrbitConfig::default()
    };
    let err = find_periodic_orbit(
        &sys,
        ParamPoint::one(0.0),
        &DVector::from_element(1, 1.0),
        &cfg,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NoOscillation(_)));
}

#[test]
fn sampling_requires_convergence() {
    let sys = harmonic(2.0);
    let orbit = PeriodicOrbit {
        param: ParamPoint::one(0.0),
        period: 1.0,
        initial_state: DVector::from_vec(vec![2.5, 0.0]),
        anchor_time: 0.0,
        n_transient_periods: 0,
        converged: false,
        last_relative_period_change: 1.0,
        period_history: vec![],
    };
    assert!(matches!(
        sample_orbit(&orbit, &sys, 4, &IntegratorConfig::default()),
        Err(Error::NotConverged)
    ));
}

fn brusselator(n_elems: usize, beta: f64) -> (SemidiscreteSystem, ParamPoint) {
    let (model, p) = Brusselator::shifted(1.0, beta, 0.01).unwrap();
    (
        SemidiscreteSystem::new(Arc::new(model), Mesh::uniform(n_elems, (0.0, 1.0)).unwrap()),
        p,
    )
}

#[test]
fn brusselator_tolerance_self_convergence() {
    let (sys, p) = brusselator(20, 3.25);
    let ode = sys.at(p);
    let y0 = sys.initial_state(&p).unwrap().into_coeffs();
    let cfg = IntegratorConfig::default();
    let fine = IntegratorConfig::with_tolerances(cfg.rtol / 2.0, cfg.atol / 2.0);
    let a = integrate(&ode, &y0, (0.0, 10.0), &cfg, Some(&[10.0])).unwrap();
    let b = integrate(&ode, &y0, (0.0, 10.0), &fine, Some(&[10.0])).unwrap();
    // Global error grows along the unstable transient, so the bound is looser
    // than the per-step tolerance.
    let rel = (&a.states[0] - &b.states[0]).norm() / b.states[0].norm();
    assert!(rel < 50.0 * cfg.rtol, "relative difference {rel:e}");
}

#[test]
fn banded_and_dense_solves_agree_on_brusselator() {
    struct Dense<'a>(crate::model::FomOde<'a>);
    impl OdeSystem for Dense<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn mass(&self) -> &DMatrix<f64> {
            self.0.mass()
        }
        fn rhs(&self, t: f64, y: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
            self.0.rhs(t, y, out)
        }
        fn jacobian(&self, t: f64, y: &DVector<f64>) -> Result<DMatrix<f64>> {
            self.0.jacobian(t, y)
        }
    }
    let (sys, p) = brusselator(8, 2.75);
    let ode = sys.at(p);
    let y0 = sys.initial_state(&p).unwrap().into_coeffs();
    let x = DVector::from_fn(y0.len(), |i, _| (i as f64 * 0.37).sin());
    assert!((ode.mass_mul(&x) - sys.mass() * &x).amax() < 1e-15);
    let cfg = IntegratorConfig::default();
    let a = integrate(&ode, &y0, (0.0, 2.0), &cfg, Some(&[2.0])).unwrap();
    let b = integrate(&Dense(ode), &y0, (0.0, 2.0), &cfg, Some(&[2.0])).unwrap();
    assert!((&a.states[0] - &b.states[0]).amax() < 1e-10);
}
