use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::{
    find_periodic_orbit, sample_orbit, IntegratorConfig, OrbitConfig, PeriodicOrbit,
};
use crate::mesh::Field;
use crate::model::{ParamPoint, SemidiscreteSystem};
use crate::snapshots::SnapshotBlock;

/// Block-diagonal mass and stiffness for the L2 norm and H1 seminorm of
/// multi-component fields.
#[derive(Clone, Debug)]
pub struct Norms {
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
}

impl Norms {
    pub fn new(sys: &SemidiscreteSystem) -> Self {
        let c = sys.components();
        Self {
            mass: sys.space().mass().block_diag(c),
            stiffness: sys.space().stiffness().block_diag(c),
        }
    }

    pub fn l2_sq(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.mass * v)).max(0.0)
    }

    pub fn h1_sq(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.stiffness * v)).max(0.0)
    }

    pub fn l2(&self, v: &DVector<f64>) -> f64 {
        self.l2_sq(v).sqrt()
    }

    pub fn h1(&self, v: &DVector<f64>) -> f64 {
        self.h1_sq(v).sqrt()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }
}

/// A converged FOM orbit and its snapshots at `t_j = j T / M`.
#[derive(Clone, Debug)]
pub struct FomRun {
    pub orbit: PeriodicOrbit,
    pub block: SnapshotBlock,
}

/// Samples `m + 1` states (and time derivatives) over one period of `orbit`.
pub fn orbit_block(
    sys: &SemidiscreteSystem,
    orbit: &PeriodicOrbit,
    m: usize,
    cfg: &IntegratorConfig,
) -> Result<SnapshotBlock> {
    let ode = sys.at(orbit.param);
    let samples = sample_orbit(orbit, &ode, m, cfg)?;
    let comps = sys.components();
    let states = samples
        .states
        .into_iter()
        .map(|s| Field::new(comps, s))
        .collect::<Result<Vec<_>>>()?;
    let derivs = samples
        .derivatives
        .into_iter()
        .map(|s| Field::new(comps, s))
        .collect::<Result<Vec<_>>>()?;
    SnapshotBlock::new(orbit.param, orbit.period, states, Some(derivs))
}

/// Periodic orbit from the model's initial perturbation of the equilibrium.
pub fn fom_orbit(
    sys: &SemidiscreteSystem,
    p: ParamPoint,
    cfg: &OrbitConfig,
) -> Result<PeriodicOrbit> {
    let y0 = sys.initial_state(&p)?.into_coeffs();
    let orbit = find_periodic_orbit(&sys.at(p), p, &y0, cfg)?;
    log::info!(
        "FOM orbit {p}: T={:.10} after {} periods (converged: {})",
        orbit.period,
        orbit.n_transient_periods,
        orbit.converged
    );
    Ok(orbit)
}

/// Orbit and snapshot block; an unconverged orbit is an error.
pub fn fom_run(
    sys: &SemidiscreteSystem,
    p: ParamPoint,
    m: usize,
    cfg: &OrbitConfig,
) -> Result<FomRun> {
    let orbit = fom_orbit(sys, p, cfg)?;
    if !orbit.converged {
        return Err(Error::NotConverged);
    }
    let block = orbit_block(sys, &orbit, m, &cfg.integrator)?;
    Ok(FomRun { orbit, block })
}

/// [`fom_run`] for every parameter, in parallel, preserving order.
pub fn fom_runs(
    sys: &SemidiscreteSystem,
    params: &[ParamPoint],
    m: usize,
    cfg: &OrbitConfig,
) -> Result<Vec<FomRun>> {
    params
        .par_iter()
        .map(|&p| fom_run(sys, p, m, cfg))
        .collect()
}

/// `n` equispaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
