//! Stiff time integration of `M y' = R(t, y)` and periodic-orbit detection.
//!
//! The stepper is a variable-step, variable-order (1 to 5) backward
//! differentiation scheme in the backward-difference (quasi-constant step)
//! formulation, with optional numerical-differentiation-formula corrections.
//! Every accepted step yields a [`DenseSegment`] that interpolates the
//! solution over the step.

mod bdf;
mod orbit;

use nalgebra::{DMatrix, DVector};

pub use bdf::{Bdf, StepStats};
pub use orbit::{find_periodic_orbit, sample_orbit, OrbitConfig, OrbitSamples, PeriodicOrbit};

use crate::error::{Error, Result};
use crate::linalg::BandStructure;

/// A system `M y' = R(t, y)` with constant nonsingular mass matrix.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn mass(&self) -> &DMatrix<f64>;

    fn rhs(&self, t: f64, y: &DVector<f64>, out: &mut DVector<f64>) -> Result<()>;

    /// `dR/dy`.
    fn jacobian(&self, t: f64, y: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// `M x`.
    fn mass_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.mass() * x
    }

    /// Permutation under which `M - c J` is banded, if any.
    fn band_structure(&self) -> Option<&BandStructure> {
        None
    }
}

/// Which multistep family the stepper uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formula {
    /// Backward differentiation formulas.
    Bdf,
    /// Klopfenstein-Shampine numerical differentiation formulas.
    Ndf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_order: usize,
    pub max_steps: usize,
    /// Newton convergence tolerance; derived from `rtol` when `None`.
    pub newton_tol: Option<f64>,
    pub newton_max_iters: usize,
    pub formula: Formula,
    pub first_step: Option<f64>,
    pub max_step: f64,
    /// Constant step size with error control disabled (for order studies).
    pub fixed_step: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-11,
            max_order: 5,
            max_steps: 50_000_000,
            newton_tol: None,
            newton_max_iters: 4,
            formula: Formula::Bdf,
            first_step: None,
            max_step: f64::INFINITY,
            fixed_step: None,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0 && self.atol <= self.rtol && self.rtol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must satisfy 0 < atol <= rtol < 1 (rtol={}, atol={})",
                self.rtol, self.atol
            )));
        }
        if !(1..=5).contains(&self.max_order) {
            return Err(Error::InvalidArgument(format!(
                "max_order must be in 1..=5, got {}",
                self.max_order
            )));
        }
        if self.newton_max_iters == 0 {
            return Err(Error::InvalidArgument(
                "newton_max_iters must be positive".into(),
            ));
        }
        if let Some(h) = self.fixed_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidArgument(format!("bad fixed step {h}")));
            }
        }
        Ok(())
    }

    pub(crate) fn effective_newton_tol(&self) -> f64 {
        self.newton_tol
            .unwrap_or_else(|| (10.0 * f64::EPSILON / self.rtol).max(0.03f64.min(self.rtol.sqrt())))
    }
}

/// Interpolating polynomial of one accepted step, in backward-difference form
/// on the grid `t_new, t_new - h, ..., t_new - order*h`.
#[derive(Clone, Debug)]
pub struct DenseSegment {
    pub t_old: f64,
    pub t_new: f64,
    h: f64,
    diffs: Vec<DVector<f64>>,
}

impl DenseSegment {
    pub(crate) fn new(t_old: f64, t_new: f64, h: f64, diffs: Vec<DVector<f64>>) -> Self {
        Self {
            t_old,
            t_new,
            h,
            diffs,
        }
    }

    pub fn order(&self) -> usize {
        self.diffs.len() - 1
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut y = self.diffs[0].clone();
        let mut p = 1.0;
        for k in 0..self.order() {
            let shift = self.t_new - self.h * k as f64;
            p *= (t - shift) / (self.h * (k + 1) as f64);
            y.axpy(p, &self.diffs[k + 1], 1.0);
        }
        y
    }

    /// State at the end of the step (exact, no interpolation).
    pub fn end_state(&self) -> &DVector<f64> {
        &self.diffs[0]
    }
}

/// Integrated solution: states at requested output times plus dense output
/// over the whole interval.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub segments: Vec<DenseSegment>,
    pub stats: StepStats,
    t0: f64,
    y0: DVector<f64>,
}

impl Trajectory {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.segments.last().map_or(self.t0, |s| s.t_new)
    }

    /// Dense-output evaluation at any `t` in the integration interval.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if t <= self.t0 || self.segments.is_empty() {
            return self.y0.clone();
        }
        let idx = self.segments.partition_point(|s| s.t_new < t);
        let seg = &self.segments[idx.min(self.segments.len() - 1)];
        if t == seg.t_new {
            seg.end_state().clone()
        } else {
            seg.eval(t)
        }
    }
}

/// Integrates `sys` over `t_span` from `y0`.
///
/// Without `output_times` every accepted step is recorded; otherwise the
/// states at the requested times are produced from dense output and step
/// selection is unaffected.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &DVector<f64>,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    output_times: Option<&[f64]>,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!(
            "empty time span [{t0}, {t1}]"
        )));
    }
    if let Some(ts) = output_times {
        if ts.windows(2).any(|w| w[1] < w[0]) || ts.iter().any(|&t| t < t0 || t > t1) {
            return Err(Error::InvalidArgument(
                "output times must be sorted and inside the time span".into(),
            ));
        }
    }
    let mut stepper = Bdf::new(sys, t0, y0.clone(), t1, cfg.clone())?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut segments = Vec::new();
    let mut next_out = 0;
    match output_times {
        None => {
            times.push(t0);
            states.push(y0.clone());
        }
        Some(ts) => {
            while next_out < ts.len() && ts[next_out] == t0 {
                times.push(t0);
                states.push(y0.clone());
                next_out += 1;
            }
        }
    }
    while stepper.t() < t1 {
        let seg = stepper.step()?;
        match output_times {
            None => {
                times.push(seg.t_new);
                states.push(seg.end_state().clone());
            }
            Some(ts) => {
                while next_out < ts.len() && ts[next_out] <= seg.t_new {
                    let t = ts[next_out];
                    times.push(t);
                    states.push(if t == seg.t_new {
                        seg.end_state().clone()
                    } else {
                        seg.eval(t)
                    });
                    next_out += 1;
                }
            }
        }
        segments.push(seg);
    }
    Ok(Trajectory {
        times,
        states,
        segments,
        stats: stepper.stats().clone(),
        t0,
        y0: y0.clone(),
    })
}

/// Weighted RMS norm used for error and Newton control.
pub(crate) fn rms_norm(x: &DVector<f64>, scale: &DVector<f64>) -> f64 {
    let n = x.len().max(1) as f64;
    (x.iter()
        .zip(scale.iter())
        .map(|(v, s)| (v / s) * (v / s))
        .sum::<f64>()
        / n)
        .sqrt()
}

#[cfg(test)]
mod tests;
