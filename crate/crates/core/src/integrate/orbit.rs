use nalgebra::{DMatrix, DVector};

use super::{integrate, Bdf, DenseSegment, IntegratorConfig, OdeSystem};
use crate::error::{Error, Result};
use crate::linalg::LinearSolver;
use crate::model::ParamPoint;

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitConfig {
    pub integrator: IntegratorConfig,
    /// Stop when two consecutive period estimates agree to this relative level.
    pub period_rtol: f64,
    /// Integration horizon; no maximum before it means no oscillation.
    pub max_time: f64,
    pub max_transient_periods: usize,
    /// Maxima closer than this fraction of the period estimate are merged.
    pub min_separation: f64,
    /// Maxima whose value is below this fraction of the previous major one
    /// are ignored.
    pub major_fraction: f64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            period_rtol: 1e-7,
            max_time: 5_000.0,
            max_transient_periods: 400,
            min_separation: 0.2,
            major_fraction: 0.5,
        }
    }
}

impl OrbitConfig {
    pub fn with_period_rtol(period_rtol: f64) -> Self {
        Self {
            period_rtol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if !(self.period_rtol > 0.0 && self.period_rtol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "period_rtol must be in (0, 1), got {}",
                self.period_rtol
            )));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::InvalidArgument("max_time must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.min_separation) || !(0.0..=1.0).contains(&self.major_fraction)
        {
            return Err(Error::InvalidArgument(
                "bad maximum filtering fractions".into(),
            ));
        }
        Ok(())
    }
}

/// A periodic orbit anchored at a local maximum of `y^T M y`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicOrbit {
    pub param: ParamPoint,
    pub period: f64,
    pub initial_state: DVector<f64>,
    /// Time at which `initial_state` was reached from the starting state.
    pub anchor_time: f64,
    pub n_transient_periods: usize,
    pub converged: bool,
    pub last_relative_period_change: f64,
    pub period_history: Vec<f64>,
}

/// Uniform samples of one period of an orbit.
#[derive(Clone, Debug)]
pub struct OrbitSamples {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `M^{-1} R` at the sample states.
    pub derivatives: Vec<DVector<f64>>,
}

impl OrbitSamples {
    /// `||y(T) - y(0)|| / ||y(0)||` in the Euclidean norm.
    pub fn closure_defect(&self) -> f64 {
        let first = &self.states[0];
        let last = self.states.last().expect("at least two samples");
        (last - first).norm() / first.norm().max(f64::MIN_POSITIVE)
    }
}

fn event<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &DVector<f64>,
    buf: &mut DVector<f64>,
) -> Result<f64> {
    sys.rhs(t, y, buf)?;
    Ok(y.dot(buf))
}

/// Root of the event function inside one step, by safeguarded secant
/// (Illinois) iteration on the dense output.
fn refine_root<S: OdeSystem + ?Sized>(
    sys: &S,
    seg: &DenseSegment,
    (mut a, mut fa): (f64, f64),
    (mut b, mut fb): (f64, f64),
    tol: f64,
    buf: &mut DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let mut t = (a * fb - b * fa) / (fb - fa);
        if !(t > a && t < b) {
            t = 0.5 * (a + b);
        }
        let y = seg.eval(t);
        let ft = event(sys, t, &y, buf)?;
        if ft == 0.0 {
            return Ok((t, y));
        }
        if (ft > 0.0) == (fa > 0.0) {
            a = t;
            fa = ft;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = t;
            fb = ft;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    let t = if fa.abs() < fb.abs() { a } else { b };
    Ok((t, seg.eval(t)))
}

struct Maximum {
    t: f64,
    value: f64,
    state: DVector<f64>,
}

/// Integrates from `y0` until the times between consecutive major maxima of
/// `y^T M y` settle, and returns the state at the last major maximum.
///
/// Maxima are the `+ -> -` zero crossings of `y^T R(y)`.
pub fn find_periodic_orbit<S: OdeSystem + ?Sized>(
    sys: &S,
    param: ParamPoint,
    y0: &DVector<f64>,
    cfg: &OrbitConfig,
) -> Result<PeriodicOrbit> {
    cfg.validate()?;
    let t_end = cfg.max_time;
    let mut stepper = Bdf::new(sys, 0.0, y0.clone(), t_end, cfg.integrator.clone())?;
    let mut buf = DVector::zeros(sys.dim());
    let mut phi_old = event(sys, 0.0, y0, &mut buf)?;

    let mut finals: Vec<Maximum> = Vec::new();
    let mut pending: Option<Maximum> = None;
    let mut periods: Vec<f64> = Vec::new();

    let finish = |finals: &[Maximum], periods: &[f64], converged: bool| {
        let last = finals.last().expect("at least one maximum");
        let change = if periods.len() >= 2 {
            let (a, b) = (periods[periods.len() - 2], periods[periods.len() - 1]);
            (b - a).abs() / b
        } else {
            f64::INFINITY
        };
        PeriodicOrbit {
            param,
            period: *periods.last().unwrap_or(&f64::NAN),
            initial_state: last.state.clone(),
            anchor_time: last.t,
            n_transient_periods: periods.len(),
            converged,
            last_relative_period_change: change,
            period_history: periods.to_vec(),
        }
    };

    let mut warned = false;
    while stepper.t() < t_end {
        let seg = stepper.step()?;
        let phi_new = event(sys, seg.t_new, seg.end_state(), &mut buf)?;
        let period_est = periods.last().copied();

        if phi_old > 0.0 && phi_new <= 0.0 {
            let tol = 1e-12 * period_est.unwrap_or(1.0).max(seg.t_new - seg.t_old);
            let (t, state) = refine_root(
                sys,
                &seg,
                (seg.t_old, phi_old),
                (seg.t_new, phi_new),
                tol,
                &mut buf,
            )?;
            let value = state.dot(&sys.mass_mul(&state));
            let cand = Maximum { t, value, state };
            let reference = pending.as_ref().or(finals.last()).map(|m| m.value);
            let big_enough = reference.is_none_or(|r| value >= cfg.major_fraction * r);
            if big_enough {
                match (&mut pending, period_est) {
                    (Some(p), Some(est)) if t - p.t < cfg.min_separation * est => {
                        if cand.value > p.value {
                            *p = cand;
                        }
                    }
                    _ => {
                        if let Some(p) = pending.take() {
                            finals.push(p);
                        }
                        pending = Some(cand);
                    }
                }
            }
        }
        phi_old = phi_new;

        // A pending maximum is final once no merge partner can follow it.
        let ready = match (&pending, periods.last()) {
            (Some(p), Some(est)) => seg.t_new >= p.t + cfg.min_separation * est,
            (Some(_), None) => true,
            _ => false,
        };
        if ready {
            let p = pending.take().expect("checked");
            if let Some(prev) = finals.last() {
                periods.push(p.t - prev.t);
            }
            finals.push(p);
            let n = periods.len();
            if n >= 2 {
                let change = (periods[n - 1] - periods[n - 2]).abs() / periods[n - 1];
                log::debug!(
                    "orbit {param}: t={:.4} T={:.10} rel change {:.3e}",
                    seg.t_new,
                    periods[n - 1],
                    change
                );
                if change < cfg.period_rtol {
                    return Ok(finish(&finals, &periods, true));
                }
                if n >= 4 {
                    let before = (periods[n - 2] - periods[n - 3]).abs();
                    if (periods[n - 1] - periods[n - 2]).abs() > before && change < 1e-3 && !warned
                    {
                        warned = true;
                        log::warn!(
                            "orbit {param}: period changes are not decreasing monotonically"
                        );
                    }
                }
            }
            if n > cfg.max_transient_periods {
                return Ok(finish(&finals, &periods, false));
            }
        }
    }
    if let Some(p) = pending.take() {
        if let Some(prev) = finals.last() {
            periods.push(p.t - prev.t);
        }
        finals.push(p);
    }
    if finals.len() < 2 {
        return Err(Error::NoOscillation(t_end));
    }
    Ok(finish(&finals, &periods, false))
}

/// Integrates one period from the orbit anchor and samples `m + 1` states at
/// `t_j = j T / m`.
pub fn sample_orbit<S: OdeSystem + ?Sized>(
    orbit: &PeriodicOrbit,
    sys: &S,
    m: usize,
    cfg: &IntegratorConfig,
) -> Result<OrbitSamples> {
    if !orbit.converged {
        return Err(Error::NotConverged);
    }
    if m == 0 {
        return Err(Error::InvalidArgument(
            "need at least one sampling interval".into(),
        ));
    }
    let period = orbit.period;
    let mut times: Vec<f64> = (0..=m).map(|j| j as f64 * period / m as f64).collect();
    times[m] = period;
    let traj = integrate(sys, &orbit.initial_state, (0.0, period), cfg, Some(&times))?;
    let zero = DMatrix::zeros(sys.dim(), sys.dim());
    let mass_lu = LinearSolver::factor(sys.mass(), &zero, 0.0, sys.band_structure())?;
    let mut buf = DVector::zeros(sys.dim());
    let mut derivatives = Vec::with_capacity(times.len());
    for (t, y) in traj.times.iter().zip(&traj.states) {
        sys.rhs(*t, y, &mut buf)?;
        derivatives.push(mass_lu.solve(&buf));
    }
    Ok(OrbitSamples {
        times: traj.times,
        states: traj.states,
        derivatives,
    })
}
