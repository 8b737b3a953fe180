use nalgebra::DVector;

use super::fom::Norms;
use crate::error::{Error, Result};
use crate::integrate::{integrate, IntegratorConfig, PeriodicOrbit, Trajectory};
use crate::model::{ParamPoint, SemidiscreteSystem};
use crate::rom::{integrate_rom, RomOperators};
use crate::snapshots::SnapshotBlock;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsConfig {
    /// Equispaced evaluation points per period, endpoints included.
    pub fine_points: usize,
    pub q: u32,
    pub m: u32,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            fine_points: 2049,
            q: 2,
            m: 2,
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self, m_snap: usize) -> Result<()> {
        if self.fine_points < m_snap + 1 || self.fine_points < 2 {
            return Err(Error::InvalidArgument(format!(
                "fine partition of {} points is coarser than the {} snapshot times",
                self.fine_points,
                m_snap + 1
            )));
        }
        if self.q < 2 || self.m < 2 {
            return Err(Error::InvalidArgument("q and m must be at least 2".into()));
        }
        Ok(())
    }
}

/// How the reduced trajectory compared against the FOM orbit is started.
#[derive(Clone, Copy, Debug)]
pub enum RomStart<'a> {
    /// `u_r(0) = P^r u_h(0)`, integrated over `[0, T_FOM]`.
    Projected,
    /// A converged ROM orbit anchored like the FOM orbit; its time axis is
    /// stretched by `T_ROM / T_FOM`.
    Orbit(&'a PeriodicOrbit),
}

/// `||eps_r(t)||` and `||e_r(t)||` at a list of times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub eps_l2: Vec<f64>,
    pub eps_h1: Vec<f64>,
    pub e_l2: Vec<f64>,
    pub e_h1: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorMaxima {
    pub eps_l2: f64,
    pub eps_h1: f64,
    pub e_l2: f64,
    pub e_h1: f64,
}

impl ErrorMaxima {
    pub fn of(series: &ErrorSeries) -> Self {
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        Self {
            eps_l2: max(&series.eps_l2),
            eps_h1: max(&series.eps_h1),
            e_l2: max(&series.e_l2),
            e_h1: max(&series.e_h1),
        }
    }

    pub fn max(self, o: Self) -> Self {
        Self {
            eps_l2: self.eps_l2.max(o.eps_l2),
            eps_h1: self.eps_h1.max(o.eps_h1),
            e_l2: self.e_l2.max(o.e_l2),
            e_h1: self.e_h1.max(o.e_h1),
        }
    }
}

/// `eps_r = (I - P^r) u_h` and `e_r = u_h - u_r` for one parameter.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub param: ParamPoint,
    pub r: usize,
    pub period_fom: f64,
    pub period_rom: Option<f64>,
    pub fine: ErrorSeries,
    pub snapshots: ErrorSeries,
    /// Over the fine partition and the snapshot times together.
    pub max_all: ErrorMaxima,
    pub max_snapshots: ErrorMaxima,
}

impl ErrorReport {
    pub fn period_relative_error(&self) -> Option<f64> {
        self.period_rom
            .map(|t| (t - self.period_fom).abs() / self.period_fom)
    }
}

fn dense(traj: &Trajectory, t: f64) -> DVector<f64> {
    traj.eval(t.clamp(traj.t_start(), traj.t_end()))
}

/// Error report of the reduced model `ops` against the FOM period sampled in
/// `fom` (its first state is the orbit anchor).
pub fn error_report(
    ops: &RomOperators<'_>,
    fom: &SnapshotBlock,
    start: RomStart<'_>,
    integ: &IntegratorConfig,
    cfg: &DiagnosticsConfig,
) -> Result<ErrorReport> {
    let m = fom.m();
    cfg.validate(m)?;
    let sys: &SemidiscreteSystem = ops.system();
    let p = fom.param;
    let period = fom.period;
    let u0 = fom.states[0].coeffs();
    let fom_traj = integrate(&sys.at(p), u0, (0.0, period), integ, None)?;

    let (rom_traj, stretch, period_rom) = match start {
        RomStart::Projected => {
            let a0 = ops.project(u0)?;
            (
                integrate_rom(ops, p, &a0, (0.0, period), integ, None)?,
                1.0,
                None,
            )
        }
        RomStart::Orbit(orbit) => {
            if !orbit.converged {
                return Err(Error::NotConverged);
            }
            if orbit.param != p {
                return Err(Error::InvalidArgument(format!(
                    "ROM orbit at {} compared with FOM at {p}",
                    orbit.param
                )));
            }
            let tr = orbit.period;
            let traj = integrate_rom(ops, p, &orbit.initial_state, (0.0, tr), integ, None)?;
            (traj, tr / period, Some(tr))
        }
    };

    let norms = Norms::new(sys);
    let point = |t: f64, u: &DVector<f64>| -> Result<[f64; 4]> {
        let a = dense(&rom_traj, t * stretch);
        let pu = ops.modes() * ops.project(u)?;
        let eps = u - pu;
        let e = u - ops.modes() * a;
        Ok([norms.l2(&eps), norms.h1(&eps), norms.l2(&e), norms.h1(&e)])
    };
    let fill =
        |times: Vec<f64>, states: &dyn Fn(usize, f64) -> DVector<f64>| -> Result<ErrorSeries> {
            let mut s = ErrorSeries {
                times: Vec::with_capacity(times.len()),
                ..Default::default()
            };
            for (i, &t) in times.iter().enumerate() {
                let [a, b, c, d] = point(t, &states(i, t))?;
                s.eps_l2.push(a);
                s.eps_h1.push(b);
                s.e_l2.push(c);
                s.e_h1.push(d);
            }
            s.times = times;
            Ok(s)
        };

    let n = cfg.fine_points;
    let fine_times: Vec<f64> = (0..n)
        .map(|i| {
            if i == n - 1 {
                period
            } else {
                period * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let fine = fill(fine_times, &|_, t| dense(&fom_traj, t))?;
    let snapshots = fill(fom.times(), &|j, _| fom.states[j].coeffs().clone())?;
    let max_snapshots = ErrorMaxima::of(&snapshots);
    let max_all = ErrorMaxima::of(&fine).max(max_snapshots);
    Ok(ErrorReport {
        param: p,
        r: ops.r(),
        period_fom: period,
        period_rom,
        fine,
        snapshots,
        max_all,
        max_snapshots,
    })
}
