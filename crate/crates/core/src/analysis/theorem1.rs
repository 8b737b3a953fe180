use std::sync::Arc;

use nalgebra::DVector;

use super::csv::CsvTable;
use super::fom::Norms;
use crate::error::{Error, Result};
use crate::integrate::{integrate, IntegratorConfig};
use crate::mesh::{Field, Mesh};
use crate::model::{ParamPoint, ScalarModel, ScalarReaction, SemidiscreteSystem};
use crate::pod::PodBasis;
use crate::rom::{integrate_rom, RomOperators};
use crate::snapshots::{build_set_standard, SnapshotBlock};

#[derive(Clone, Debug)]
pub struct Theorem1Config {
    pub nu: f64,
    pub reaction: ScalarReaction,
    pub forcing_amplitude: f64,
    pub alpha: f64,
    pub n_elems: usize,
    pub t_end: f64,
    /// Snapshot intervals used to build the basis.
    pub m: usize,
    /// With `g = 0` the FEM trajectory spans only two directions, so `r >= 2`
    /// leaves nothing but integrator noise to bound.
    pub r: usize,
    /// `u_r(0) = init_scale * P^r u_h(0)`.
    pub init_scale: f64,
    pub checkpoints: usize,
    /// Simpson panels over `[0, t_end]`; a multiple of `2 * checkpoints`.
    pub panels: usize,
    pub integrator: IntegratorConfig,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Self {
            nu: 0.1,
            reaction: ScalarReaction::Sine(0.5),
            forcing_amplitude: 1.0,
            alpha: 1.0,
            n_elems: 32,
            t_end: 1.0,
            m: 32,
            r: 1,
            init_scale: 1.0,
            checkpoints: 32,
            panels: 2048,
            integrator: IntegratorConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theorem1Row {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl Theorem1Row {
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else if self.lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Debug)]
pub struct Theorem1Report {
    pub lipschitz: f64,
    pub k: f64,
    pub initial_error: f64,
    pub rows: Vec<Theorem1Row>,
}

impl Theorem1Report {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.lhs <= r.rhs)
    }

    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(Theorem1Row::ratio).fold(0.0, f64::max)
    }

    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["t", "lhs", "rhs", "ratio"]);
        for r in &self.rows {
            t.push(vec![
                r.t.into(),
                r.lhs.into(),
                r.rhs.into(),
                r.ratio().into(),
            ])
            .expect("row width");
        }
        t
    }
}

/// Cumulative composite Simpson integrals of samples `f` on a uniform grid
/// with spacing `h`, returned at every even index.
pub(super) fn simpson_cumulative(f: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut acc = 0.0;
    for i in (0..f.len() - 2).step_by(2) {
        acc += h / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
        out.push(acc);
    }
    out
}

/// Both sides of the a priori bound between `u_r` and `P^r u_h` at
/// `checkpoints` equispaced times in `(0, T]`.
pub fn verify_theorem1(
    ops: &RomOperators<'_>,
    p: ParamPoint,
    cfg: &Theorem1Config,
) -> Result<Theorem1Report> {
    let sys = ops.system();
    let lip = sys
        .model()
        .lipschitz_bound(&p)
        .ok_or(Error::MissingLipschitz)?;
    if cfg.checkpoints == 0 || !cfg.panels.is_multiple_of(2 * cfg.checkpoints) {
        return Err(Error::InvalidArgument(format!(
            "{} panels do not split into {} even groups",
            cfg.panels, cfg.checkpoints
        )));
    }
    let t_end = cfg.t_end;
    let u0 = sys.initial_state(&p)?.into_coeffs();
    let fom = integrate(&sys.at(p), &u0, (0.0, t_end), &cfg.integrator, None)?;
    let a0 = ops.project(&u0)? * cfg.init_scale;
    let rom = integrate_rom(ops, p, &a0, (0.0, t_end), &cfg.integrator, None)?;
    let mass_chol = sys
        .mass()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("mass matrix is not SPD".into()))?;
    let norms = Norms::new(sys);
    let phi = ops.modes();
    let proj = |v: &DVector<f64>| -> Result<DVector<f64>> { Ok(phi * ops.project(v)?) };

    let n = cfg.panels;
    let h = t_end / n as f64;
    let (mut d_l2, mut d_h1, mut res_t, mut res_u) = (vec![], vec![], vec![], vec![]);
    let mut rhs_buf = DVector::zeros(sys.dim());
    for i in 0..=n {
        let t = if i == n { t_end } else { h * i as f64 };
        let u = fom.eval(t);
        let ur = phi * rom.eval(t);
        let d = &ur - proj(&u)?;
        d_l2.push(norms.l2_sq(&d));
        d_h1.push(norms.h1_sq(&d));
        res_u.push(norms.l2_sq(&(&u - proj(&u)?)));
        sys.rhs(&p, t, &u, &mut rhs_buf)?;
        let ut = mass_chol.solve(&rhs_buf);
        res_t.push(norms.l2_sq(&(&ut - proj(&ut)?)));
    }
    let int_dh1 = simpson_cumulative(&d_h1, h);
    let int_t = simpson_cumulative(&res_t, h);
    let int_u = simpson_cumulative(&res_u, h);

    let k = 2.0 / t_end + 2.0 * lip;
    let init = d_l2[0].sqrt();
    let init_term = init.max(init * init);
    let nu = sys.model().diffusion(&p);
    let stride = n / cfg.checkpoints;
    let rows = (1..=cfg.checkpoints)
        .map(|c| {
            let i = c * stride;
            let t = if i == n { t_end } else { h * i as f64 };
            let lhs = d_l2[i] + 2.0 * nu * int_dh1[i / 2];
            let growth = (k * t).exp();
            let rhs =
                growth * init_term + growth * t_end * (int_t[i / 2] + lip * lip * int_u[i / 2]);
            Theorem1Row { t, lhs, rhs }
        })
        .collect();
    Ok(Theorem1Report {
        lipschitz: lip,
        k,
        initial_error: init,
        rows,
    })
}

/// Scalar Lipschitz model, a standard basis from `m + 1` states of its FOM
/// trajectory, and the bound check at rank `r`.
pub fn run_theorem1(cfg: &Theorem1Config) -> Result<Theorem1Report> {
    let model = ScalarModel::new(cfg.nu, cfg.reaction, cfg.forcing_amplitude)?;
    let sys = SemidiscreteSystem::new(Arc::new(model), Mesh::uniform(cfg.n_elems, (0.0, 1.0))?);
    let p = ParamPoint::one(cfg.alpha);
    let u0 = sys.initial_state(&p)?.into_coeffs();
    let times: Vec<f64> = (0..=cfg.m)
        .map(|j| {
            if j == cfg.m {
                cfg.t_end
            } else {
                cfg.t_end * j as f64 / cfg.m as f64
            }
        })
        .collect();
    let traj = integrate(
        &sys.at(p),
        &u0,
        (0.0, cfg.t_end),
        &cfg.integrator,
        Some(&times),
    )?;
    let states = traj
        .states
        .into_iter()
        .map(|s| Field::new(1, s))
        .collect::<Result<Vec<_>>>()?;
    let block = SnapshotBlock::new(p, cfg.t_end, states, None)?;
    let basis = PodBasis::build(&build_set_standard(&[block])?, sys.space())?;
    let ops = RomOperators::reduce(&basis, cfg.r.min(basis.d_r()), &sys)?;
    let report = verify_theorem1(&ops, p, cfg)?;
    log::info!(
        "a priori bound ({:?}, r={}): max LHS/RHS = {:.3e}",
        cfg.reaction,
        ops.r(),
        report.max_ratio()
    );
    Ok(report)
}
