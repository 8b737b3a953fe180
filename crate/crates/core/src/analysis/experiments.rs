use std::sync::Arc;

use rayon::prelude::*;

use super::csv::CsvTable;
use super::errors::{error_report, DiagnosticsConfig, ErrorMaxima, ErrorReport, RomStart};
use super::fom::{fom_run, fom_runs, orbit_block, FomRun, Norms};
use crate::error::{Error, Result};
use crate::integrate::{integrate, OrbitConfig, PeriodicOrbit};
use crate::mesh::{FemSpace, Field, Mesh};
use crate::model::{Brusselator, ParamPoint, SemidiscreteSystem};
use crate::pod::{standard_diagnostics, PodBasis, StandardDiagnostics};
use crate::rom::{rom_orbit_config, rom_periodic_orbit, RomOperators};
use crate::snapshots::{build_set_new_1p, build_set_standard, SetKind, SnapshotBlock, SnapshotSet};

pub const TABLE1_BETAS: [f64; 4] = [2.75, 3.25, 3.75, 4.25];
pub const TABLE1_RS: [usize; 4] = [18, 24, 30, 36];

/// Brusselator on `[0, 1]` with `n_elems` quadratic elements.
pub fn brusselator_system(n_elems: usize, alpha_const: f64, nu: f64) -> Result<SemidiscreteSystem> {
    let model = Brusselator::new(alpha_const, nu)?;
    Ok(SemidiscreteSystem::new(
        Arc::new(model),
        Mesh::uniform(n_elems, (0.0, 1.0))?,
    ))
}

/// Snapshot set of the requested one-parameter kind, tagged with the mesh.
pub fn build_set(kind: SetKind, blocks: &[SnapshotBlock], space: &FemSpace) -> Result<SnapshotSet> {
    let set = match kind {
        SetKind::New1p => build_set_new_1p(blocks)?,
        SetKind::Standard => build_set_standard(blocks)?,
        SetKind::New2p => {
            return Err(Error::UnsupportedVariant(
                "two-parameter sets need a parameter grid".into(),
            ))
        }
    };
    Ok(set.with_mesh(space))
}

#[derive(Clone, Debug)]
pub struct Table1Config {
    pub n_elems: usize,
    pub nu: f64,
    pub alpha_const: f64,
    pub betas: Vec<f64>,
    pub m: usize,
    pub rs: Vec<usize>,
    pub method: SetKind,
    pub orbit: OrbitConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            n_elems: 50,
            nu: 0.01,
            alpha_const: 1.0,
            betas: TABLE1_BETAS.to_vec(),
            m: 64,
            rs: TABLE1_RS.to_vec(),
            method: SetKind::New1p,
            orbit: OrbitConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Table1Row {
    pub r: usize,
    pub sigma: f64,
    /// Maxima over the parameters and the fine partition.
    pub all: ErrorMaxima,
    /// Maxima over the parameters and the snapshot times.
    pub snapshots: ErrorMaxima,
}

#[derive(Clone, Debug)]
pub struct Table1Result {
    pub method: SetKind,
    pub m: usize,
    pub d_r: usize,
    pub params: Vec<ParamPoint>,
    pub periods: Vec<f64>,
    pub rows: Vec<Table1Row>,
    pub standard: Vec<StandardDiagnostics>,
}

impl Table1Result {
    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "r",
            "sigma_r",
            "max_t_eps_h1",
            "max_t_e_h1",
            "max_tn_eps_h1",
            "max_tn_e_h1",
            "max_t_eps_l2",
            "max_t_e_l2",
            "max_tn_eps_l2",
            "max_tn_e_l2",
        ]);
        for row in &self.rows {
            let (a, s) = (row.all, row.snapshots);
            t.push(vec![
                row.r.into(),
                row.sigma.into(),
                a.eps_h1.into(),
                a.e_h1.into(),
                s.eps_h1.into(),
                s.e_h1.into(),
                a.eps_l2.into(),
                a.e_l2.into(),
                s.eps_l2.into(),
                s.e_l2.into(),
            ])
            .expect("row width");
        }
        t
    }

    pub fn periods_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["beta", "period"]);
        for (p, period) in self.params.iter().zip(&self.periods) {
            t.push(vec![p.alpha.into(), (*period).into()])
                .expect("row width");
        }
        t
    }

    pub fn standard_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "r",
            "m",
            "gamma_m",
            "beta_m",
            "max_error_sq",
            "mean_error_sq",
            "tail_sq",
        ]);
        for d in &self.standard {
            for &(m, g, b) in &d.ratios {
                t.push(vec![
                    d.r.into(),
                    (m as usize).into(),
                    g.into(),
                    b.into(),
                    d.max_error_sq.into(),
                    d.mean_error_sq.into(),
                    d.tail_sq.into(),
                ])
                .expect("row width");
            }
        }
        t
    }
}

/// Maximum errors of the reduced model for each requested `r`, comparing
/// against every block with `u_r(0) = P^r u_h(0)`.
pub fn table1_from_blocks(
    sys: &SemidiscreteSystem,
    blocks: &[SnapshotBlock],
    cfg: &Table1Config,
) -> Result<Table1Result> {
    let set = build_set(cfg.method, blocks, sys.space())?;
    let basis = PodBasis::build(&set, sys.space())?;
    log::info!("{} basis: d_r = {}", cfg.method.as_str(), basis.d_r());
    table1_with_basis(sys, blocks, &basis, cfg)
}

/// [`table1_from_blocks`] with a prebuilt basis; `cfg.method` labels the
/// result.
pub fn table1_with_basis(
    sys: &SemidiscreteSystem,
    blocks: &[SnapshotBlock],
    basis: &PodBasis,
    cfg: &Table1Config,
) -> Result<Table1Result> {
    let mut rows = Vec::new();
    let mut standard = Vec::new();
    for &r in &cfg.rs {
        if r > basis.d_r() {
            log::warn!("r={r} exceeds d_r={}, skipped", basis.d_r());
            continue;
        }
        let ops = RomOperators::reduce(basis, r, sys)?;
        let reports: Vec<ErrorReport> = blocks
            .par_iter()
            .map(|b| {
                error_report(
                    &ops,
                    b,
                    RomStart::Projected,
                    &cfg.orbit.integrator,
                    &cfg.diagnostics,
                )
            })
            .collect::<Result<_>>()?;
        let all = reports
            .iter()
            .fold(ErrorMaxima::default(), |m, e| m.max(e.max_all));
        let snapshots = reports
            .iter()
            .fold(ErrorMaxima::default(), |m, e| m.max(e.max_snapshots));
        rows.push(Table1Row {
            r,
            sigma: basis.tail(r).sigma,
            all,
            snapshots,
        });
        if cfg.method == SetKind::Standard {
            standard.push(standard_diagnostics(blocks, basis, r)?);
        }
    }
    Ok(Table1Result {
        method: cfg.method,
        m: blocks[0].m(),
        d_r: basis.d_r(),
        params: blocks.iter().map(|b| b.param).collect(),
        periods: blocks.iter().map(|b| b.period).collect(),
        rows,
        standard,
    })
}

/// FOM orbits for the configured betas.
pub fn table1_orbits(sys: &SemidiscreteSystem, cfg: &Table1Config) -> Result<Vec<FomRun>> {
    let params: Vec<ParamPoint> = cfg.betas.iter().map(|&b| ParamPoint::one(b)).collect();
    fom_runs(sys, &params, cfg.m, &cfg.orbit)
}

/// Resamples converged orbits with `m` intervals per period.
pub fn resample(
    sys: &SemidiscreteSystem,
    runs: &[FomRun],
    m: usize,
    cfg: &OrbitConfig,
) -> Result<Vec<SnapshotBlock>> {
    runs.par_iter()
        .map(|r| orbit_block(sys, &r.orbit, m, &cfg.integrator))
        .collect()
}

/// The full Table-1 pipeline: orbits, snapshot set, basis and errors.
pub fn run_table1(cfg: &Table1Config) -> Result<Table1Result> {
    let sys = brusselator_system(cfg.n_elems, cfg.alpha_const, cfg.nu)?;
    let runs = table1_orbits(&sys, cfg)?;
    let blocks: Vec<SnapshotBlock> = runs.into_iter().map(|r| r.block).collect();
    table1_from_blocks(&sys, &blocks, cfg)
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub n_elems: usize,
    pub nu: f64,
    pub alpha_const: f64,
    pub train_betas: Vec<f64>,
    pub m: usize,
    pub r: usize,
    pub sweep_betas: Vec<f64>,
    pub methods: Vec<SetKind>,
    pub orbit: OrbitConfig,
    pub rom_orbit: OrbitConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl SweepConfig {
    /// 31 values, or 7 at desk scale.
    pub fn new(desk_scale: bool) -> Self {
        let n = if desk_scale { 7 } else { 31 };
        Self {
            n_elems: 50,
            nu: 0.01,
            alpha_const: 1.0,
            train_betas: TABLE1_BETAS.to_vec(),
            m: 64,
            r: 42,
            sweep_betas: super::linspace(2.75, 4.25, n),
            methods: vec![SetKind::New1p, SetKind::Standard],
            orbit: OrbitConfig::default(),
            rom_orbit: rom_orbit_config(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

/// Reduced orbit at `block.param`, started from the projection of the FOM
/// anchor state, and its error report.
pub fn rom_orbit_report(
    ops: &RomOperators<'_>,
    block: &SnapshotBlock,
    rom_cfg: &OrbitConfig,
    diag: &DiagnosticsConfig,
) -> Result<(PeriodicOrbit, ErrorReport)> {
    let a0 = ops.project(block.states[0].coeffs())?;
    let orbit = rom_periodic_orbit(ops, block.param, &a0, rom_cfg)?;
    if !orbit.converged {
        return Err(Error::NotConverged);
    }
    let report = error_report(
        ops,
        block,
        RomStart::Orbit(&orbit),
        &rom_cfg.integrator,
        diag,
    )?;
    Ok((orbit, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: ParamPoint,
    pub method: SetKind,
    pub in_sample: bool,
    /// The error message when the FOM or ROM orbit failed.
    pub outcome: std::result::Result<SweepOutcome, String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOutcome {
    pub period_fom: f64,
    pub period_rom: f64,
    pub maxima: ErrorMaxima,
}

impl SweepOutcome {
    pub fn period_relative_error(&self) -> f64 {
        (self.period_rom - self.period_fom).abs() / self.period_fom
    }

    pub fn ratio_h1(&self) -> f64 {
        self.maxima.e_h1 / self.maxima.eps_h1
    }

    pub fn ratio_l2(&self) -> f64 {
        self.maxima.e_l2 / self.maxima.eps_l2
    }
}

fn from_report(report: &ErrorReport) -> SweepOutcome {
    SweepOutcome {
        period_fom: report.period_fom,
        period_rom: report.period_rom.unwrap_or(f64::NAN),
        maxima: report.max_all,
    }
}

pub fn sweep_header() -> Vec<&'static str> {
    vec![
        "alpha",
        "beta2",
        "method",
        "in_sample",
        "ok",
        "period_fom",
        "period_rom",
        "period_rel_err",
        "max_t_eps_l2",
        "max_t_e_l2",
        "max_t_eps_h1",
        "max_t_e_h1",
        "ratio_l2",
        "ratio_h1",
    ]
}

pub fn sweep_table(rows: &[SweepRow]) -> CsvTable {
    let mut t = CsvTable::new(&sweep_header());
    for row in rows {
        let nan = f64::NAN;
        let o = row.outcome.as_ref().ok();
        let get = |f: &dyn Fn(&SweepOutcome) -> f64| o.map_or(nan, f);
        t.push(vec![
            row.param.alpha.into(),
            row.param.beta2.unwrap_or(nan).into(),
            row.method.as_str().into(),
            row.in_sample.into(),
            o.is_some().into(),
            get(&|o| o.period_fom).into(),
            get(&|o| o.period_rom).into(),
            get(&SweepOutcome::period_relative_error).into(),
            get(&|o| o.maxima.eps_l2).into(),
            get(&|o| o.maxima.e_l2).into(),
            get(&|o| o.maxima.eps_h1).into(),
            get(&|o| o.maxima.e_h1).into(),
            get(&SweepOutcome::ratio_l2).into(),
            get(&SweepOutcome::ratio_h1).into(),
        ])
        .expect("row width");
    }
    t
}

fn contains(values: &[f64], v: f64) -> bool {
    values
        .iter()
        .any(|&x| (x - v).abs() <= 1e-12 * v.abs().max(1.0))
}

/// Out-of-sample sweep over `cfg.sweep_betas` for each basis method, given the
/// training blocks. Failures are recorded per row.
pub fn beta_sweep_with(
    sys: &SemidiscreteSystem,
    train: &[SnapshotBlock],
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    let params: Vec<ParamPoint> = cfg
        .sweep_betas
        .iter()
        .map(|&b| ParamPoint::one(b))
        .collect();
    let foms: Vec<std::result::Result<SnapshotBlock, String>> = params
        .par_iter()
        .map(|&p| {
            fom_run(sys, p, cfg.m, &cfg.orbit)
                .map(|r| r.block)
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let basis = PodBasis::build(&build_set(method, train, sys.space())?, sys.space())?;
        let ops = RomOperators::reduce(&basis, cfg.r.min(basis.d_r()), sys)?;
        let outcomes: Vec<SweepRow> = params
            .par_iter()
            .zip(&foms)
            .map(|(&p, fom)| {
                let outcome = fom.clone().and_then(|b| {
                    rom_orbit_report(&ops, &b, &cfg.rom_orbit, &cfg.diagnostics)
                        .map(|(_, rep)| from_report(&rep))
                        .map_err(|e| e.to_string())
                });
                if let Err(e) = &outcome {
                    log::warn!("sweep {} at {p}: {e}", method.as_str());
                }
                SweepRow {
                    param: p,
                    method,
                    in_sample: contains(&cfg.train_betas, p.alpha),
                    outcome,
                }
            })
            .collect();
        rows.extend(outcomes);
    }
    Ok(rows)
}

pub fn run_beta_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let sys = brusselator_system(cfg.n_elems, cfg.alpha_const, cfg.nu)?;
    let params: Vec<ParamPoint> = cfg
        .train_betas
        .iter()
        .map(|&b| ParamPoint::one(b))
        .collect();
    let train: Vec<SnapshotBlock> = fom_runs(&sys, &params, cfg.m, &cfg.orbit)?
        .into_iter()
        .map(|r| r.block)
        .collect();
    beta_sweep_with(&sys, &train, cfg)
}

#[derive(Clone, Debug)]
pub struct ConvergenceConfig {
    pub n_elems: usize,
    pub nu: f64,
    pub alpha_const: f64,
    pub betas: Vec<f64>,
    /// Number of successive halvings compared (1 gives h vs h/2).
    pub levels: usize,
    pub fine_points: usize,
    pub orbit: OrbitConfig,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            n_elems: 50,
            nu: 0.01,
            alpha_const: 1.0,
            betas: TABLE1_BETAS.to_vec(),
            levels: 1,
            fine_points: 2049,
            orbit: OrbitConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub beta: f64,
    pub n_coarse: usize,
    pub period_coarse: f64,
    pub period_fine: f64,
    pub max_l2: f64,
    pub max_h1: f64,
}

pub fn convergence_table(rows: &[ConvergenceRow]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "beta",
        "n_coarse",
        "n_fine",
        "period_coarse",
        "period_fine",
        "max_l2",
        "max_h1",
    ]);
    for r in rows {
        t.push(vec![
            r.beta.into(),
            r.n_coarse.into(),
            (2 * r.n_coarse).into(),
            r.period_coarse.into(),
            r.period_fine.into(),
            r.max_l2.into(),
            r.max_h1.into(),
        ])
        .expect("row width");
    }
    t
}

/// Largest difference over one period between the orbits on two nested
/// meshes. Both orbits start at their anchors; the fine one is evaluated at
/// times stretched by the period ratio and the coarse one is prolongated.
pub fn orbit_difference(
    coarse: (&SemidiscreteSystem, &PeriodicOrbit),
    fine: (&SemidiscreteSystem, &PeriodicOrbit),
    fine_points: usize,
    cfg: &OrbitConfig,
) -> Result<(f64, f64)> {
    let (cs, co) = coarse;
    let (fs, fo) = fine;
    let p = co.param;
    let tc = integrate(
        &cs.at(p),
        &co.initial_state,
        (0.0, co.period),
        &cfg.integrator,
        None,
    )?;
    let tf = integrate(
        &fs.at(p),
        &fo.initial_state,
        (0.0, fo.period),
        &cfg.integrator,
        None,
    )?;
    let norms = Norms::new(fs);
    let stretch = fo.period / co.period;
    let n = fine_points.max(2);
    let (mut l2, mut h1) = (0.0f64, 0.0f64);
    for i in 0..n {
        let t = co.period * i as f64 / (n - 1) as f64;
        let uc = Field::new(cs.components(), tc.eval(t.min(tc.t_end())))?;
        let uc = cs.space().prolongate(&uc, fs.space())?;
        let d = tf.eval((t * stretch).min(tf.t_end())) - uc.coeffs();
        l2 = l2.max(norms.l2(&d));
        h1 = h1.max(norms.h1(&d));
    }
    Ok((l2, h1))
}

/// Orbits at `h, h/2, ...` for every beta and the max-over-period
/// differences between consecutive levels.
pub fn fem_self_convergence(cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>> {
    let systems: Vec<SemidiscreteSystem> = (0..=cfg.levels)
        .map(|k| brusselator_system(cfg.n_elems << k, cfg.alpha_const, cfg.nu))
        .collect::<Result<_>>()?;
    let jobs: Vec<(f64, usize)> = cfg
        .betas
        .iter()
        .flat_map(|&b| (0..cfg.levels).map(move |k| (b, k)))
        .collect();
    jobs.par_iter()
        .map(|&(beta, k)| {
            let p = ParamPoint::one(beta);
            let (cs, fs) = (&systems[k], &systems[k + 1]);
            let co = super::fom::fom_orbit(cs, p, &cfg.orbit)?;
            let fo = super::fom::fom_orbit(fs, p, &cfg.orbit)?;
            if !co.converged || !fo.converged {
                return Err(Error::NotConverged);
            }
            let (max_l2, max_h1) =
                orbit_difference((cs, &co), (fs, &fo), cfg.fine_points, &cfg.orbit)?;
            Ok(ConvergenceRow {
                beta,
                n_coarse: cs.space().mesh().n_elems(),
                period_coarse: co.period,
                period_fine: fo.period,
                max_l2,
                max_h1,
            })
        })
        .collect()
}
