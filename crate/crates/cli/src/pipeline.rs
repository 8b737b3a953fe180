//! The stage verbs. Artifacts live under the output directory:
//!
//! ```text
//! orbits/<tag>/       one FOM period per parameter, plus orbits/index.csv
//! set-<method>/       snapshot set
//! basis-<method>/     POD basis
//! rom/<method>.csv    reduced-orbit records, one row per (r, parameter)
//! reports/*.csv       tables
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use pod_param::analysis::{
    brusselator_system, build_set, fem_self_convergence, fom_run, rom_orbit_report, run_theorem1,
    sweep_table, table1_with_basis, two_param_with, Cell, ConvergenceConfig, CsvTable,
    DiagnosticsConfig, SweepOutcome, SweepRow, Table1Config, Theorem1Config, Theorem1Report,
    TwoParamConfig, TwoParamResult,
};
use pod_param::pod::{
    load_basis, pointwise_bound_1p, pointwise_bound_2p, save_basis, spectrum_csv,
    spectrum_deviation, svd_oracle, BoundNorm, PodBasis,
};
use pod_param::rom::RomOperators;
use pod_param::snapshots::{
    build_set_new_2p, load_block, load_set, save_block, save_set, SetKind, SnapshotBlock,
};
use pod_param::{Error as CoreError, ParamPoint, ScalarReaction, SemidiscreteSystem};

use crate::config::{ModelKind, RunConfig};

/// Failures with their own exit codes.
#[derive(Debug)]
pub enum Failure {
    Unconverged(Vec<String>),
    Missing(PathBuf),
    Stale(PathBuf),
    Verify(usize),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Unconverged(_) => 2,
            Failure::Missing(_) | Failure::Stale(_) => 3,
            Failure::Verify(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Unconverged(what) => write!(f, "no converged orbit for {}", what.join(", ")),
            Failure::Missing(p) => write!(f, "missing artifact {}", p.display()),
            Failure::Stale(p) => write!(
                f,
                "artifact {} was produced with a different configuration (rerun fom-orbits)",
                p.display()
            ),
            Failure::Verify(n) => write!(f, "{n} verification check(s) failed"),
        }
    }
}

impl std::error::Error for Failure {}

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub force: bool,
    pub allow_partial: bool,
}

fn is_orbit_failure(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::NotConverged | CoreError::NoOscillation(_) | CoreError::MaxStepsExceeded(_)
    )
}

pub fn tag(p: &ParamPoint) -> String {
    match p.beta2 {
        None => format!("beta={:.6}", p.alpha),
        Some(r) => format!("beta={:.6}_rho={:.6}", p.alpha, r),
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::Missing(path).into())
    }
}

fn write_table(table: &CsvTable, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    table
        .write(path)
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

impl Ctx {
    fn ensure_brusselator(&self, verb: &str) -> Result<()> {
        if self.cfg.model != ModelKind::Brusselator {
            return Err(
                crate::config::ConfigError(format!("{verb} needs model = brusselator")).into(),
            );
        }
        Ok(())
    }

    fn system(&self) -> Result<SemidiscreteSystem> {
        Ok(brusselator_system(
            self.cfg.n_elems,
            self.cfg.alpha_const,
            self.cfg.nu,
        )?)
    }

    fn diagnostics(&self) -> DiagnosticsConfig {
        DiagnosticsConfig {
            fine_points: self.cfg.fine_points,
            ..Default::default()
        }
    }

    fn orbit_dir(&self, p: &ParamPoint) -> PathBuf {
        self.out.join("orbits").join(tag(p))
    }

    fn set_dir(&self) -> PathBuf {
        self.out.join(format!("set-{}", self.cfg.method.as_str()))
    }

    fn basis_dir(&self) -> PathBuf {
        self.out.join(format!("basis-{}", self.cfg.method.as_str()))
    }

    fn cached_block(&self, p: &ParamPoint) -> Option<SnapshotBlock> {
        let (block, extra) = load_block(&self.orbit_dir(p)).ok()?;
        (extra.get("source") == Some(&self.cfg.fom_key(p))).then_some(block)
    }

    fn store_block(&self, block: &SnapshotBlock) -> Result<()> {
        let extra = BTreeMap::from([("source".to_string(), self.cfg.fom_key(&block.param))]);
        save_block(block, &self.orbit_dir(&block.param), &extra)?;
        Ok(())
    }

    /// A stored block that must exist and match the configuration.
    fn stored_block(&self, p: &ParamPoint) -> Result<SnapshotBlock> {
        let dir = self.orbit_dir(p);
        let man = require(dir.join("manifest.txt"))?;
        let (block, extra) =
            load_block(&dir).with_context(|| format!("reading {}", dir.display()))?;
        if extra.get("source") != Some(&self.cfg.fom_key(p)) {
            return Err(Failure::Stale(man).into());
        }
        Ok(block)
    }

    fn training_blocks(&self) -> Result<Vec<SnapshotBlock>> {
        self.cfg
            .train_params()
            .iter()
            .map(|p| self.stored_block(p))
            .collect()
    }

    fn grid(&self, blocks: Vec<SnapshotBlock>) -> Vec<Vec<SnapshotBlock>> {
        blocks
            .chunks(self.cfg.rhos.len())
            .map(<[_]>::to_vec)
            .collect()
    }

    fn stored_basis(&self) -> Result<PodBasis> {
        let dir = self.basis_dir();
        require(dir.join("manifest.txt"))?;
        load_basis(&dir).with_context(|| format!("reading {}", dir.display()))
    }

    fn fom_block(
        &self,
        sys: &SemidiscreteSystem,
        p: ParamPoint,
    ) -> Result<SnapshotBlock, CoreError> {
        if let Some(b) = self.cached_block(&p) {
            return Ok(b);
        }
        fom_run(sys, p, self.cfg.m, &self.cfg.orbit()).map(|r| r.block)
    }
}

pub fn fom_orbits(ctx: &Ctx) -> Result<()> {
    ctx.ensure_brusselator("fom-orbits")?;
    let sys = ctx.system()?;
    let params = ctx.cfg.train_params();
    let todo: Vec<ParamPoint> = params
        .iter()
        .filter(|p| ctx.force || ctx.cached_block(p).is_none())
        .copied()
        .collect();
    println!(
        "{} orbits: {} cached, {} to compute",
        params.len(),
        params.len() - todo.len(),
        todo.len()
    );
    let orbit_cfg = ctx.cfg.orbit();
    let results: Vec<(ParamPoint, Result<SnapshotBlock, CoreError>)> = todo
        .par_iter()
        .map(|&p| (p, fom_run(&sys, p, ctx.cfg.m, &orbit_cfg).map(|r| r.block)))
        .collect();
    let mut failed = Vec::new();
    for (p, res) in results {
        match res {
            Ok(block) => {
                ctx.store_block(&block)?;
                println!("orbit {p}: period {:.9}", block.period);
            }
            Err(e) if is_orbit_failure(&e) => {
                log::warn!("orbit {p}: {e}");
                failed.push(p);
            }
            Err(e) => return Err(e).with_context(|| format!("orbit {p}")),
        }
    }

    let mut index = CsvTable::new(&["beta", "rho", "converged", "period", "path"]);
    for p in &params {
        let block = ctx.cached_block(p).filter(|_| !failed.contains(p));
        index.push(vec![
            p.alpha.into(),
            p.beta2.unwrap_or(f64::NAN).into(),
            block.is_some().into(),
            block.map_or(f64::NAN, |b| b.period).into(),
            Cell::Text(tag(p)),
        ])?;
    }
    write_table(&index, &ctx.out.join("orbits").join("index.csv"))?;
    if !failed.is_empty() && !ctx.allow_partial {
        return Err(Failure::Unconverged(failed.iter().map(ToString::to_string).collect()).into());
    }
    Ok(())
}

pub fn build_basis(ctx: &Ctx) -> Result<()> {
    ctx.ensure_brusselator("build-basis")?;
    let sys = ctx.system()?;
    let blocks = ctx.training_blocks()?;
    let set = match ctx.cfg.method {
        SetKind::New2p => build_set_new_2p(&ctx.grid(blocks))?.with_mesh(sys.space()),
        kind => build_set(kind, &blocks, sys.space())?,
    };
    let basis = PodBasis::build(&set, sys.space())?;
    save_set(&set, &ctx.set_dir())?;
    save_basis(&basis, &ctx.basis_dir())?;
    println!(
        "{} set: {} members, d_r = {}, saved to {}",
        ctx.cfg.method.as_str(),
        set.len(),
        basis.d_r(),
        ctx.basis_dir().display()
    );
    Ok(())
}

fn record_key(rec: &csv::StringRecord) -> (f64, f64, f64) {
    let num = |i: usize| rec.get(i).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
    (num(0), num(1), num(2))
}

fn merge_records(path: &Path, fresh: &CsvTable) -> Result<CsvTable> {
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    if path.exists() {
        let mut rd = csv::Reader::from_path(path)?;
        if rd
            .headers()?
            .iter()
            .ne(fresh.header.iter().map(String::as_str))
        {
            anyhow::bail!(
                "{} has a different header; remove it to start over",
                path.display()
            );
        }
        for rec in rd.records() {
            rows.push(rec?);
        }
    }
    let text = fresh.render();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    for rec in rd.records() {
        let rec = rec?;
        rows.retain(|r| !same(r, &rec));
        rows.push(rec);
    }
    rows.sort_by(|a, b| {
        record_key(a)
            .partial_cmp(&record_key(b))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let header: Vec<&str> = fresh.header.iter().map(String::as_str).collect();
    let mut out = CsvTable::new(&header);
    for r in rows {
        out.push(r.iter().map(|s| Cell::Text(s.to_string())).collect())?;
    }
    Ok(out)
}

/// Same `(r, alpha, beta2)`, comparing the text so `NaN` matches itself.
fn same(a: &csv::StringRecord, b: &csv::StringRecord) -> bool {
    (0..3).all(|i| a.get(i) == b.get(i))
}

pub fn run_rom(ctx: &Ctx, params: Vec<ParamPoint>) -> Result<()> {
    ctx.ensure_brusselator("run-rom")?;
    let sys = ctx.system()?;
    let basis = ctx.stored_basis()?;
    let train = ctx.cfg.train_params();
    let foms: Vec<(ParamPoint, Result<SnapshotBlock, CoreError>)> = params
        .par_iter()
        .map(|&p| (p, ctx.fom_block(&sys, p)))
        .collect();
    for (_, b) in &foms {
        if let Ok(b) = b {
            if ctx.cached_block(&b.param).is_none() {
                ctx.store_block(b)?;
            }
        }
    }
    let rom_cfg = ctx.cfg.rom_orbit();
    let diag = ctx.diagnostics();
    let mut header = vec!["r"];
    header.extend(pod_param::analysis::sweep_header());
    let mut fresh = CsvTable::new(&header);
    let mut failed = Vec::new();
    for &r in &ctx.cfg.rs {
        if r > basis.d_r() {
            log::warn!("r={r} exceeds d_r={}, skipped", basis.d_r());
            continue;
        }
        let ops = RomOperators::reduce(&basis, r, &sys)?;
        let rows: Vec<SweepRow> = foms
            .par_iter()
            .map(|(p, fom)| {
                let outcome = match fom {
                    Ok(b) => rom_orbit_report(&ops, b, &rom_cfg, &diag)
                        .map(|(_, rep)| SweepOutcome {
                            period_fom: rep.period_fom,
                            period_rom: rep.period_rom.unwrap_or(f64::NAN),
                            maxima: rep.max_all,
                        })
                        .map_err(|e| e.to_string()),
                    Err(e) => Err(format!("FOM: {e}")),
                };
                SweepRow {
                    param: *p,
                    method: ctx.cfg.method,
                    in_sample: train.contains(p),
                    outcome,
                }
            })
            .collect();
        for row in &rows {
            match &row.outcome {
                Ok(o) => println!(
                    "r={r} {}: period {:.9} (FOM {:.9}), max |grad e_r| {:.3e}",
                    row.param, o.period_rom, o.period_fom, o.maxima.e_h1
                ),
                Err(e) => {
                    println!("r={r} {}: failed ({e})", row.param);
                    failed.push(format!("r={r} at {}", row.param));
                }
            }
        }
        let text = sweep_table(&rows).render();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        for rec in rd.records() {
            let mut cells = vec![Cell::from(r)];
            cells.extend(rec?.iter().map(|s| Cell::Text(s.to_string())));
            fresh.push(cells)?;
        }
    }
    let path = ctx
        .out
        .join("rom")
        .join(format!("{}.csv", ctx.cfg.method.as_str()));
    let merged = merge_records(&path, &fresh)?;
    write_table(&merged, &path)?;
    if !failed.is_empty() && !ctx.allow_partial {
        return Err(Failure::Unconverged(failed).into());
    }
    Ok(())
}

struct Check {
    name: String,
    pass: bool,
    skipped: bool,
    detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            pass,
            skipped: false,
            detail,
        }
    }
}

fn triplet(d: usize) -> Vec<usize> {
    let mut rs = vec![1, d.div_ceil(2), d.saturating_sub(1).max(1)];
    rs.dedup();
    rs
}

fn theorem1_check(name: &str, rep: &Theorem1Report) -> Check {
    Check::new(
        name,
        rep.holds(),
        format!(
            "{} checkpoints, max LHS/RHS {:.3e}",
            rep.rows.len(),
            rep.max_ratio()
        ),
    )
}

fn scalar_theorem1(cfg: &RunConfig) -> Result<Theorem1Report> {
    let s = &cfg.scalar;
    let reaction = match s.reaction.as_str() {
        "zero" => ScalarReaction::Zero,
        _ => ScalarReaction::Sine(s.c),
    };
    Ok(run_theorem1(&Theorem1Config {
        nu: cfg.nu,
        reaction,
        forcing_amplitude: s.forcing,
        alpha: s.alpha,
        n_elems: cfg.n_elems,
        t_end: s.t_end,
        m: cfg.m,
        r: s.r,
        checkpoints: s.checkpoints,
        panels: s.panels,
        integrator: cfg.integrator(),
        ..Default::default()
    })?)
}

pub fn verify(ctx: &Ctx) -> Result<()> {
    let mut checks = Vec::new();
    if ctx.cfg.model == ModelKind::ScalarLipschitz {
        checks.push(theorem1_check(
            "a priori bound",
            &scalar_theorem1(&ctx.cfg)?,
        ));
    } else {
        let sys = ctx.system()?;
        let set_dir = ctx.set_dir();
        require(set_dir.join("manifest.txt"))?;
        let set = load_set(&set_dir).with_context(|| format!("reading {}", set_dir.display()))?;
        let basis = ctx.stored_basis()?;
        let d = basis.d_r();

        let g = basis.gram();
        let ortho = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "mode orthonormality",
            ortho <= 1e-10,
            format!("max |Phi^T A Phi - I| {ortho:.2e}"),
        ));

        let mut tail = 0.0f64;
        for r in triplet(d) {
            tail = tail.max(basis.tail_identity_residual(&set, r)?);
        }
        checks.push(Check::new(
            "tail identity",
            tail <= 1e-8,
            format!("r in {:?}, max relative residual {tail:.2e}", triplet(d)),
        ));

        let oracle = svd_oracle(&set, sys.space().stiffness())?;
        let dev = spectrum_deviation(&basis.eigen().lambdas, &oracle, 1e-8);
        checks.push(Check::new(
            "eigen oracle",
            dev <= 1e-10,
            format!("max relative deviation {dev:.2e}"),
        ));

        if ctx.cfg.method == SetKind::Standard {
            checks.push(Check {
                skipped: true,
                ..Check::new(
                    "pointwise bound",
                    true,
                    "not stated for the standard set".into(),
                )
            });
        } else {
            let blocks = ctx.training_blocks()?;
            let grid = if ctx.cfg.two_param() {
                ctx.grid(blocks.clone())
            } else {
                Vec::new()
            };
            let mut worst = 0.0f64;
            for r in triplet(d) {
                for norm in [BoundNorm::H01, BoundNorm::L2] {
                    let rep = match ctx.cfg.method {
                        SetKind::New2p => pointwise_bound_2p(&grid, &basis, sys.space(), r, norm)?,
                        _ => pointwise_bound_1p(&blocks, &basis, sys.space(), r, norm)?,
                    };
                    worst = worst.max(rep.ratio);
                }
            }
            checks.push(Check::new(
                "pointwise bound",
                worst <= 1.0,
                format!("max bound ratio {worst:.2e} (H1 and L2)"),
            ));
        }

        for (name, g) in [
            ("a priori bound g=0", ScalarReaction::Zero),
            ("a priori bound g=sin", ScalarReaction::Sine(0.5)),
        ] {
            let rep = run_theorem1(&Theorem1Config {
                reaction: g,
                ..Default::default()
            })?;
            checks.push(theorem1_check(name, &rep));
        }
    }

    let failed = checks.iter().filter(|c| !c.pass).count();
    for c in &checks {
        println!(
            "check {:<22} {}  {}",
            c.name,
            match (c.skipped, c.pass) {
                (true, _) => "SKIP",
                (false, true) => "PASS",
                (false, false) => "FAIL",
            },
            c.detail
        );
    }
    println!(
        "{} of {} checks passed",
        checks.len() - failed,
        checks.len()
    );
    if failed > 0 {
        return Err(Failure::Verify(failed).into());
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sections {
    pub spectrum: bool,
    pub table1: bool,
    pub sweep: bool,
    pub two_param: bool,
    pub theorem1: bool,
    pub convergence: bool,
}

impl Sections {
    pub fn any(&self) -> bool {
        self.spectrum
            || self.table1
            || self.sweep
            || self.two_param
            || self.theorem1
            || self.convergence
    }

    /// What `report` emits with no section flags.
    pub fn defaults(cfg: &RunConfig) -> Self {
        match cfg.model {
            ModelKind::ScalarLipschitz => Self {
                theorem1: true,
                ..Self::default()
            },
            ModelKind::Brusselator => Self {
                spectrum: true,
                table1: !cfg.two_param(),
                two_param: cfg.two_param(),
                sweep: true,
                ..Self::default()
            },
        }
    }
}

pub fn report(ctx: &Ctx, sec: Sections) -> Result<()> {
    let dir = ctx.out.join("reports");
    let cfg = &ctx.cfg;
    if sec.theorem1 {
        let rep = if cfg.model == ModelKind::ScalarLipschitz {
            scalar_theorem1(cfg)?
        } else {
            run_theorem1(&Theorem1Config::default())?
        };
        write_table(&rep.table(), &dir.join("theorem1.csv"))?;
    }
    if cfg.model == ModelKind::ScalarLipschitz {
        return Ok(());
    }
    let method = cfg.method.as_str();
    if sec.spectrum {
        let basis = ctx.stored_basis()?;
        let path = dir.join(format!("spectrum-{method}.csv"));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(&path, spectrum_csv(basis.eigen()))?;
        println!("wrote {}", path.display());
    }
    if sec.table1 {
        if cfg.two_param() {
            anyhow::bail!("the error table is defined for one-parameter configurations");
        }
        let sys = ctx.system()?;
        let basis = ctx.stored_basis()?;
        let blocks = ctx.training_blocks()?;
        let t1 = table1_with_basis(
            &sys,
            &blocks,
            &basis,
            &Table1Config {
                n_elems: cfg.n_elems,
                nu: cfg.nu,
                alpha_const: cfg.alpha_const,
                betas: cfg.betas.clone(),
                m: cfg.m,
                rs: cfg.rs.clone(),
                method: cfg.method,
                orbit: cfg.orbit(),
                diagnostics: ctx.diagnostics(),
            },
        )?;
        write_table(&t1.table(), &dir.join(format!("table1-{method}.csv")))?;
        write_table(&t1.periods_table(), &dir.join("periods.csv"))?;
        if cfg.method == SetKind::Standard {
            write_table(&t1.standard_table(), &dir.join("standard.csv"))?;
        }
    }
    if sec.sweep {
        let path = ctx.out.join("rom").join(format!("{method}.csv"));
        if path.exists() {
            let bytes = std::fs::read(&path)?;
            let dest = dir.join(format!("sweep-{method}.csv"));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(&dest, bytes)?;
            println!("wrote {}", dest.display());
        } else {
            log::info!("no reduced-orbit records at {}", path.display());
        }
    }
    if sec.two_param {
        if cfg.method != SetKind::New2p {
            anyhow::bail!("the two-parameter report needs method = new2p");
        }
        let sys = ctx.system()?;
        let grid = ctx.grid(ctx.training_blocks()?);
        let mut tp = TwoParamConfig::new(cfg.desk_scale);
        tp.n_elems = cfg.n_elems;
        tp.alpha_const = cfg.alpha_const;
        tp.betas = cfg.betas.clone();
        tp.rhos = cfg.rhos.clone();
        tp.m = cfg.m;
        tp.rs = cfg.rs.clone();
        tp.target_in_sample_e = cfg.target_e;
        tp.orbit = cfg.orbit();
        tp.rom_orbit = cfg.rom_orbit();
        tp.diagnostics = ctx.diagnostics();
        let res = two_param_with(&sys, &grid, &tp)?;
        write_two_param(&res, &dir)?;
    }
    if sec.convergence {
        let rows = fem_self_convergence(&ConvergenceConfig {
            n_elems: cfg.n_elems,
            nu: cfg.nu,
            alpha_const: cfg.alpha_const,
            betas: cfg.betas.clone(),
            fine_points: cfg.fine_points,
            orbit: cfg.orbit(),
            ..Default::default()
        })?;
        write_table(
            &pod_param::analysis::convergence_table(&rows),
            &dir.join("convergence.csv"),
        )?;
    }
    Ok(())
}

fn write_two_param(res: &TwoParamResult, dir: &Path) -> Result<()> {
    let mut rank = CsvTable::new(&["r", "max_t_e_h1_in_sample", "chosen"]);
    for &(r, e) in &res.tried {
        rank.push(vec![r.into(), e.into(), (r == res.r).into()])?;
    }
    write_table(&rank, &dir.join("two-param-rank.csv"))?;
    write_table(
        &TwoParamResult::grid_table(&res.in_sample),
        &dir.join("grid-in-sample.csv"),
    )?;
    write_table(
        &TwoParamResult::grid_table(&res.out_of_sample),
        &dir.join("grid-out-of-sample.csv"),
    )?;
    write_table(&res.bound_table(), &dir.join("bounds.csv"))?;
    println!(
        "two-parameter: d_r = {}, r = {}, out-of-sample failures {}, max period error {:.2e}, neighbour ratio {:.2}",
        res.d_r,
        res.r,
        res.oos_failures(),
        res.max_oos_period_error(),
        res.max_neighbor_ratio()
    );
    Ok(())
}
