use rayon::prelude::*;

use super::csv::CsvTable;
use super::errors::{DiagnosticsConfig, ErrorMaxima};
use super::experiments::{brusselator_system, rom_orbit_report, SweepOutcome};
use super::fom::{fom_run, fom_runs};
use super::linspace;
use crate::error::{Error, Result};
use crate::integrate::OrbitConfig;
use crate::model::{ParamPoint, SemidiscreteSystem};
use crate::pod::{pointwise_bound_2p, BoundNorm, BoundReport, PodBasis};
use crate::rom::{rom_orbit_config, RomOperators};
use crate::snapshots::{build_set_new_2p, SnapshotBlock};

/// Two-parameter experiment: `p.alpha = beta`, `p.beta2 = rho` with
/// `nu = 10^-rho`.
#[derive(Clone, Debug)]
pub struct TwoParamConfig {
    pub n_elems: usize,
    pub alpha_const: f64,
    pub betas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub m: usize,
    /// Candidate ranks, tried in increasing order.
    pub rs: Vec<usize>,
    /// Smallest candidate whose in-sample max `||grad e_r||` is below this
    /// is used.
    pub target_in_sample_e: f64,
    pub oos_n: usize,
    pub beta_range: (f64, f64),
    pub rho_range: (f64, f64),
    pub orbit: OrbitConfig,
    pub rom_orbit: OrbitConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl TwoParamConfig {
    /// Desk scale uses `M = 64` and a 10 x 10 out-of-sample grid; full scale
    /// `M = 128`, `r = 65` and 30 x 30.
    pub fn new(desk_scale: bool) -> Self {
        Self {
            n_elems: 80,
            alpha_const: 1.0,
            betas: vec![2.75, 3.25, 3.75, 4.25],
            rhos: vec![1.0, 1.5, 2.0, 2.5],
            m: if desk_scale { 64 } else { 128 },
            rs: if desk_scale {
                vec![30, 40, 50, 55, 60, 65]
            } else {
                vec![65]
            },
            target_in_sample_e: if desk_scale { 4e-2 } else { 4e-3 },
            oos_n: if desk_scale { 10 } else { 30 },
            beta_range: (2.75, 4.25),
            rho_range: (1.0, 2.5),
            orbit: OrbitConfig::default(),
            rom_orbit: rom_orbit_config(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }

    pub fn system(&self) -> Result<SemidiscreteSystem> {
        brusselator_system(self.n_elems, self.alpha_const, 0.01)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub param: ParamPoint,
    pub outcome: std::result::Result<SweepOutcome, String>,
}

#[derive(Clone, Debug)]
pub struct TwoParamResult {
    pub d_r: usize,
    pub r: usize,
    pub tried: Vec<(usize, f64)>,
    pub bound_h1: BoundReport,
    pub bound_l2: BoundReport,
    pub in_sample: Vec<GridCell>,
    pub out_of_sample: Vec<GridCell>,
    pub oos_n: usize,
}

fn max_of(cells: &[GridCell], f: impl Fn(&SweepOutcome) -> f64) -> f64 {
    cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().ok())
        .map(f)
        .fold(0.0, f64::max)
}

impl TwoParamResult {
    pub fn max_in_sample_e_h1(&self) -> f64 {
        max_of(&self.in_sample, |o| o.maxima.e_h1)
    }

    pub fn min_in_sample_ratio(&self) -> f64 {
        self.in_sample
            .iter()
            .filter_map(|c| c.outcome.as_ref().ok())
            .map(SweepOutcome::ratio_h1)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_oos_period_error(&self) -> f64 {
        max_of(&self.out_of_sample, SweepOutcome::period_relative_error)
    }

    pub fn oos_failures(&self) -> usize {
        self.out_of_sample
            .iter()
            .filter(|c| c.outcome.is_err())
            .count()
    }

    /// Largest ratio of `max_t ||grad e_r||` between horizontally or
    /// vertically adjacent out-of-sample cells.
    pub fn max_neighbor_ratio(&self) -> f64 {
        neighbor_ratio(&self.out_of_sample, self.oos_n)
    }

    /// Same as [`Self::max_neighbor_ratio`] for the projection error, which
    /// does not involve the reduced model.
    pub fn max_projection_neighbor_ratio(&self) -> f64 {
        neighbor_ratio_by(&self.out_of_sample, self.oos_n, |m| m.eps_h1)
    }

    pub fn grid_table(cells: &[GridCell]) -> CsvTable {
        let mut t = CsvTable::new(&[
            "beta",
            "rho",
            "ok",
            "period_fom",
            "period_rom",
            "period_rel_err",
            "max_t_eps_l2",
            "max_t_e_l2",
            "max_t_eps_h1",
            "max_t_e_h1",
            "ratio_h1",
        ]);
        for c in cells {
            let nan = f64::NAN;
            let o = c.outcome.as_ref().ok();
            let get = |f: &dyn Fn(&SweepOutcome) -> f64| o.map_or(nan, f);
            t.push(vec![
                c.param.alpha.into(),
                c.param.beta2.unwrap_or(nan).into(),
                o.is_some().into(),
                get(&|o| o.period_fom).into(),
                get(&|o| o.period_rom).into(),
                get(&SweepOutcome::period_relative_error).into(),
                get(&|o| o.maxima.eps_l2).into(),
                get(&|o| o.maxima.e_l2).into(),
                get(&|o| o.maxima.eps_h1).into(),
                get(&|o| o.maxima.e_h1).into(),
                get(&SweepOutcome::ratio_h1).into(),
            ])
            .expect("row width");
        }
        t
    }

    pub fn bound_table(&self) -> CsvTable {
        bound_table(&[&self.bound_h1, &self.bound_l2])
    }
}

pub fn bound_table(reports: &[&BoundReport]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "r",
        "norm",
        "max_error_sq",
        "tail_sq",
        "constant",
        "bound",
        "ratio",
        "holds",
    ]);
    for b in reports {
        t.push(vec![
            b.r.into(),
            b.norm.as_str().into(),
            b.max_error_sq.into(),
            b.tail_sq.into(),
            b.constant.into(),
            b.bound.into(),
            b.ratio.into(),
            b.holds().into(),
        ])
        .expect("row width");
    }
    t
}

/// Cells are stored row by row, `n` per row.
pub fn neighbor_ratio(cells: &[GridCell], n: usize) -> f64 {
    neighbor_ratio_by(cells, n, |m| m.e_h1)
}

/// Largest ratio of `field` between horizontally or vertically adjacent cells.
pub fn neighbor_ratio_by(cells: &[GridCell], n: usize, field: impl Fn(&ErrorMaxima) -> f64) -> f64 {
    let val = |i: usize| cells[i].outcome.as_ref().ok().map(|o| field(&o.maxima));
    let mut worst = 1.0f64;
    for i in 0..cells.len() {
        let (row, col) = (i / n, i % n);
        let mut nbrs = Vec::new();
        if col + 1 < n {
            nbrs.push(i + 1);
        }
        if row + 1 < cells.len().div_ceil(n) && i + n < cells.len() {
            nbrs.push(i + n);
        }
        for j in nbrs {
            if let (Some(a), Some(b)) = (val(i), val(j)) {
                if a > 0.0 && b > 0.0 {
                    worst = worst.max(a.max(b) / a.min(b));
                }
            }
        }
    }
    worst
}

/// `grid[l][k]` at `(betas[l], rhos[k])`.
pub fn grid_params(betas: &[f64], rhos: &[f64]) -> Vec<Vec<ParamPoint>> {
    betas
        .iter()
        .map(|&b| rhos.iter().map(|&r| ParamPoint::two(b, r)).collect())
        .collect()
}

pub fn grid_blocks(
    sys: &SemidiscreteSystem,
    betas: &[f64],
    rhos: &[f64],
    m: usize,
    cfg: &OrbitConfig,
) -> Result<Vec<Vec<SnapshotBlock>>> {
    let flat: Vec<ParamPoint> = grid_params(betas, rhos).into_iter().flatten().collect();
    let mut runs = fom_runs(sys, &flat, m, cfg)?.into_iter().map(|r| r.block);
    Ok(betas
        .iter()
        .map(|_| runs.by_ref().take(rhos.len()).collect())
        .collect())
}

fn evaluate_cells(
    ops: &RomOperators<'_>,
    blocks: &[std::result::Result<SnapshotBlock, String>],
    params: &[ParamPoint],
    cfg: &TwoParamConfig,
) -> Vec<GridCell> {
    params
        .par_iter()
        .zip(blocks)
        .map(|(&p, b)| {
            let outcome = b.clone().and_then(|b| {
                rom_orbit_report(ops, &b, &cfg.rom_orbit, &cfg.diagnostics)
                    .map(|(_, rep)| SweepOutcome {
                        period_fom: rep.period_fom,
                        period_rom: rep.period_rom.unwrap_or(f64::NAN),
                        maxima: rep.max_all,
                    })
                    .map_err(|e| e.to_string())
            });
            if let Err(e) = &outcome {
                log::warn!("two-parameter cell {p}: {e}");
            }
            GridCell { param: p, outcome }
        })
        .collect()
}

/// Basis on the in-sample grid, rank selection, pointwise bounds, and the
/// out-of-sample sweep.
pub fn two_param_with(
    sys: &SemidiscreteSystem,
    grid: &[Vec<SnapshotBlock>],
    cfg: &TwoParamConfig,
) -> Result<TwoParamResult> {
    let set = build_set_new_2p(grid)?.with_mesh(sys.space());
    let basis = PodBasis::build(&set, sys.space())?;
    log::info!("two-parameter basis: d_r = {}", basis.d_r());
    let flat: Vec<SnapshotBlock> = grid.iter().flatten().cloned().collect();
    let params: Vec<ParamPoint> = flat.iter().map(|b| b.param).collect();
    let wrapped: Vec<_> = flat.into_iter().map(Ok).collect();

    let mut candidates: Vec<usize> = cfg.rs.iter().map(|&r| r.min(basis.d_r())).collect();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate rank".into()));
    }
    let mut tried = Vec::new();
    let mut chosen = None;
    for &r in &candidates {
        let ops = RomOperators::reduce(&basis, r, sys)?;
        let cells = evaluate_cells(&ops, &wrapped, &params, cfg);
        let e = if cells.iter().all(|c| c.outcome.is_ok()) {
            max_of(&cells, |o| o.maxima.e_h1)
        } else {
            f64::INFINITY
        };
        log::info!("two-parameter r={r}: in-sample max |grad e_r| = {e:.3e}");
        tried.push((r, e));
        let last = r == *candidates.last().unwrap();
        if e <= cfg.target_in_sample_e || last {
            chosen = Some((r, cells));
            break;
        }
    }
    let (r, in_sample) = chosen.expect("at least one candidate");
    let bound_h1 = pointwise_bound_2p(grid, &basis, sys.space(), r, BoundNorm::H01)?;
    let bound_l2 = pointwise_bound_2p(grid, &basis, sys.space(), r, BoundNorm::L2)?;

    let n = cfg.oos_n;
    let betas = linspace(cfg.beta_range.0, cfg.beta_range.1, n);
    let rhos = linspace(cfg.rho_range.0, cfg.rho_range.1, n);
    let oos_params: Vec<ParamPoint> = rhos
        .iter()
        .flat_map(|&rho| betas.iter().map(move |&b| ParamPoint::two(b, rho)))
        .collect();
    let oos_blocks: Vec<_> = oos_params
        .par_iter()
        .map(|&p| {
            fom_run(sys, p, cfg.m, &cfg.orbit)
                .map(|r| r.block)
                .map_err(|e| e.to_string())
        })
        .collect();
    let ops = RomOperators::reduce(&basis, r, sys)?;
    let out_of_sample = evaluate_cells(&ops, &oos_blocks, &oos_params, cfg);
    Ok(TwoParamResult {
        d_r: basis.d_r(),
        r,
        tried,
        bound_h1,
        bound_l2,
        in_sample,
        out_of_sample,
        oos_n: n,
    })
}

pub fn run_two_param(cfg: &TwoParamConfig) -> Result<TwoParamResult> {
    let sys = cfg.system()?;
    let grid = grid_blocks(&sys, &cfg.betas, &cfg.rhos, cfg.m, &cfg.orbit)?;
    two_param_with(&sys, &grid, cfg)
}

/// Pointwise bound on a small `(L, S) = (1, 1)` grid in both norms at
/// `r = 1, ceil(d_r / 2), d_r - 1`.
pub fn lemma8_desk(
    sys: &SemidiscreteSystem,
    betas: [f64; 2],
    rhos: [f64; 2],
    m: usize,
    cfg: &OrbitConfig,
) -> Result<Vec<BoundReport>> {
    let grid = grid_blocks(sys, &betas, &rhos, m, cfg)?;
    let set = build_set_new_2p(&grid)?.with_mesh(sys.space());
    let basis = PodBasis::build(&set, sys.space())?;
    let d = basis.d_r();
    let mut rs = vec![1, d.div_ceil(2), d.saturating_sub(1).max(1)];
    rs.dedup();
    let mut out = Vec::new();
    for r in rs {
        for norm in [BoundNorm::H01, BoundNorm::L2] {
            out.push(pointwise_bound_2p(&grid, &basis, sys.space(), r, norm)?);
        }
    }
    Ok(out)
}
