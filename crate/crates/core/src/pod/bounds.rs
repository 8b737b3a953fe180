//! Pointwise projection bounds for difference-quotient bases and the
//! corresponding diagnostics for the standard basis.

use nalgebra::DMatrix;

use super::PodBasis;
use crate::error::{Error, Result};
use crate::mesh::{poincare_constant, FemSpace};
use crate::snapshots::{SetKind, SnapshotBlock};

/// Norm in which a pointwise bound is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundNorm {
    H01,
    L2,
}

impl BoundNorm {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundNorm::H01 => "h01",
            BoundNorm::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h01" | "h1" => Some(BoundNorm::H01),
            "l2" => Some(BoundNorm::L2),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub r: usize,
    pub norm: BoundNorm,
    /// Largest `||(I - P^r) u_h||_X^2` over the grid.
    pub max_error_sq: f64,
    /// Grid index `(j, l, k)` of the maximum.
    pub argmax: (usize, usize, usize),
    pub tail_sq: f64,
    pub constant: f64,
    pub bound: f64,
    /// `max_error_sq / bound`, defined as 0 when `r = d_r`.
    pub ratio: f64,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.ratio <= 1.0
    }
}

fn require_kind(basis: &PodBasis, kind: SetKind) -> Result<()> {
    let found = basis.source().kind;
    if found == kind {
        return Ok(());
    }
    Err(Error::UnsupportedVariant(format!(
        "pointwise bound needs a {} basis, got {}",
        kind.as_str(),
        found.as_str()
    )))
}

fn max_period(blocks: &[&SnapshotBlock]) -> f64 {
    blocks.iter().map(|b| b.period).fold(0.0, f64::max)
}

fn span(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

fn evaluate(
    basis: &PodBasis,
    space: &FemSpace,
    grid: &[(usize, usize, &SnapshotBlock)],
    r: usize,
    norm: BoundNorm,
    constant_h01: f64,
) -> Result<BoundReport> {
    let mass: Option<DMatrix<f64>> = match norm {
        BoundNorm::L2 => Some(space.mass().block_diag(basis.components())),
        BoundNorm::H01 => None,
    };
    let constant = match norm {
        BoundNorm::H01 => constant_h01,
        BoundNorm::L2 => {
            let cp = poincare_constant(space.mass(), space.stiffness())?;
            cp * cp * constant_h01
        }
    };
    let mut max_error_sq = 0.0;
    let mut argmax = (0, 0, 0);
    for &(l, k, block) in grid {
        for (j, u) in block.states.iter().enumerate() {
            let e = match &mass {
                None => basis.h1_projection_error_sq(r, u.coeffs())?,
                Some(m) => basis.l2_projection_error_sq(r, u.coeffs(), m)?,
            };
            if e > max_error_sq {
                max_error_sq = e;
                argmax = (j, l, k);
            }
        }
    }
    let tail_sq = basis.tail(r).sigma_sq;
    let bound = constant * tail_sq;
    let ratio = if r == basis.d_r() {
        0.0
    } else {
        max_error_sq / bound
    };
    Ok(BoundReport {
        r,
        norm,
        max_error_sq,
        argmax,
        tail_sq,
        constant,
        bound,
        ratio,
    })
}

/// Largest pointwise projection error of the trajectory states against
/// `C_X` times the eigenvalue tail, for a one-parameter quotient basis.
/// `C_H = 3 max(1, 2T^2, 4T^2 (alpha_L - alpha_0)^2)`, `C_L2 = C_p^2 C_H`.
pub fn pointwise_bound_1p(
    blocks: &[SnapshotBlock],
    basis: &PodBasis,
    space: &FemSpace,
    r: usize,
    norm: BoundNorm,
) -> Result<BoundReport> {
    require_kind(basis, SetKind::New1p)?;
    if blocks.len() < 2 {
        return Err(Error::InvalidArgument("need L >= 1".into()));
    }
    let refs: Vec<&SnapshotBlock> = blocks.iter().collect();
    let t = max_period(&refs);
    let a = span(&blocks.iter().map(|b| b.param.alpha).collect::<Vec<_>>());
    let c = 3.0 * f64::max(1.0, f64::max(2.0 * t * t, 4.0 * t * t * a * a));
    let grid: Vec<_> = blocks.iter().enumerate().map(|(l, b)| (l, 0, b)).collect();
    evaluate(basis, space, &grid, r, norm, c)
}

/// Two-parameter analogue on `grid[l][k]`:
/// `C_H = 4 max(1, 2T^2, 4T^2 a^2, 8T^2 a^2 b^2)` with the spans `a`, `b`
/// of the two parameters.
pub fn pointwise_bound_2p(
    grid: &[Vec<SnapshotBlock>],
    basis: &PodBasis,
    space: &FemSpace,
    r: usize,
    norm: BoundNorm,
) -> Result<BoundReport> {
    require_kind(basis, SetKind::New2p)?;
    if grid.len() < 2 || grid.iter().any(|row| row.len() < 2) {
        return Err(Error::InvalidArgument("need L >= 1 and S >= 1".into()));
    }
    let refs: Vec<&SnapshotBlock> = grid.iter().flatten().collect();
    let t = max_period(&refs);
    let a = span(
        &grid
            .iter()
            .map(|row| row[0].param.alpha)
            .collect::<Vec<_>>(),
    );
    let b = span(
        &grid[0]
            .iter()
            .map(|blk| blk.param.beta2.unwrap_or(0.0))
            .collect::<Vec<_>>(),
    );
    let t2 = t * t;
    let c = 4.0
        * [1.0, 2.0 * t2, 4.0 * t2 * a * a, 8.0 * t2 * a * a * b * b]
            .into_iter()
            .fold(0.0, f64::max);
    let cells: Vec<_> = grid
        .iter()
        .enumerate()
        .flat_map(|(l, row)| row.iter().enumerate().map(move |(k, blk)| (l, k, blk)))
        .collect();
    evaluate(basis, space, &cells, r, norm, c)
}

/// `(gamma_m, beta_m)` with `gamma_m = 1/m - 1/(4 m^2)` and
/// `beta_m = gamma_m + 1/m - gamma_m / m`.
pub fn standard_exponents(m: u32) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("m={m} must be at least 2")));
    }
    let m = m as f64;
    let gamma = 1.0 / m - 1.0 / (4.0 * m * m);
    Ok((gamma, gamma + 1.0 / m - gamma / m))
}

/// Observed behaviour of the standard basis on its own snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardDiagnostics {
    pub r: usize,
    pub max_error_sq: f64,
    pub mean_error_sq: f64,
    pub tail_sq: f64,
    /// `max / mean` of the member errors; 1 for equidistributed errors.
    pub max_over_mean: f64,
    /// `(m, gamma_m, max_error_sq / tail_sq^(1 - gamma_m))` for `m = 2..=5`.
    pub ratios: Vec<(u32, f64, f64)>,
}

/// Pointwise H1 errors of the standard basis on the trajectory states.
pub fn standard_diagnostics(
    blocks: &[SnapshotBlock],
    basis: &PodBasis,
    r: usize,
) -> Result<StandardDiagnostics> {
    if basis.source().kind != SetKind::Standard {
        return Err(Error::UnsupportedVariant(format!(
            "standard diagnostics need a standard basis, got {}",
            basis.source().kind.as_str()
        )));
    }
    let errs: Vec<f64> = blocks
        .iter()
        .flat_map(|b| b.states.iter())
        .map(|u| basis.h1_projection_error_sq(r, u.coeffs()))
        .collect::<Result<_>>()?;
    if errs.is_empty() {
        return Err(Error::InvalidArgument("no states".into()));
    }
    let max_error_sq = errs.iter().copied().fold(0.0, f64::max);
    let mean_error_sq = errs.iter().sum::<f64>() / errs.len() as f64;
    let tail_sq = basis.tail(r).sigma_sq;
    let ratios: Vec<(u32, f64, f64)> = (2..=5)
        .map(|m| {
            let (g, _) = standard_exponents(m)?;
            Ok((m, g, max_error_sq / tail_sq.powf(1.0 - g)))
        })
        .collect::<Result<_>>()?;
    let max_over_mean = if mean_error_sq > 0.0 {
        max_error_sq / mean_error_sq
    } else {
        1.0
    };
    for (m, g, ratio) in &ratios {
        log::info!("standard basis r={r}: m={m} gamma={g:.6} ratio={ratio:.4e}");
    }
    Ok(StandardDiagnostics {
        r,
        max_error_sq,
        mean_error_sq,
        tail_sq,
        max_over_mean,
        ratios,
    })
}
