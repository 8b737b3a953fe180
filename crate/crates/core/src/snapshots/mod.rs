//! Snapshot sets: the difference-quotient sets for one and two parameters
//! and the standard set of raw states, with their scaling weights.
//!
//! Time quotients are taken inside each block with that block's own step
//! `T_l / M`; parameter quotients then compare equal time indices across
//! blocks. With equal periods the two orders of differencing coincide.

pub(crate) mod store;

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::mesh::{BcKind, FemSpace, Field, Mesh};
use crate::model::ParamPoint;

pub use store::{load_block, load_set, save_block, save_set};

/// States of one parameter value at `t_j = j T / M`, `j = 0..=M`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotBlock {
    pub param: ParamPoint,
    pub period: f64,
    pub states: Vec<Field>,
    pub derivatives: Option<Vec<Field>>,
}

impl SnapshotBlock {
    pub fn new(
        param: ParamPoint,
        period: f64,
        states: Vec<Field>,
        derivatives: Option<Vec<Field>>,
    ) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad period {period}")));
        }
        if states.len() < 2 {
            return Err(Error::InvalidArgument(
                "a block needs at least two time levels".into(),
            ));
        }
        let (len, comps) = (states[0].len(), states[0].components());
        if states
            .iter()
            .any(|s| s.len() != len || s.components() != comps)
        {
            return Err(Error::InconsistentGrid("ragged states in block".into()));
        }
        if states.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteState(format!("snapshot block at {param}")));
        }
        if let Some(d) = &derivatives {
            if d.len() != states.len() || d.iter().any(|s| s.len() != len) {
                return Err(Error::InconsistentGrid(
                    "derivatives do not match the states".into(),
                ));
            }
        }
        Ok(Self {
            param,
            period,
            states,
            derivatives,
        })
    }

    /// Number of time intervals.
    pub fn m(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.period / self.m() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let m = self.m();
        (0..=m).map(|j| j as f64 * self.period / m as f64).collect()
    }

    fn dof_len(&self) -> usize {
        self.states[0].len()
    }
}

/// `(u(t_j) - u(t_{j-1})) / dt` inside one block.
pub fn dt_quotient(block: &SnapshotBlock, j: usize) -> Result<Field> {
    if j == 0 || j > block.m() {
        return Err(Error::InvalidArgument(format!(
            "time index {j} outside 1..={}",
            block.m()
        )));
    }
    block.states[j].difference_quotient(&block.states[j - 1], block.dt())
}

/// `(u^l(t_j^l) - u^{l-1}(t_j^{l-1})) / dalpha`, matching time indices.
pub fn dalpha_quotient(
    block_l: &SnapshotBlock,
    block_lm1: &SnapshotBlock,
    j: usize,
    dalpha: f64,
) -> Result<Field> {
    check_pair(block_l, block_lm1)?;
    if j > block_l.m() {
        return Err(Error::InvalidArgument(format!(
            "time index {j} out of range"
        )));
    }
    block_l.states[j].difference_quotient(&block_lm1.states[j], dalpha)
}

/// Parameter quotient of the per-block time quotients.
pub fn mixed_quotient(
    block_l: &SnapshotBlock,
    block_lm1: &SnapshotBlock,
    j: usize,
    dalpha: f64,
) -> Result<Field> {
    check_pair(block_l, block_lm1)?;
    dt_quotient(block_l, j)?.difference_quotient(&dt_quotient(block_lm1, j)?, dalpha)
}

/// Third-order quotient on the four blocks `(l,k), (l-1,k), (l,k-1), (l-1,k-1)`.
pub fn triple_quotient(
    blocks: [&SnapshotBlock; 4],
    j: usize,
    dalpha: f64,
    dbeta: f64,
) -> Result<Field> {
    let [lk, lm1k, lkm1, lm1km1] = blocks;
    mixed_quotient(lk, lm1k, j, dalpha)?
        .difference_quotient(&mixed_quotient(lkm1, lm1km1, j, dalpha)?, dbeta)
}

fn check_pair(a: &SnapshotBlock, b: &SnapshotBlock) -> Result<()> {
    if a.m() != b.m() {
        return Err(Error::InconsistentGrid(format!(
            "blocks have M={} and M={}",
            a.m(),
            b.m()
        )));
    }
    if a.dof_len() != b.dof_len() {
        return Err(Error::DimensionMismatch {
            expected: a.dof_len(),
            found: b.dof_len(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Initial,
    Dt,
    DtDalpha,
    DtDalphaDbeta,
    Plain,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Initial => "initial",
            Tier::Dt => "dt",
            Tier::DtDalpha => "dtdalpha",
            Tier::DtDalphaDbeta => "dtdalphadbeta",
            Tier::Plain => "plain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Tier::Initial,
            Tier::Dt,
            Tier::DtDalpha,
            Tier::DtDalphaDbeta,
            Tier::Plain,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Origin of a set member: tier and time/parameter indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Provenance {
    pub tier: Tier,
    pub j: usize,
    pub l: usize,
    pub k: usize,
    pub weight: f64,
}

/// A weighted snapshot: `field` already includes the weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub field: Field,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetKind {
    New1p,
    Standard,
    New2p,
}

impl SetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SetKind::New1p => "new",
            SetKind::Standard => "standard",
            SetKind::New2p => "new2p",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "new" => Some(SetKind::New1p),
            "standard" => Some(SetKind::Standard),
            "new2p" => Some(SetKind::New2p),
            _ => None,
        }
    }

    fn weights_policy(self) -> &'static str {
        match self {
            SetKind::New1p => "initial=sqrt(N);dt=sqrt(L+1);dtdalpha=1",
            SetKind::Standard => "plain=1",
            SetKind::New2p => {
                "initial=sqrt(N);dt=sqrt((L+1)(S+1));dtdalpha=sqrt(S+1);dtdalphadbeta=1"
            }
        }
    }
}

/// Mesh description carried by a stored set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshInfo {
    pub n_elems: usize,
    pub domain: (f64, f64),
    pub left: BcKind,
    pub right: BcKind,
}

impl MeshInfo {
    pub fn from_space(space: &FemSpace) -> Self {
        Self {
            n_elems: space.mesh().n_elems(),
            domain: space.mesh().domain(),
            left: space.bc().left(),
            right: space.bc().right(),
        }
    }

    pub fn to_space(&self) -> Result<FemSpace> {
        Ok(FemSpace::new(
            Mesh::uniform(self.n_elems, self.domain)?,
            self.left,
            self.right,
        ))
    }
}

/// Grid metadata of a snapshot set.
#[derive(Clone, Debug, PartialEq)]
pub struct SetMeta {
    pub kind: SetKind,
    pub m: usize,
    pub l: usize,
    pub s: usize,
    /// Block parameters in `(l, k)` order, `k` fastest.
    pub params: Vec<ParamPoint>,
    pub periods: Vec<f64>,
    pub dalpha: f64,
    pub dbeta: f64,
    pub components: usize,
    pub mesh: Option<MeshInfo>,
    /// Free-form manifest entries (tolerances, perturbation, ...).
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub meta: SetMeta,
    pub members: Vec<Member>,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn kind(&self) -> SetKind {
        self.meta.kind
    }

    pub fn dof_len(&self) -> usize {
        self.members.first().map_or(0, |m| m.field.len())
    }

    pub fn fields(&self) -> impl Iterator<Item = &Field> {
        self.members.iter().map(|m| &m.field)
    }

    pub fn tier_count(&self, tier: Tier) -> usize {
        self.members
            .iter()
            .filter(|m| m.provenance.tier == tier)
            .count()
    }

    pub fn with_mesh(mut self, space: &FemSpace) -> Self {
        self.meta.mesh = Some(MeshInfo::from_space(space));
        self
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.extra.insert(key.to_string(), value.into());
        self
    }

    /// `(1/N) sum f(member)` split by tier.
    pub fn tier_sums(&self, f: impl Fn(&Field) -> f64) -> BTreeMap<Tier, f64> {
        let n = self.len() as f64;
        let mut out = BTreeMap::new();
        for m in &self.members {
            *out.entry(m.provenance.tier).or_insert(0.0) += f(&m.field) / n;
        }
        out
    }
}

/// Spacing of an equispaced increasing sequence.
fn uniform_spacing(values: &[f64], what: &str) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InconsistentGrid(format!(
            "need at least two {what} values"
        )));
    }
    let step = (values[n - 1] - values[0]) / (n - 1) as f64;
    if !(step > 0.0) {
        return Err(Error::InconsistentGrid(format!(
            "{what} values must increase"
        )));
    }
    let tol = 1e-9 * values[0].abs().max(values[n - 1].abs()).max(1.0);
    for (i, v) in values.iter().enumerate() {
        if (v - (values[0] + i as f64 * step)).abs() > tol {
            return Err(Error::InconsistentGrid(format!(
                "{what} values are not equally spaced"
            )));
        }
    }
    Ok(step)
}

fn check_blocks<'a>(
    blocks: impl IntoIterator<Item = &'a SnapshotBlock>,
) -> Result<(usize, usize, usize)> {
    let mut it = blocks.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InconsistentGrid("no blocks".into()))?;
    let (m, len, comps) = (first.m(), first.dof_len(), first.states[0].components());
    for b in it {
        if b.m() != m {
            return Err(Error::InconsistentGrid(format!(
                "blocks have M={m} and M={}",
                b.m()
            )));
        }
        if b.dof_len() != len || b.states[0].components() != comps {
            return Err(Error::InconsistentGrid(
                "blocks live on different spaces".into(),
            ));
        }
    }
    Ok((m, len, comps))
}

fn push(
    members: &mut Vec<Member>,
    field: Field,
    tier: Tier,
    j: usize,
    l: usize,
    k: usize,
    weight: f64,
) {
    members.push(Member {
        field: field.scaled(weight),
        provenance: Provenance {
            tier,
            j,
            l,
            k,
            weight,
        },
    });
}

/// Difference-quotient set for one parameter: `L+1` initial states, the `M`
/// time quotients of the first block and the `M L` mixed quotients.
pub fn build_set_new_1p(blocks: &[SnapshotBlock]) -> Result<SnapshotSet> {
    let (m, _, comps) = check_blocks(blocks)?;
    let alphas: Vec<f64> = blocks.iter().map(|b| b.param.alpha).collect();
    let dalpha = uniform_spacing(&alphas, "parameter")?;
    let l_max = blocks.len() - 1;
    let n = (m + 1) * (l_max + 1);
    let mut members = Vec::with_capacity(n);
    let w_init = (n as f64).sqrt();
    for (l, b) in blocks.iter().enumerate() {
        push(
            &mut members,
            b.states[0].clone(),
            Tier::Initial,
            0,
            l,
            0,
            w_init,
        );
    }
    let w_dt = ((l_max + 1) as f64).sqrt();
    for j in 1..=m {
        push(
            &mut members,
            dt_quotient(&blocks[0], j)?,
            Tier::Dt,
            j,
            0,
            0,
            w_dt,
        );
    }
    for j in 1..=m {
        for l in 1..=l_max {
            let q = mixed_quotient(&blocks[l], &blocks[l - 1], j, dalpha)?;
            push(&mut members, q, Tier::DtDalpha, j, l, 0, 1.0);
        }
    }
    Ok(SnapshotSet {
        meta: SetMeta {
            kind: SetKind::New1p,
            m,
            l: l_max,
            s: 0,
            params: blocks.iter().map(|b| b.param).collect(),
            periods: blocks.iter().map(|b| b.period).collect(),
            dalpha,
            dbeta: 0.0,
            components: comps,
            mesh: None,
            extra: BTreeMap::new(),
        },
        members,
    })
}

/// Standard set: every state of every block, unweighted.
pub fn build_set_standard(blocks: &[SnapshotBlock]) -> Result<SnapshotSet> {
    let (m, _, comps) = check_blocks(blocks)?;
    let mut members = Vec::with_capacity((m + 1) * blocks.len());
    for (l, b) in blocks.iter().enumerate() {
        for (j, s) in b.states.iter().enumerate() {
            push(&mut members, s.clone(), Tier::Plain, j, l, 0, 1.0);
        }
    }
    let dalpha = if blocks.len() > 1 {
        let alphas: Vec<f64> = blocks.iter().map(|b| b.param.alpha).collect();
        uniform_spacing(&alphas, "parameter").unwrap_or(0.0)
    } else {
        0.0
    };
    Ok(SnapshotSet {
        meta: SetMeta {
            kind: SetKind::Standard,
            m,
            l: blocks.len() - 1,
            s: 0,
            params: blocks.iter().map(|b| b.param).collect(),
            periods: blocks.iter().map(|b| b.period).collect(),
            dalpha,
            dbeta: 0.0,
            components: comps,
            mesh: None,
            extra: BTreeMap::new(),
        },
        members,
    })
}

/// Difference-quotient set for two parameters from a grid `grid[l][k]`
/// (first parameter `alpha_l`, second `beta_k`).
pub fn build_set_new_2p(grid: &[Vec<SnapshotBlock>]) -> Result<SnapshotSet> {
    if grid.len() < 2 {
        return Err(Error::InconsistentGrid("need L >= 1".into()));
    }
    let s_plus = grid[0].len();
    if s_plus < 2 || grid.iter().any(|row| row.len() != s_plus) {
        return Err(Error::InconsistentGrid(
            "ragged or too small parameter grid".into(),
        ));
    }
    let (m, _, comps) = check_blocks(grid.iter().flatten())?;
    let alphas: Vec<f64> = grid.iter().map(|row| row[0].param.alpha).collect();
    let dalpha = uniform_spacing(&alphas, "first parameter")?;
    let betas: Vec<f64> = grid[0]
        .iter()
        .map(|b| {
            b.param
                .beta2
                .ok_or_else(|| Error::InconsistentGrid("missing second parameter".into()))
        })
        .collect::<Result<_>>()?;
    let dbeta = uniform_spacing(&betas, "second parameter")?;
    let tol = 1e-12
        * (1.0
            + alphas
                .iter()
                .chain(&betas)
                .fold(0.0f64, |a, v| a.max(v.abs())));
    for (l, row) in grid.iter().enumerate() {
        for (k, b) in row.iter().enumerate() {
            let ok = (b.param.alpha - alphas[l]).abs() <= tol
                && b.param.beta2.is_some_and(|v| (v - betas[k]).abs() <= tol);
            if !ok {
                return Err(Error::InconsistentGrid(format!(
                    "block ({l},{k}) is not on the tensor grid"
                )));
            }
        }
    }
    let l_max = grid.len() - 1;
    let s_max = s_plus - 1;
    let n = (m + 1) * (l_max + 1) * (s_max + 1);
    let mut members = Vec::with_capacity(n);
    let w_init = (n as f64).sqrt();
    for (l, row) in grid.iter().enumerate() {
        for (k, b) in row.iter().enumerate() {
            push(
                &mut members,
                b.states[0].clone(),
                Tier::Initial,
                0,
                l,
                k,
                w_init,
            );
        }
    }
    let w_dt = (((l_max + 1) * (s_max + 1)) as f64).sqrt();
    for j in 1..=m {
        for k in 0..=s_max {
            push(
                &mut members,
                dt_quotient(&grid[0][k], j)?,
                Tier::Dt,
                j,
                0,
                k,
                w_dt,
            );
        }
    }
    let w_mixed = ((s_max + 1) as f64).sqrt();
    for j in 1..=m {
        for l in 1..=l_max {
            let q = mixed_quotient(&grid[l][0], &grid[l - 1][0], j, dalpha)?;
            push(&mut members, q, Tier::DtDalpha, j, l, 0, w_mixed);
        }
    }
    for j in 1..=m {
        for l in 1..=l_max {
            for k in 1..=s_max {
                let q = triple_quotient(
                    [
                        &grid[l][k],
                        &grid[l - 1][k],
                        &grid[l][k - 1],
                        &grid[l - 1][k - 1],
                    ],
                    j,
                    dalpha,
                    dbeta,
                )?;
                push(&mut members, q, Tier::DtDalphaDbeta, j, l, k, 1.0);
            }
        }
    }
    Ok(SnapshotSet {
        meta: SetMeta {
            kind: SetKind::New2p,
            m,
            l: l_max,
            s: s_max,
            params: grid.iter().flatten().map(|b| b.param).collect(),
            periods: grid.iter().flatten().map(|b| b.period).collect(),
            dalpha,
            dbeta,
            components: comps,
            mesh: None,
            extra: BTreeMap::new(),
        },
        members,
    })
}
