//! Line-oriented `key = value` run configuration.
//!
//! `#` starts a comment. `include = path` splices another file in place,
//! relative to the including file; later keys override earlier ones.
//! Lists are comma separated, or `linspace(a, b, n)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use pod_param::analysis::linspace;
use pod_param::snapshots::SetKind;
use pod_param::ParamPoint;

const MAX_INCLUDE_DEPTH: usize = 16;
pub const BETA_GUARD: (f64, f64) = (2.75, 4.25);
pub const RHO_GUARD: (f64, f64) = (1.0, 2.5);

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Reads `path` and its includes into a flat map.
pub fn read_pairs(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    read_into(path, &mut out, 0)?;
    Ok(out)
}

fn read_into(
    path: &Path,
    out: &mut BTreeMap<String, String>,
    depth: usize,
) -> Result<(), ConfigError> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(bad(format!(
            "include nesting too deep at {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
    parse_text(&text, path, out, depth)
}

fn parse_text(
    text: &str,
    path: &Path,
    out: &mut BTreeMap<String, String>,
    depth: usize,
) -> Result<(), ConfigError> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            bad(format!(
                "{}:{}: expected key = value",
                path.display(),
                n + 1
            ))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k == "include" {
            let base = path.parent().unwrap_or(Path::new("."));
            read_into(&base.join(v), out, depth + 1)?;
        } else {
            out.insert(k.to_string(), v.to_string());
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Brusselator,
    ScalarLipschitz,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarSettings {
    pub reaction: String,
    pub c: f64,
    pub forcing: f64,
    pub alpha: f64,
    pub t_end: f64,
    pub r: usize,
    pub checkpoints: usize,
    pub panels: usize,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelKind,
    pub n_elems: usize,
    pub alpha_const: f64,
    /// Diffusion for one-parameter runs; with `rhos` it is `10^-rho`.
    pub nu: f64,
    pub betas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub m: usize,
    pub rs: Vec<usize>,
    pub method: SetKind,
    pub rtol: f64,
    pub atol: f64,
    pub period_rtol: f64,
    pub rom_period_rtol: f64,
    pub rom_betas: Vec<f64>,
    pub rom_rhos: Vec<f64>,
    pub fine_points: usize,
    /// In-sample target for the two-parameter rank choice.
    pub target_e: f64,
    pub out: PathBuf,
    pub desk_scale: bool,
    pub threads: Option<usize>,
    pub scalar: ScalarSettings,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| bad(format!("bad value for {key}: {v}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(format!("bad value for {key}: {v}"))),
    }
}

/// A comma list or `linspace(a, b, n)`.
pub fn parse_values(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(inner) = v
        .strip_prefix("linspace(")
        .and_then(|s| s.strip_suffix(')'))
    {
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad(format!("{key}: linspace takes three arguments")));
        }
        return Ok(linspace(
            parse_num(key, parts[0])?,
            parse_num(key, parts[1])?,
            parse_num(key, parts[2])?,
        ));
    }
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Brusselator,
            n_elems: 50,
            alpha_const: 1.0,
            nu: 0.01,
            betas: vec![2.75, 3.25, 3.75, 4.25],
            rhos: Vec::new(),
            m: 64,
            rs: vec![18, 24, 30, 36],
            method: SetKind::New1p,
            rtol: 1e-8,
            atol: 1e-11,
            period_rtol: 1e-7,
            rom_period_rtol: 1e-8,
            rom_betas: Vec::new(),
            rom_rhos: Vec::new(),
            fine_points: 2049,
            target_e: 4e-2,
            out: PathBuf::from("out"),
            desk_scale: false,
            threads: None,
            scalar: ScalarSettings {
                reaction: "sine".into(),
                c: 0.5,
                forcing: 1.0,
                alpha: 1.0,
                t_end: 1.0,
                r: 1,
                checkpoints: 32,
                panels: 2048,
            },
        }
    }
}

impl RunConfig {
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (k, v) in pairs {
            let v = v.as_str();
            match k.as_str() {
                "model" => {
                    c.model = match v {
                        "brusselator" => ModelKind::Brusselator,
                        "scalar_lipschitz" => ModelKind::ScalarLipschitz,
                        _ => return Err(bad(format!("unknown model {v}"))),
                    }
                }
                "n_elems" => c.n_elems = parse_num(k, v)?,
                "alpha_const" => c.alpha_const = parse_num(k, v)?,
                "nu" => c.nu = parse_num(k, v)?,
                "betas" => c.betas = parse_values(k, v)?,
                "rhos" => c.rhos = parse_values(k, v)?,
                "M" | "m" => c.m = parse_num(k, v)?,
                "rs" => {
                    c.rs = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse_num(k, s.trim()))
                        .collect::<Result<_, _>>()?
                }
                "method" => c.method = parse_method(v)?,
                "rtol" => c.rtol = parse_num(k, v)?,
                "atol" => c.atol = parse_num(k, v)?,
                "period_rtol" => c.period_rtol = parse_num(k, v)?,
                "rom_period_rtol" => c.rom_period_rtol = parse_num(k, v)?,
                "rom_betas" => c.rom_betas = parse_values(k, v)?,
                "rom_rhos" => c.rom_rhos = parse_values(k, v)?,
                "fine_points" => c.fine_points = parse_num(k, v)?,
                "target_e" => c.target_e = parse_num(k, v)?,
                "out" => c.out = PathBuf::from(v),
                "desk_scale" => c.desk_scale = parse_bool(k, v)?,
                "threads" => c.threads = Some(parse_num(k, v)?),
                "reaction" => c.scalar.reaction = v.to_string(),
                "reaction_c" => c.scalar.c = parse_num(k, v)?,
                "forcing" => c.scalar.forcing = parse_num(k, v)?,
                "alpha" => c.scalar.alpha = parse_num(k, v)?,
                "t_end" => c.scalar.t_end = parse_num(k, v)?,
                "r" => c.scalar.r = parse_num(k, v)?,
                "checkpoints" => c.scalar.checkpoints = parse_num(k, v)?,
                "panels" => c.scalar.panels = parse_num(k, v)?,
                _ => return Err(bad(format!("unknown key {k}"))),
            }
        }
        Ok(c)
    }

    pub fn two_param(&self) -> bool {
        !self.rhos.is_empty()
    }

    /// Training parameters in grid order (`beta` outer, `rho` inner).
    pub fn train_params(&self) -> Vec<ParamPoint> {
        params_of(&self.betas, &self.rhos)
    }

    /// Parameters for `run-rom`; the training grid when none are set.
    pub fn rom_params(&self) -> Vec<ParamPoint> {
        let betas = if self.rom_betas.is_empty() {
            &self.betas
        } else {
            &self.rom_betas
        };
        let rhos = if self.rom_rhos.is_empty() {
            &self.rhos
        } else {
            &self.rom_rhos
        };
        params_of(betas, rhos)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_elems == 0 {
            return Err(bad("n_elems must be positive"));
        }
        if self.m < 2 {
            return Err(bad("M must be at least 2"));
        }
        if !(self.rtol > 0.0
            && self.atol > 0.0
            && self.period_rtol > 0.0
            && self.rom_period_rtol > 0.0)
        {
            return Err(bad("tolerances must be positive"));
        }
        if self.model == ModelKind::ScalarLipschitz {
            if !matches!(self.scalar.reaction.as_str(), "zero" | "sine") {
                return Err(bad(format!(
                    "reaction must be zero or sine, got {}",
                    self.scalar.reaction
                )));
            }
            return Ok(());
        }
        if self.betas.is_empty() {
            return Err(bad("betas is empty"));
        }
        for &b in self.betas.iter().chain(&self.rom_betas) {
            if !(BETA_GUARD.0..=BETA_GUARD.1).contains(&b) {
                return Err(bad(format!(
                    "beta {b} outside [{}, {}]",
                    BETA_GUARD.0, BETA_GUARD.1
                )));
            }
        }
        for &r in self.rhos.iter().chain(&self.rom_rhos) {
            if !(RHO_GUARD.0..=RHO_GUARD.1).contains(&r) {
                return Err(bad(format!(
                    "rho {r} outside [{}, {}]",
                    RHO_GUARD.0, RHO_GUARD.1
                )));
            }
        }
        if !self.rom_rhos.is_empty() && !self.two_param() {
            return Err(bad("rom_rhos needs rhos"));
        }
        match (self.method, self.two_param()) {
            (SetKind::New2p, false) => return Err(bad("method new2p needs rhos")),
            (SetKind::New1p | SetKind::Standard, true) => {
                return Err(bad(format!(
                    "method {} takes no rhos",
                    self.method.as_str()
                )))
            }
            _ => {}
        }
        if self.method == SetKind::New2p && (self.betas.len() < 2 || self.rhos.len() < 2) {
            return Err(bad("new2p needs at least two betas and two rhos"));
        }
        let n_params = self.betas.len().max(1) * self.rhos.len().max(1);
        let cap = (self.m + 1) * n_params;
        if let Some(&r) = self.rs.iter().find(|&&r| r == 0 || r > cap) {
            return Err(bad(format!("r = {r} outside 1..={cap}")));
        }
        Ok(())
    }

    pub fn integrator(&self) -> pod_param::IntegratorConfig {
        pod_param::IntegratorConfig {
            rtol: self.rtol,
            atol: self.atol,
            ..Default::default()
        }
    }

    pub fn orbit(&self) -> pod_param::OrbitConfig {
        pod_param::OrbitConfig {
            integrator: self.integrator(),
            period_rtol: self.period_rtol,
            ..Default::default()
        }
    }

    pub fn rom_orbit(&self) -> pod_param::OrbitConfig {
        pod_param::OrbitConfig {
            period_rtol: self.rom_period_rtol,
            ..self.orbit()
        }
    }

    /// Everything that determines a stored FOM block.
    pub fn fom_key(&self, p: &ParamPoint) -> String {
        format!(
            "n_elems={};alpha_const={:e};nu={:e};M={};rtol={:e};atol={:e};period_rtol={:e};param={p}",
            self.n_elems, self.alpha_const, self.nu, self.m, self.rtol, self.atol, self.period_rtol
        )
    }
}

pub fn parse_method(v: &str) -> Result<SetKind, ConfigError> {
    SetKind::parse(v).ok_or_else(|| bad(format!("unknown method {v} (new, standard, new2p)")))
}

fn params_of(betas: &[f64], rhos: &[f64]) -> Vec<ParamPoint> {
    if rhos.is_empty() {
        betas.iter().map(|&b| ParamPoint::one(b)).collect()
    } else {
        betas
            .iter()
            .flat_map(|&b| rhos.iter().map(move |&r| ParamPoint::two(b, r)))
            .collect()
    }
}
