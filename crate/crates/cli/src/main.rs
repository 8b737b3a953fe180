//! `pod-param`: staged pipeline for POD reduced-order models of the
//! Brusselator.
//!
//! Exit codes: 0 success, 1 invalid configuration or other error, 2 an orbit
//! did not converge, 3 a required artifact is missing or stale, 4 a
//! verification check failed.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{parse_method, read_pairs, RunConfig};
use pipeline::{Ctx, Failure, Sections};
use pod_param::ParamPoint;

#[derive(Parser, Debug)]
#[command(
    name = "pod-param",
    version,
    about = "POD reduced-order models for parametric reaction-diffusion"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Recompute artifacts that are already stored.
    #[arg(long, global = true)]
    force: bool,
    /// Keep going when some orbits do not converge.
    #[arg(long, global = true)]
    allow_partial: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reduced sweep sizes for the two-parameter report.
    #[arg(long, global = true)]
    desk_scale: bool,
    /// Snapshot set: new, standard or new2p.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Output directory; `POD_PARAM_OUT` takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Compute and store one FOM period per training parameter.
    FomOrbits,
    /// Build the snapshot set and POD basis from stored orbits.
    BuildBasis,
    /// Reduced periodic orbits compared with the FOM, appended to rom/<method>.csv.
    RunRom {
        /// Parameter values (overrides rom_betas).
        #[arg(long, value_delimiter = ',')]
        beta: Vec<f64>,
        /// Second parameter values (overrides rom_rhos).
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
    },
    /// Tail identity, pointwise bounds, eigen oracle and a priori bound checks.
    Verify,
    /// Write the CSV tables; with no section flags, those that apply.
    Report {
        #[arg(long)]
        spectrum: bool,
        #[arg(long)]
        table1: bool,
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        two_param: bool,
        #[arg(long)]
        theorem1: bool,
        #[arg(long)]
        convergence: bool,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_pairs(&read_pairs(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &common.method {
        cfg.method = parse_method(m)?;
    }
    if common.desk_scale {
        cfg.desk_scale = true;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(out) = std::env::var_os("POD_PARAM_OUT").filter(|v| !v.is_empty()) {
        cfg.out = PathBuf::from(out);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    if let Cmd::RunRom { beta, rho } = &cli.cmd {
        if !beta.is_empty() {
            cfg.rom_betas = beta.clone();
        }
        if !rho.is_empty() {
            cfg.rom_rhos = rho.clone();
        }
    }
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let ctx = Ctx {
        out: cfg.out.clone(),
        cfg,
        force: cli.common.force,
        allow_partial: cli.common.allow_partial,
    };
    match cli.cmd {
        Cmd::FomOrbits => pipeline::fom_orbits(&ctx),
        Cmd::BuildBasis => pipeline::build_basis(&ctx),
        Cmd::RunRom { .. } => {
            let params: Vec<ParamPoint> = ctx.cfg.rom_params();
            pipeline::run_rom(&ctx, params)
        }
        Cmd::Verify => pipeline::verify(&ctx),
        Cmd::Report {
            spectrum,
            table1,
            sweep,
            two_param,
            theorem1,
            convergence,
        } => {
            let chosen = Sections {
                spectrum,
                table1,
                sweep,
                two_param,
                theorem1,
                convergence,
            };
            let sec = if chosen.any() {
                chosen
            } else {
                Sections::defaults(&ctx.cfg)
            };
            pipeline::report(&ctx, sec)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Failure>())
        .map_or(1, Failure::exit_code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
