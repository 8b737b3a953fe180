//! Error metrics, experiment drivers and report tables.

pub mod csv;
mod errors;
mod experiments;
mod fom;
mod theorem1;
mod two_param;

pub use csv::{fmt9, Cell, CsvTable};
pub use errors::{
    error_report, DiagnosticsConfig, ErrorMaxima, ErrorReport, ErrorSeries, RomStart,
};
pub use experiments::{
    beta_sweep_with, brusselator_system, build_set, convergence_table, fem_self_convergence,
    orbit_difference, resample, rom_orbit_report, run_beta_sweep, run_table1, sweep_header,
    sweep_table, table1_from_blocks, table1_orbits, table1_with_basis, ConvergenceConfig,
    ConvergenceRow, SweepConfig, SweepOutcome, SweepRow, Table1Config, Table1Result, Table1Row,
    TABLE1_BETAS, TABLE1_RS,
};
pub use fom::{fom_orbit, fom_run, fom_runs, linspace, orbit_block, FomRun, Norms};
pub use theorem1::{run_theorem1, verify_theorem1, Theorem1Config, Theorem1Report, Theorem1Row};
pub use two_param::{
    bound_table, grid_blocks, grid_params, lemma8_desk, neighbor_ratio, neighbor_ratio_by,
    run_two_param, two_param_with, GridCell, TwoParamConfig, TwoParamResult,
};
