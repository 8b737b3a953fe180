//! Shared fixtures for the benchmarks.

use nalgebra::DVector;
use pod_param::analysis::{brusselator_system, fom_run};
use pod_param::snapshots::{build_set_new_1p, SnapshotBlock};
use pod_param::{OrbitConfig, ParamPoint, SemidiscreteSystem};

pub fn system(n_elems: usize) -> SemidiscreteSystem {
    brusselator_system(n_elems, 1.0, 0.01).expect("valid model")
}

/// Orbit blocks at two values of beta.
pub fn blocks(sys: &SemidiscreteSystem, m: usize) -> Vec<SnapshotBlock> {
    [3.25, 3.75]
        .iter()
        .map(|&b| {
            fom_run(sys, ParamPoint::one(b), m, &OrbitConfig::default())
                .expect("orbit converges")
                .block
        })
        .collect()
}

pub fn set(
    blocks: &[SnapshotBlock],
    sys: &SemidiscreteSystem,
) -> pod_param::snapshots::SnapshotSet {
    build_set_new_1p(blocks)
        .expect("valid blocks")
        .with_mesh(sys.space())
}

pub fn state(block: &SnapshotBlock) -> DVector<f64> {
    block.states[0].coeffs().clone()
}
