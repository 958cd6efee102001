//! Shared fixtures for the benchmark targets.

use vigpi_core::instances::{build_grid_world_default, random_layered_mdp};
use vigpi_core::mdp::time_augment;
use vigpi_core::FiniteMdp;

/// The random layered instance family used by the engine suites.
pub fn layered_instance(seed: u64) -> FiniteMdp {
    random_layered_mdp(4, 5, 3, seed).expect("valid dimensions")
}

/// The default grid world, time-augmented to a 425-state DAG.
pub fn augmented_grid() -> FiniteMdp {
    time_augment(&build_grid_world_default(), 16).expect("stationary input")
}
