//! Numerical laboratory for the periodic two-dimensional Savage–Hutter system with
//! Coulomb friction: finite-volume solver, subsolution workbench and diagnostics.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod friction;
pub mod grid;
pub mod scenario;
pub mod snapshot;
pub mod solver;
pub mod spectral;
pub mod workbench;

pub use error::{Error, Result};
pub use friction::{
    coulomb_selection, friction_coefficient_field, friction_shrink, Coefficient, FrictionLaw,
    FrictionParams,
};
pub use grid::{
    integrate, lambda_max_traceless, tensor_apply, ScalarField, SpaceTimeField, SymTraceless2,
    SymTracelessField, TorusGrid, VectorField,
};
pub use scenario::{parse_scenario, parse_scenario_str, ScenarioConfig};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot};
pub use solver::{
    simulate, simulate_with, step, Force, Scenario, SimulateOptions, State, Trajectory,
};
pub use spectral::{
    helmholtz_decompose, korn_solve, poisson_solve, spectral_div, spectral_grad,
    spectral_laplacian, HelmholtzParts, Spectral,
};
pub use workbench::{
    energy_gap, find_lambda0, improvement_step, oscillatory_pair, subsolution_certificate,
    SubsolutionState, WorkbenchBase, WorkbenchData,
};
