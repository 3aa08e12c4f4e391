//! Lower bounds for Euler-discretised linear-convex control problems built
//! from maxima of affine functions, refined along simulated trajectories, and
//! Monte-Carlo upper bounds from the induced feedback policy.

pub mod bellman;
pub mod bounds;
pub mod config;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod presets;
pub mod report;
pub mod rng;
pub mod solver;
pub mod subsolution;

pub use bellman::{ArgminMode, BellmanError, CutSample};
pub use bounds::{ConvergenceRecord, EvalConfig, GapRow, UpperEstimate};
pub use config::{parse_config, to_config_text, ConfigError, Experiment, Overrides};
pub use experiment::{run_experiment, RunOptions};
pub use linalg::Matrix;
pub use model::{ConvexQuadratic, Dims, InitialLaw, LinearConvexProblem, NoiseModel, ValidationReport};
pub use oracle::{grid_value_iteration, radial_oracle, GridSpec, OracleError, ValueTable};
pub use solver::{run, RunOutput, SolveError, Solver, SolverConfig, Trajectory};
pub use subsolution::{Hyperplane, StageCuts, SubsolutionStack};
