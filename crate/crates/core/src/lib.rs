pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod operator;
pub mod problem;
pub mod quadrature;
pub mod solver;
pub mod space;

pub use error::{Error, Result};
pub use harness::{cmd_converge, cmd_run, cmd_verify, RunConfig, VerifyReport};
pub use mesh::{uniform_partition, Partition1D};
pub use problem::{linear_wave, nls, nonlinear_wave, problem_by_label, MultisymplecticProblem};
pub use solver::{Discretisation, RunOutcome, SchemeVariant, SlabRecord, SolverConfig, Trajectory};
pub use space::{Continuity, SpatialSpace};
