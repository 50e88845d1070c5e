//! Tree tensor network dynamical low-rank approximation of the chemical
//! master equation, with dense, stochastic and deterministic references.

pub mod dense;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod psttn;
pub mod ssa;
pub mod stepper;
pub mod tree;
pub mod ttn;

pub use dense::{CmeOperator, DenseDistribution};
pub use error::{Error, Result};
pub use grid::{LeafGrid, TruncatedStateSpace};
pub use model::{parse_model, validate_factorization, FactorAssignment, ReactionNetwork};
pub use psttn::{PsTtnIntegrator, SolverConfig};
pub use stepper::{Scheme, StepperConfig};
pub use tree::PartitionTree;
pub use ttn::TtnState;
