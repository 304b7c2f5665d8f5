//! Finite-population imitation dynamics on the discrete simplex:
//! kernels, quasi-stationary distributions, mean-field flows, large-deviation
//! costs and chain-recurrence atlases.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod flow;
pub mod kernel;
pub mod ldp;
pub mod protocols;
pub mod qsd;
pub mod recurrence;
pub mod report;
pub mod rng;
pub mod simplex;
pub mod sparse;

pub use kernel::TransitionKernel;
pub use protocols::{PayoffGame, RevisionProtocol};
pub use qsd::QsdSolution;
pub use simplex::SimplexGrid;
