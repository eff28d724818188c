//! Default clustering in large pools of interacting names on a weighted
//! directed graph.
//!
//! The engine has three legs:
//!
//! * [`particle`] — finite-pool simulation of the interacting intensity
//!   system: Euler–Maruyama paths for every name, exponential-clock default
//!   detection and contagion jumps routed through the network.
//! * [`meanfield`] — the large-pool limit computed through a truncated
//!   moment hierarchy per type, driven by the common Brownian factor and
//!   Monte-Carlo'd over its paths.
//! * [`oracle`] — an independent weighted McKean–Vlasov particle solver for
//!   the same limit, used to cross-check the moment solver, plus the
//!   finite-pool vs. limit convergence harness.
//!
//! [`network`] handles the adjacency matrix side: SVD, best low-rank
//! approximations with error certificates, and extraction of the discrete
//! type distributions that feed the solvers. [`model`] holds the shared
//! configuration types and the validation of the model's standing
//! assumptions.

pub mod error;
pub mod io;
pub mod meanfield;
pub mod model;
pub mod network;
pub mod oracle;
pub mod particle;
pub mod path;
pub mod rng;
pub mod scenario;
pub mod stats;

pub use error::Error;
pub use meanfield::{LimitOutput, MomentState, MomentSystem, TrialPath};
pub use model::{
    AssumptionBounds, ClosureRule, DriftSpec, NameType, ScenarioConfig, SolverControls,
    SystematicRisk, ValidationReport,
};
pub use network::{AdjacencyMatrix, LowRankError, NetworkSvd, TypeDistribution};
pub use particle::PathOutput;
pub use path::{DefaultEvent, GridCurves};
pub use scenario::ScenarioFile;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
