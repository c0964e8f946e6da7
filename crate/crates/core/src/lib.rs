//! Explicit synthesis and evaluation of piecewise safe control laws.
//!
//! A safety filter minimally modifies a nominal control so that a barrier
//! constraint `L_fB(x) + L_gB(x)·u + α(B(x)) ≥ 0` and input limits
//! `A·u + b ≤ 0` hold. Treating the state as a parameter, the filter QP has a
//! closed-form solution on each critical region of state space. This crate
//! provides:
//!
//! - [`model`]: problem data (dynamics, barrier, limits, nominal control) and
//!   per-state constraint quantities,
//! - [`explicit`]: closed forms for the standard filter QP, runtime case
//!   classification and KKT residuals,
//! - [`adaptive`]: the variant that jointly optimizes a relaxation
//!   coefficient `s` to restore feasibility under input limits,
//! - [`oracle`]: an independent brute-force active-set solver used as ground
//!   truth for every closed form,
//! - [`partition`]: active-set enumeration, rank pruning, grid classification
//!   into critical regions and CSV export,
//! - [`sim`]: fixed-step closed-loop simulation with barrier monitoring,
//! - [`config`]: the JSON problem-file format,
//! - [`presets`]: bundled demo problems.

pub mod adaptive;
pub mod config;
pub mod explicit;
mod linalg;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod presets;
pub mod sim;
pub mod tol;

pub use adaptive::{AdOutcome, AdaptiveSolution};
pub use explicit::{
    ActiveSetLabel, CaseTag, Infeasibility, PointSolution, SolveError, SolveOutcome,
};
pub use model::{
    Barrier, ClassK, ConstraintData, ControlPolytope, DomainBox, Dynamics, ModelError,
    NominalControl, ProblemSpec,
};
pub use partition::{GridClassification, Mode, RegionLabel};
pub use sim::{SimMode, SimStatus, Trajectory};
