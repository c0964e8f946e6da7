//! Numeric gates shared across solvers. The closed forms and the oracle must
//! agree on these, otherwise region labels drift apart on boundaries.

/// Relative singular-value cutoff for full-row-rank tests.
pub const RANK: f64 = 1e-10;

/// Multipliers are accepted down to this (tiny negative) value.
pub const DUAL_SIGN: f64 = -1e-12;

/// Inactive inequality rows must be satisfied to this tolerance.
pub const PRIMAL: f64 = 1e-10;

/// Rows solved as equalities must be active to this tolerance.
pub const ACTIVE_EQ: f64 = 1e-10;

/// Objective ties in the oracle within this margin resolve to the smaller
/// active set (then lexicographic).
pub const OBJECTIVE_TIE: f64 = 1e-12;

/// Max KKT residual accepted as "solved" in grid diagnostics.
pub const KKT: f64 = 1e-8;

/// Relaxation coefficients with |s| above this are flagged near-degenerate.
pub const S_FLAG: f64 = 1e6;
