//! Closed-form solutions of the standard safety-filter QP
//!
//! ```text
//!   min ½‖u − u_des‖²  s.t.  L_fB + L_gB·u + α(B) ≥ 0,  A·u + b ≤ 0
//! ```
//!
//! split by which constraints are active: case 1 (barrier row inactive,
//! `u* = u_des`), case 2 (barrier row active, limits inactive) and case 3
//! (barrier row plus an index set of limit rows active). Classification tries
//! the cases in that order, index sets by ascending cardinality then
//! lexicographic, so states on region boundaries (zero multipliers) land in
//! the smallest active set. The same precedence is used by the oracle, which
//! keeps labels comparable.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{lie_derivatives, ConstraintData, ControlPolytope, ModelError, ProblemSpec};
use crate::partition::{enumerate_active_sets, prune_rank_deficient};
use crate::tol;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("barrier constraint violated at the nominal control (slack {slack:.6e})")]
    PreconditionViolated { slack: f64 },
    #[error("barrier constraint gradient vanishes (|L_gB| = {norm:.3e})")]
    DegenerateGradient { norm: f64 },
    #[error("active rows are rank deficient at the working tolerance")]
    RankDeficient,
    #[error("barrier row and relaxation are both degenerate at this state")]
    DegenerateRow,
    #[error("no KKT-consistent active set found")]
    NoConsistentActiveSet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which constraints hold with equality at the optimum; identifies the
/// critical region a state belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActiveSetLabel {
    pub cbf_active: bool,
    /// Zero-based limit-row indices, strictly increasing.
    pub limit_indices: Vec<usize>,
}

impl ActiveSetLabel {
    pub fn inactive() -> Self {
        Self { cbf_active: false, limit_indices: Vec::new() }
    }

    pub fn cbf_only() -> Self {
        Self { cbf_active: true, limit_indices: Vec::new() }
    }

    pub fn with_limits(indices: &[usize]) -> Self {
        let mut limit_indices = indices.to_vec();
        limit_indices.sort_unstable();
        limit_indices.dedup();
        Self { cbf_active: true, limit_indices }
    }

    /// Compact form used in CSV exports: `-` (all inactive), `b` (barrier row
    /// only) or `b+1.3` (barrier row plus one-based limit rows 1 and 3).
    pub fn compact(&self) -> String {
        if !self.cbf_active {
            return "-".to_string();
        }
        if self.limit_indices.is_empty() {
            return "b".to_string();
        }
        let idx: Vec<String> = self.limit_indices.iter().map(|i| (i + 1).to_string()).collect();
        format!("b+{}", idx.join("."))
    }

    /// Long form used in census reports: `cbf-inactive`, `cbf-only`,
    /// `cbf+[1,3]`.
    pub fn descriptive(&self) -> String {
        if !self.cbf_active {
            return "cbf-inactive".to_string();
        }
        if self.limit_indices.is_empty() {
            return "cbf-only".to_string();
        }
        let idx: Vec<String> = self.limit_indices.iter().map(|i| (i + 1).to_string()).collect();
        format!("cbf+[{}]", idx.join(","))
    }
}

impl fmt::Display for ActiveSetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.compact())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CaseTag {
    /// Barrier row inactive, `u* = u_des`.
    Case1,
    /// Barrier row active, all limits inactive.
    Case2,
    /// Barrier row active plus the given (zero-based) limit rows.
    Case3(Vec<usize>),
}

impl fmt::Display for CaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseTag::Case1 => f.write_str("case1"),
            CaseTag::Case2 => f.write_str("case2"),
            CaseTag::Case3(_) => f.write_str("case3"),
        }
    }
}

/// Optimum of the filter QP at one state.
#[derive(Clone, Debug)]
pub struct PointSolution {
    pub u_star: DVector<f64>,
    /// Barrier-row multiplier, ≥ 0.
    pub lambda: f64,
    /// Limit-row multipliers, zero at inactive rows.
    pub mu: DVector<f64>,
    /// Relaxation coefficient; fixed to 1 for standard solutions.
    pub s_star: f64,
    pub case_tag: CaseTag,
    pub active_set: ActiveSetLabel,
}

/// Certificate that no admissible input satisfies the barrier row.
#[derive(Clone, Debug)]
pub struct Infeasibility {
    /// Largest barrier-row slack achievable over the input polytope (< 0).
    pub max_slack: f64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub enum SolveOutcome {
    Solved(PointSolution),
    Infeasible(Infeasibility),
}

impl SolveOutcome {
    pub fn solution(&self) -> Option<&PointSolution> {
        match self {
            SolveOutcome::Solved(sol) => Some(sol),
            SolveOutcome::Infeasible(_) => None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, SolveOutcome::Infeasible(_))
    }
}

/// Case 1: barrier row strictly satisfied at the nominal control, which is
/// therefore optimal.
pub fn solve_case1(cd: &ConstraintData, u_des: &DVector<f64>) -> Result<PointSolution, SolveError> {
    let slack = cd.slack_at(u_des);
    if slack < 0.0 {
        return Err(SolveError::PreconditionViolated { slack });
    }
    Ok(PointSolution {
        u_star: u_des.clone(),
        lambda: 0.0,
        mu: DVector::zeros(0),
        s_star: 1.0,
        case_tag: CaseTag::Case1,
        active_set: ActiveSetLabel::inactive(),
    })
}

/// Case 2: barrier row active, limits inactive. The optimum is the projection
/// of `u_des` onto the barrier-row hyperplane.
pub fn solve_case2(cd: &ConstraintData, u_des: &DVector<f64>) -> Result<PointSolution, SolveError> {
    let g = cd.neg_lgb();
    let gg = g.norm_squared();
    if gg.sqrt() < tol::RANK {
        return Err(SolveError::DegenerateGradient { norm: gg.sqrt() });
    }
    let violation = cd.neg_lfb() + (&g * u_des)[0] + cd.neg_alpha();
    let lambda = violation / gg;
    let u_star = u_des - g.transpose() * lambda;
    Ok(PointSolution {
        u_star,
        lambda,
        mu: DVector::zeros(0),
        s_star: 1.0,
        case_tag: CaseTag::Case2,
        active_set: ActiveSetLabel::cbf_only(),
    })
}

/// Case 3: barrier row and the limit rows in `index_set` active. Solves the
/// stacked KKT equalities
///
/// ```text
///   u − u_des + Gᵀλ + A_Iᵀμ = 0,   G·u = −F − Λ,   A_I·u = −b_I
/// ```
///
/// with a dense factorization instead of the eliminated projector form; the
/// projector form is kept as an equivalence check in the tests.
pub fn solve_case3(
    cd: &ConstraintData,
    u_des: &DVector<f64>,
    limits: &ControlPolytope,
    index_set: &[usize],
) -> Result<PointSolution, SolveError> {
    let m = u_des.len();
    let k = index_set.len();
    let g = cd.neg_lgb();
    if g.norm() < tol::RANK {
        return Err(SolveError::DegenerateGradient { norm: g.norm() });
    }

    // The stacked equality rows [G; A_I] must have full row rank, otherwise
    // the multiplier split is not determined.
    let mut rows = DMatrix::zeros(1 + k, m);
    rows.row_mut(0).copy_from(&g);
    for (r, &i) in index_set.iter().enumerate() {
        rows.row_mut(1 + r).copy_from(&limits.a.row(i));
    }
    if !has_full_row_rank(&rows) {
        return Err(SolveError::RankDeficient);
    }

    let dim = m + 1 + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for i in 0..m {
        kkt[(i, i)] = 1.0;
        kkt[(i, m)] = g[i];
        kkt[(m, i)] = g[i];
        rhs[i] = u_des[i];
    }
    for (r, &i) in index_set.iter().enumerate() {
        for c in 0..m {
            kkt[(c, m + 1 + r)] = limits.a[(i, c)];
            kkt[(m + 1 + r, c)] = limits.a[(i, c)];
        }
        rhs[m + 1 + r] = -limits.b[i];
    }
    rhs[m] = -cd.neg_lfb() - cd.neg_alpha();

    let sol = crate::linalg::solve_refined(&kkt, &rhs).ok_or(SolveError::RankDeficient)?;
    let u_star = DVector::from_fn(m, |i, _| sol[i]);
    let lambda = sol[m];
    let mut mu = DVector::zeros(limits.rows());
    for (r, &i) in index_set.iter().enumerate() {
        mu[i] = sol[m + 1 + r];
    }
    Ok(PointSolution {
        u_star,
        lambda,
        mu,
        s_star: 1.0,
        case_tag: CaseTag::Case3(index_set.to_vec()),
        active_set: ActiveSetLabel::with_limits(index_set),
    })
}

pub(crate) fn has_full_row_rank(m: &DMatrix<f64>) -> bool {
    if m.nrows() > m.ncols() {
        return false;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.max();
    largest > 0.0 && sv.min() > tol::RANK * largest
}

/// Classify a state into its critical region and return the closed-form
/// optimum, or an infeasibility certificate when no admissible input
/// satisfies the barrier row.
pub fn classify_and_solve(spec: &ProblemSpec, x: &DVector<f64>) -> Result<SolveOutcome, SolveError> {
    let cd = lie_derivatives(spec, x)?;
    let u_des = spec.u_des_at(x);
    Ok(classify_constraint(&cd, &u_des, &spec.limits))
}

/// Classification on pre-evaluated constraint data.
pub fn classify_constraint(
    cd: &ConstraintData,
    u_des: &DVector<f64>,
    limits: &ControlPolytope,
) -> SolveOutcome {
    if cd.slack_at(u_des) >= 0.0 {
        let mut sol = solve_case1(cd, u_des).expect("slack checked nonnegative");
        sol.mu = DVector::zeros(limits.rows());
        return SolveOutcome::Solved(sol);
    }

    let m = u_des.len();
    if cd.lgb.norm() < tol::RANK {
        // The barrier row does not depend on u and is violated: nothing to do.
        return SolveOutcome::Infeasible(Infeasibility {
            max_slack: cd.slack_at(u_des),
            reason: "barrier row violated and its gradient vanishes".to_string(),
        });
    }

    if let Ok(mut sol) = solve_case2(cd, u_des) {
        if limits.contains(&sol.u_star, tol::PRIMAL) {
            sol.mu = DVector::zeros(limits.rows());
            return SolveOutcome::Solved(sol);
        }
    }

    let candidates = enumerate_active_sets(limits.rows()).unwrap_or_default();
    let candidates: Vec<Vec<usize>> = candidates
        .into_iter()
        .filter(|set| set.len() < m) // with the barrier row active, ≥ m limit rows overdetermine u
        .collect();
    for set in prune_rank_deficient(limits, &candidates) {
        let Ok(sol) = solve_case3(cd, u_des, limits, &set) else { continue };
        if sol.lambda < tol::DUAL_SIGN {
            continue;
        }
        if set.iter().any(|&i| sol.mu[i] < tol::DUAL_SIGN) {
            continue;
        }
        let inactive_ok = (0..limits.rows())
            .filter(|i| !set.contains(i))
            .all(|i| limits.row_residual(i, &sol.u_star) <= tol::PRIMAL);
        if inactive_ok {
            return SolveOutcome::Solved(sol);
        }
    }

    SolveOutcome::Infeasible(Infeasibility {
        max_slack: cd.max_slack_over(limits),
        reason: "no admissible input satisfies the barrier row".to_string(),
    })
}

/// Max-norm violation of the KKT conditions at a candidate solution:
/// stationarity, complementary slackness, multiplier signs and primal
/// feasibility. Multiplier-weighted rows are measured relative to
/// `max(1, λ, ‖μ‖∞)` so the value stays meaningful in the blow-up regime
/// where multipliers reach 1/α(B)²; for multipliers below one this is the
/// plain absolute violation.
pub fn kkt_residual(spec: &ProblemSpec, x: &DVector<f64>, sol: &PointSolution) -> f64 {
    let Ok(cd) = lie_derivatives(spec, x) else {
        return f64::INFINITY;
    };
    let u_des = spec.u_des_at(x);
    let limits = &spec.limits;
    let g = cd.neg_lgb();
    let row_value = cd.neg_lfb() + (&g * &sol.u_star)[0] + cd.neg_alpha();

    let mu = padded_mu(&sol.mu, limits.rows());
    let scale = 1.0f64.max(sol.lambda.abs()).max(if mu.is_empty() { 0.0 } else { mu.amax() });
    let stationarity =
        (&sol.u_star - &u_des + g.transpose() * sol.lambda + limits.a.transpose() * &mu).amax();

    let mut residual = stationarity / scale;
    residual = residual.max((sol.lambda * row_value).abs() / scale);
    residual = residual.max(-sol.lambda.min(0.0));
    residual = residual.max(row_value.max(0.0));
    for i in 0..limits.rows() {
        let r = limits.row_residual(i, &sol.u_star);
        residual = residual.max((mu[i] * r).abs() / scale);
        residual = residual.max(-mu[i].min(0.0));
        residual = residual.max(r.max(0.0));
    }
    residual
}

pub(crate) fn padded_mu(mu: &DVector<f64>, rows: usize) -> DVector<f64> {
    if mu.len() == rows {
        mu.clone()
    } else {
        DVector::zeros(rows)
    }
}
