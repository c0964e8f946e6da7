//! Closed-form solutions of the adaptive safety-filter QP
//!
//! ```text
//!   min  (p_s/2)(s − 1)² + ½‖u − u_des‖²
//!   s.t. L_fB + L_gB·u + s·α(B) ≥ 0,   A·u + b ≤ 0
//! ```
//!
//! which jointly optimizes the control and a relaxation coefficient `s`.
//! Whenever `α(B(x)) ≠ 0` the program is feasible regardless of the input
//! limits: `s` absorbs whatever the saturated control cannot deliver. On the
//! barrier boundary (`α(B) = 0` exactly) the relaxation has no effect and the
//! program degenerates to the standard one; if that is infeasible the state
//! is reported as degenerate-infeasible — the regime where `s*` blows up as
//! the boundary is approached.
//!
//! `s` is unconstrained in sign, matching the program above; negative optima
//! are reported as-is. Values with `|s*|` above [`crate::tol::S_FLAG`] are
//! flagged near-degenerate rather than clamped.

use nalgebra::{DMatrix, DVector};

use crate::explicit::{
    self, has_full_row_rank, padded_mu, ActiveSetLabel, CaseTag, Infeasibility, PointSolution,
    SolveError, SolveOutcome,
};
use crate::model::{lie_derivatives, ConstraintData, ControlPolytope, ProblemSpec};
use crate::partition::{enumerate_active_sets, prune_rank_deficient};
use crate::tol;

/// Optimum of the adaptive filter QP at one state.
#[derive(Clone, Debug)]
pub struct AdaptiveSolution {
    pub base: PointSolution,
    /// `|s*|` exceeds the reporting cap (blow-up regime near the boundary).
    pub near_degenerate: bool,
    /// The state has `B(x) < 0`.
    pub outside_safe_set: bool,
}

impl AdaptiveSolution {
    pub fn u_star(&self) -> &DVector<f64> {
        &self.base.u_star
    }

    pub fn s_star(&self) -> f64 {
        self.base.s_star
    }

    fn from_point(base: PointSolution, b_val: f64) -> Self {
        let near_degenerate = base.s_star.abs() > tol::S_FLAG;
        Self { base, near_degenerate, outside_safe_set: b_val < 0.0 }
    }
}

#[derive(Clone, Debug)]
pub enum AdOutcome {
    Solved(AdaptiveSolution),
    /// `α(B(x)) = 0` and no admissible input satisfies the barrier row, so
    /// not even an unbounded relaxation helps.
    DegenerateInfeasible(Infeasibility),
}

impl AdOutcome {
    pub fn solution(&self) -> Option<&AdaptiveSolution> {
        match self {
            AdOutcome::Solved(sol) => Some(sol),
            AdOutcome::DegenerateInfeasible(_) => None,
        }
    }

    pub fn is_degenerate_infeasible(&self) -> bool {
        matches!(self, AdOutcome::DegenerateInfeasible(_))
    }
}

/// Case 1: barrier row inactive at `(u_des, s = 1)`; nothing to relax.
pub fn solve_case1(cd: &ConstraintData, u_des: &DVector<f64>) -> Result<AdaptiveSolution, SolveError> {
    let slack = cd.slack_at(u_des);
    if slack < 0.0 {
        return Err(SolveError::PreconditionViolated { slack });
    }
    Ok(AdaptiveSolution::from_point(
        PointSolution {
            u_star: u_des.clone(),
            lambda: 0.0,
            mu: DVector::zeros(0),
            s_star: 1.0,
            case_tag: CaseTag::Case1,
            active_set: ActiveSetLabel::inactive(),
        },
        cd.b_val,
    ))
}

/// Case 2: barrier row active, limits inactive.
///
/// With `F = −L_fB`, `G = −L_gB`, `Λ = −α(B)`:
///
/// ```text
///   λ  = p_s(Λ + G·u_des + F) / (p_s·GGᵀ + Λ²)
///   u* = u_des − Gᵀλ
///   s* = 1 − (Λ/p_s)·λ
/// ```
pub fn solve_case2(
    cd: &ConstraintData,
    u_des: &DVector<f64>,
    p_s: f64,
) -> Result<AdaptiveSolution, SolveError> {
    let g = cd.neg_lgb();
    let lam_coef = cd.neg_alpha();
    let denominator = p_s * g.norm_squared() + lam_coef * lam_coef;
    if denominator < tol::RANK * tol::RANK {
        return Err(SolveError::DegenerateRow);
    }
    let violation = cd.neg_lfb() + (&g * u_des)[0] + lam_coef;
    let lambda = p_s * violation / denominator;
    let u_star = u_des - g.transpose() * lambda;
    let s_star = 1.0 - lam_coef / p_s * lambda;
    Ok(AdaptiveSolution::from_point(
        PointSolution {
            u_star,
            lambda,
            mu: DVector::zeros(0),
            s_star,
            case_tag: CaseTag::Case2,
            active_set: ActiveSetLabel::cbf_only(),
        },
        cd.b_val,
    ))
}

/// Case 3: barrier row and the limit rows in `index_set` active. Solves the
/// stacked KKT equalities over `(s, u, λ, μ_I)`:
///
/// ```text
///   p_s·s + Λλ = p_s
///   u + Gᵀλ + A_Iᵀμ = u_des
///   Λ·s + G·u = −F
///   A_I·u = −b_I
/// ```
pub fn solve_case3(
    cd: &ConstraintData,
    u_des: &DVector<f64>,
    limits: &ControlPolytope,
    index_set: &[usize],
    p_s: f64,
) -> Result<AdaptiveSolution, SolveError> {
    let m = u_des.len();
    let k = index_set.len();
    let g = cd.neg_lgb();
    let lam_coef = cd.neg_alpha();

    let a_i = DMatrix::from_fn(k, m, |r, c| limits.a[(index_set[r], c)]);
    if k > 0 && !has_full_row_rank(&a_i) {
        return Err(SolveError::RankDeficient);
    }

    let dim = 1 + m + 1 + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    kkt[(0, 0)] = p_s;
    kkt[(0, 1 + m)] = lam_coef;
    rhs[0] = p_s;
    for i in 0..m {
        kkt[(1 + i, 1 + i)] = 1.0;
        kkt[(1 + i, 1 + m)] = g[i];
        kkt[(1 + m, 1 + i)] = g[i];
        rhs[1 + i] = u_des[i];
    }
    kkt[(1 + m, 0)] = lam_coef;
    rhs[1 + m] = -cd.neg_lfb();
    for (r, &i) in index_set.iter().enumerate() {
        for c in 0..m {
            kkt[(1 + c, 1 + m + 1 + r)] = limits.a[(i, c)];
            kkt[(1 + m + 1 + r, 1 + c)] = limits.a[(i, c)];
        }
        rhs[1 + m + 1 + r] = -limits.b[i];
    }

    let sol = crate::linalg::solve_refined(&kkt, &rhs).ok_or(SolveError::RankDeficient)?;
    let s_star = sol[0];
    let u_star = DVector::from_fn(m, |i, _| sol[1 + i]);
    let lambda = sol[1 + m];
    let mut mu = DVector::zeros(limits.rows());
    for (r, &i) in index_set.iter().enumerate() {
        mu[i] = sol[1 + m + 1 + r];
    }
    Ok(AdaptiveSolution::from_point(
        PointSolution {
            u_star,
            lambda,
            mu,
            s_star,
            case_tag: CaseTag::Case3(index_set.to_vec()),
            active_set: ActiveSetLabel::with_limits(index_set),
        },
        cd.b_val,
    ))
}

/// Classify a state under the adaptive program. Never reports infeasibility
/// while `α(B(x)) ≠ 0`; on the boundary itself it falls back to the standard
/// program and reports `DegenerateInfeasible` when that fails.
pub fn classify_and_solve(spec: &ProblemSpec, x: &DVector<f64>) -> Result<AdOutcome, SolveError> {
    let cd = lie_derivatives(spec, x)?;
    let u_des = spec.u_des_at(x);
    classify_constraint(&cd, &u_des, &spec.limits, spec.p_s)
}

/// Classification on pre-evaluated constraint data.
pub fn classify_constraint(
    cd: &ConstraintData,
    u_des: &DVector<f64>,
    limits: &ControlPolytope,
    p_s: f64,
) -> Result<AdOutcome, SolveError> {
    if cd.slack_at(u_des) >= 0.0 {
        let mut sol = solve_case1(cd, u_des).expect("slack checked");
        sol.base.mu = DVector::zeros(limits.rows());
        return Ok(AdOutcome::Solved(sol));
    }

    if cd.alpha_b == 0.0 {
        // The relaxation multiplies a zero: the program is exactly the
        // standard one and s stays at 1.
        return Ok(match explicit::classify_constraint(cd, u_des, limits) {
            SolveOutcome::Solved(base) => {
                let b_val = cd.b_val;
                AdOutcome::Solved(AdaptiveSolution::from_point(base, b_val))
            }
            SolveOutcome::Infeasible(mut cert) => {
                cert.reason =
                    "relaxation is inert on the barrier boundary and the standard program is infeasible"
                        .to_string();
                AdOutcome::DegenerateInfeasible(cert)
            }
        });
    }

    let mut sol = solve_case2(cd, u_des, p_s)?;
    if limits.contains(&sol.base.u_star, tol::PRIMAL) {
        sol.base.mu = DVector::zeros(limits.rows());
        return Ok(AdOutcome::Solved(sol));
    }

    let m = u_des.len();
    let candidates = enumerate_active_sets(limits.rows()).unwrap_or_default();
    let candidates: Vec<Vec<usize>> =
        candidates.into_iter().filter(|set| set.len() <= m).collect();
    for set in prune_rank_deficient(limits, &candidates) {
        let Ok(sol) = solve_case3(cd, u_des, limits, &set, p_s) else { continue };
        if sol.base.lambda < tol::DUAL_SIGN {
            continue;
        }
        if set.iter().any(|&i| sol.base.mu[i] < tol::DUAL_SIGN) {
            continue;
        }
        let inactive_ok = (0..limits.rows())
            .filter(|i| !set.contains(i))
            .all(|i| limits.row_residual(i, &sol.base.u_star) <= tol::PRIMAL);
        if inactive_ok {
            return Ok(AdOutcome::Solved(sol));
        }
    }

    Err(SolveError::NoConsistentActiveSet)
}

/// Max-norm KKT violation of the adaptive program at a candidate solution;
/// includes the extra stationarity row `p_s·s − p_s + Λλ` for the relaxation
/// coefficient. As in [`explicit::kkt_residual`], multiplier-weighted rows
/// are measured relative to `max(1, λ, ‖μ‖∞)`; near the boundary the
/// multipliers grow like 1/α(B)² and an absolute product would only measure
/// round-off amplification, not solution quality.
pub fn kkt_residual(spec: &ProblemSpec, x: &DVector<f64>, sol: &AdaptiveSolution) -> f64 {
    let Ok(cd) = lie_derivatives(spec, x) else {
        return f64::INFINITY;
    };
    let u_des = spec.u_des_at(x);
    let limits = &spec.limits;
    let p_s = spec.p_s;
    let g = cd.neg_lgb();
    let lam_coef = cd.neg_alpha();
    let point = &sol.base;
    let row_value = cd.neg_lfb() + (&g * &point.u_star)[0] + point.s_star * lam_coef;

    let mu = padded_mu(&point.mu, limits.rows());
    let scale = 1.0f64
        .max(point.lambda.abs())
        .max(if mu.is_empty() { 0.0 } else { mu.amax() });
    let stationarity_u = (&point.u_star - &u_des
        + g.transpose() * point.lambda
        + limits.a.transpose() * &mu)
        .amax();
    let stationarity_s = (p_s * point.s_star - p_s + lam_coef * point.lambda).abs();

    let mut residual = (stationarity_u / scale).max(stationarity_s / scale);
    residual = residual.max((point.lambda * row_value).abs() / scale);
    residual = residual.max(-point.lambda.min(0.0));
    residual = residual.max(row_value.max(0.0));
    for i in 0..limits.rows() {
        let r = limits.row_residual(i, &point.u_star);
        residual = residual.max((mu[i] * r).abs() / scale);
        residual = residual.max(-mu[i].min(0.0));
        residual = residual.max(r.max(0.0));
    }
    residual
}
