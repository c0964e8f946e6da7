//! Brute-force ground truth for the closed forms.
//!
//! Solves a strictly convex dense QP by enumerating every subset of the
//! inequality rows as a candidate active set, solving the corresponding
//! equality-KKT system and keeping the feasible, sign-consistent candidate
//! with the smallest objective. Strong duality makes the accepted candidate
//! the global optimum. Exponential in the row count and entirely independent
//! of the closed-form solution paths — that is the point.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::adaptive::{AdOutcome, AdaptiveSolution};
use crate::explicit::{ActiveSetLabel, CaseTag, Infeasibility, PointSolution, SolveOutcome};
use crate::model::{lie_derivatives, ModelError, ProblemSpec};
use crate::tol;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("subset enumeration supports at most 20 rows, got {count}")]
    TooManyRows { count: usize },
    #[error("objective matrix is not symmetric")]
    NotSymmetric,
    #[error("objective matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {context}")]
    Dimension { context: String },
    #[error("no active set accepted although a feasible point exists")]
    Inconsistent,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `min ½ zᵀHz + cᵀz  s.t.  M·z + v ≤ 0` with `H ≻ 0`.
#[derive(Clone, Debug)]
pub struct DenseQP {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub m_ineq: DMatrix<f64>,
    pub v_ineq: DVector<f64>,
}

impl DenseQP {
    pub fn new(
        h: DMatrix<f64>,
        c: DVector<f64>,
        m_ineq: DMatrix<f64>,
        v_ineq: DVector<f64>,
    ) -> Result<Self, OracleError> {
        let d = h.nrows();
        if h.ncols() != d || c.len() != d || m_ineq.ncols() != d || m_ineq.nrows() != v_ineq.len() {
            return Err(OracleError::Dimension {
                context: format!(
                    "H {}x{}, c {}, M {}x{}, v {}",
                    h.nrows(),
                    h.ncols(),
                    c.len(),
                    m_ineq.nrows(),
                    m_ineq.ncols(),
                    v_ineq.len()
                ),
            });
        }
        let sym_err = (&h - h.transpose()).amax();
        if sym_err > 1e-12 * (1.0 + h.amax()) {
            return Err(OracleError::NotSymmetric);
        }
        if h.clone().cholesky().is_none() {
            return Err(OracleError::NotPositiveDefinite);
        }
        Ok(Self { h, c, m_ineq, v_ineq })
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.h * z)[0] + self.c.dot(z)
    }

    pub fn row_residual(&self, i: usize, z: &DVector<f64>) -> f64 {
        (self.m_ineq.row(i) * z)[0] + self.v_ineq[i]
    }
}

#[derive(Clone, Debug)]
pub struct BruteForceSolution {
    pub z: DVector<f64>,
    /// One multiplier per inequality row, zero at inactive rows.
    pub multipliers: DVector<f64>,
    /// Zero-based active row indices, sorted.
    pub active: Vec<usize>,
    pub objective: f64,
    /// Subsets skipped because their equality-KKT system was singular.
    pub skipped_singular: usize,
}

#[derive(Clone, Debug)]
pub enum BruteForceOutcome {
    Solved(BruteForceSolution),
    Infeasible,
}

/// All subsets of `0..q` ordered by cardinality then lexicographically,
/// starting with the empty set. Ties in the objective therefore resolve to
/// the smallest active set, matching the classifier precedence.
fn subsets_in_precedence_order(q: usize) -> Vec<Vec<usize>> {
    let mut subsets = vec![Vec::new()];
    for k in 1..=q {
        subsets.extend(crate::model::index_combinations(q, k));
    }
    subsets
}

/// Enumerate all active subsets and return the best KKT-consistent candidate.
pub fn solve_bruteforce(qp: &DenseQP) -> Result<BruteForceOutcome, OracleError> {
    let q = qp.m_ineq.nrows();
    let d = qp.h.nrows();
    if q > 20 {
        return Err(OracleError::TooManyRows { count: q });
    }

    let mut skipped = 0usize;
    let mut best: Option<(f64, DVector<f64>, DVector<f64>, Vec<usize>)> = None;

    for subset in subsets_in_precedence_order(q) {
        let k = subset.len();
        if k > d {
            // more equality rows than variables cannot be independent
            skipped += 1;
            continue;
        }
        let mut kkt = DMatrix::zeros(d + k, d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&qp.h);
        for (r, &row) in subset.iter().enumerate() {
            for col in 0..d {
                kkt[(col, d + r)] = qp.m_ineq[(row, col)];
                kkt[(d + r, col)] = qp.m_ineq[(row, col)];
            }
        }
        let mut rhs = DVector::zeros(d + k);
        for i in 0..d {
            rhs[i] = -qp.c[i];
        }
        for (r, &row) in subset.iter().enumerate() {
            rhs[d + r] = -qp.v_ineq[row];
        }

        let Some(w) = crate::linalg::solve_refined(&kkt, &rhs) else {
            skipped += 1;
            continue;
        };

        let z = DVector::from_fn(d, |i, _| w[i]);
        let nu = DVector::from_fn(k, |i, _| w[d + i]);
        if nu.iter().any(|&n| n < tol::DUAL_SIGN) {
            continue;
        }
        let inactive_ok = (0..q)
            .filter(|i| !subset.contains(i))
            .all(|i| qp.row_residual(i, &z) <= tol::PRIMAL);
        if !inactive_ok {
            continue;
        }

        let objective = qp.objective(&z);
        let better = match &best {
            None => true,
            Some((obj, ..)) => objective < obj - tol::OBJECTIVE_TIE,
        };
        if better {
            let mut multipliers = DVector::zeros(q);
            for (r, &row) in subset.iter().enumerate() {
                multipliers[row] = nu[r];
            }
            best = Some((objective, z, multipliers, subset));
        }
    }

    match best {
        Some((objective, z, multipliers, active)) => Ok(BruteForceOutcome::Solved(BruteForceSolution {
            z,
            multipliers,
            active,
            objective,
            skipped_singular: skipped,
        })),
        None => {
            if find_feasible_point(qp).is_some() {
                Err(OracleError::Inconsistent)
            } else {
                Ok(BruteForceOutcome::Infeasible)
            }
        }
    }
}

/// Try to produce any feasible point: the unconstrained minimizer, the
/// origin, and every vertex obtained from full-rank `d`-subsets of rows.
fn find_feasible_point(qp: &DenseQP) -> Option<DVector<f64>> {
    let d = qp.h.nrows();
    let q = qp.m_ineq.nrows();
    let feasible = |z: &DVector<f64>| (0..q).all(|i| qp.row_residual(i, z) <= tol::PRIMAL);

    let origin = DVector::zeros(d);
    if feasible(&origin) {
        return Some(origin);
    }
    if let Some(unconstrained) = qp.h.clone().cholesky().map(|ch| ch.solve(&(-&qp.c))) {
        if feasible(&unconstrained) {
            return Some(unconstrained);
        }
    }
    if q >= d {
        for combo in crate::model::index_combinations(q, d) {
            let rows = DMatrix::from_fn(d, d, |r, c| qp.m_ineq[(combo[r], c)]);
            let rhs = DVector::from_fn(d, |r, _| -qp.v_ineq[combo[r]]);
            let Some(z) = rows.full_piv_lu().solve(&rhs) else { continue };
            if z.iter().all(|c| c.is_finite()) && feasible(&z) {
                return Some(z);
            }
        }
    }
    None
}

/// Assemble and solve the standard filter QP at one state.
pub fn solve_standard(spec: &ProblemSpec, x: &DVector<f64>) -> Result<SolveOutcome, OracleError> {
    let cd = lie_derivatives(spec, x)?;
    let u_des = spec.u_des_at(x);
    let m = spec.input_dim();
    let p = spec.limit_count();

    let g = cd.neg_lgb();
    let mut rows = DMatrix::zeros(1 + p, m);
    rows.row_mut(0).copy_from(&g);
    rows.view_mut((1, 0), (p, m)).copy_from(&spec.limits.a);
    let mut offsets = DVector::zeros(1 + p);
    offsets[0] = cd.neg_lfb() + cd.neg_alpha();
    offsets.rows_mut(1, p).copy_from(&spec.limits.b);

    let qp = DenseQP::new(DMatrix::identity(m, m), -u_des.clone(), rows, offsets)?;
    match solve_bruteforce(&qp)? {
        BruteForceOutcome::Solved(bfs) => {
            let cbf_active = bfs.active.contains(&0);
            let limit_indices: Vec<usize> =
                bfs.active.iter().filter(|&&i| i > 0).map(|&i| i - 1).collect();
            if !cbf_active && !limit_indices.is_empty() {
                return Err(OracleError::Inconsistent);
            }
            let case_tag = match (cbf_active, limit_indices.is_empty()) {
                (false, _) => CaseTag::Case1,
                (true, true) => CaseTag::Case2,
                (true, false) => CaseTag::Case3(limit_indices.clone()),
            };
            let active_set = if cbf_active {
                ActiveSetLabel::with_limits(&limit_indices)
            } else {
                ActiveSetLabel::inactive()
            };
            let mu = DVector::from_fn(p, |i, _| bfs.multipliers[1 + i]);
            Ok(SolveOutcome::Solved(PointSolution {
                u_star: bfs.z,
                lambda: bfs.multipliers[0],
                mu,
                s_star: 1.0,
                case_tag,
                active_set,
            }))
        }
        BruteForceOutcome::Infeasible => Ok(SolveOutcome::Infeasible(Infeasibility {
            max_slack: cd.max_slack_over(&spec.limits),
            reason: "oracle: no active subset is KKT-consistent and no feasible vertex exists"
                .to_string(),
        })),
    }
}

/// Assemble and solve the adaptive filter QP at one state. The stacked
/// variable is `z = (s, u)` with block objective `diag(p_s, I)`.
pub fn solve_adaptive(spec: &ProblemSpec, x: &DVector<f64>) -> Result<AdOutcome, OracleError> {
    let cd = lie_derivatives(spec, x)?;
    let u_des = spec.u_des_at(x);
    let m = spec.input_dim();
    let p = spec.limit_count();
    let p_s = spec.p_s;
    let g = cd.neg_lgb();

    let mut h = DMatrix::identity(1 + m, 1 + m);
    h[(0, 0)] = p_s;
    let mut c = DVector::zeros(1 + m);
    c[0] = -p_s;
    for i in 0..m {
        c[1 + i] = -u_des[i];
    }
    let mut rows = DMatrix::zeros(1 + p, 1 + m);
    rows[(0, 0)] = cd.neg_alpha();
    for i in 0..m {
        rows[(0, 1 + i)] = g[i];
    }
    rows.view_mut((1, 1), (p, m)).copy_from(&spec.limits.a);
    let mut offsets = DVector::zeros(1 + p);
    offsets[0] = cd.neg_lfb();
    offsets.rows_mut(1, p).copy_from(&spec.limits.b);

    let qp = DenseQP::new(h, c, rows, offsets)?;
    match solve_bruteforce(&qp)? {
        BruteForceOutcome::Solved(bfs) => {
            let cbf_active = bfs.active.contains(&0);
            let limit_indices: Vec<usize> =
                bfs.active.iter().filter(|&&i| i > 0).map(|&i| i - 1).collect();
            if !cbf_active && !limit_indices.is_empty() {
                return Err(OracleError::Inconsistent);
            }
            let case_tag = match (cbf_active, limit_indices.is_empty()) {
                (false, _) => CaseTag::Case1,
                (true, true) => CaseTag::Case2,
                (true, false) => CaseTag::Case3(limit_indices.clone()),
            };
            let active_set = if cbf_active {
                ActiveSetLabel::with_limits(&limit_indices)
            } else {
                ActiveSetLabel::inactive()
            };
            let s_star = bfs.z[0];
            let u_star = DVector::from_fn(m, |i, _| bfs.z[1 + i]);
            let mu = DVector::from_fn(p, |i, _| bfs.multipliers[1 + i]);
            let base = PointSolution {
                u_star,
                lambda: bfs.multipliers[0],
                mu,
                s_star,
                case_tag,
                active_set,
            };
            Ok(AdOutcome::Solved(AdaptiveSolution {
                near_degenerate: s_star.abs() > tol::S_FLAG,
                outside_safe_set: cd.b_val < 0.0,
                base,
            }))
        }
        BruteForceOutcome::Infeasible => Ok(AdOutcome::DegenerateInfeasible(Infeasibility {
            max_slack: cd.max_slack_over(&spec.limits),
            reason: "oracle: relaxed program infeasible (barrier boundary with hopeless row)"
                .to_string(),
        })),
    }
}
