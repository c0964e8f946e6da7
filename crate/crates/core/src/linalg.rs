//! Small dense solves shared by the closed forms and the oracle.

use nalgebra::{DMatrix, DVector};

/// Solve `a·w = rhs` by full-pivot LU with two steps of iterative
/// refinement. The KKT systems near the relaxation blow-up mix scales of
/// 1e-4 and 1e+2, and plain LU forward error there is large enough to show
/// up in primal residuals; refinement recovers it. Returns `None` when the
/// matrix is singular or the refined residual is still out of line with the
/// data scale.
pub(crate) fn solve_refined(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().full_piv_lu();
    let mut w = lu.solve(rhs)?;
    for _ in 0..2 {
        let residual = rhs - a * &w;
        let Some(correction) = lu.solve(&residual) else { break };
        w += correction;
    }
    let back = (a * &w - rhs).amax();
    let scale = 1.0 + rhs.amax() + a.amax() * w.amax();
    if !back.is_finite() || back > 1e-10 * scale {
        return None;
    }
    Some(w)
}
