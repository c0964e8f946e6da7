//! Problem data and per-state constraint quantities.
//!
//! A problem bundles control-affine dynamics `ẋ = f(x) + g(x)u`, a barrier
//! `B` with gradient, a class-K relaxation `α`, an input polytope
//! `A·u + b ≤ 0`, a nominal controller and an exploration box. Dynamics and
//! barriers come either from the built-in registry (linear dynamics,
//! quadratic barrier — these are what the config format can express) or as
//! arbitrary user closures.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

/// State-indexed vector field, e.g. a drift `f(x)` or a barrier gradient.
pub type StateFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// State-indexed input matrix `g(x)`.
pub type InputMatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// State-indexed scalar field, e.g. a barrier value.
pub type ScalarFieldFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// Scalar function of one variable, e.g. a class-K relaxation.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("evaluation produced a non-finite value in {context}")]
    NonFiniteEvaluation { context: &'static str },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
}

/// Control-affine dynamics `ẋ = f(x) + g(x)u`.
#[derive(Clone)]
pub enum Dynamics {
    /// `ẋ = a·x + b·u`
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
    Custom {
        state_dim: usize,
        input_dim: usize,
        drift: StateFn,
        input_matrix: InputMatrixFn,
    },
}

impl Dynamics {
    pub fn state_dim(&self) -> usize {
        match self {
            Dynamics::Linear { a, .. } => a.nrows(),
            Dynamics::Custom { state_dim, .. } => *state_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Dynamics::Linear { b, .. } => b.ncols(),
            Dynamics::Custom { input_dim, .. } => *input_dim,
        }
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Dynamics::Linear { a, .. } => a * x,
            Dynamics::Custom { drift, .. } => drift(x),
        }
    }

    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Dynamics::Linear { b, .. } => b.clone(),
            Dynamics::Custom { input_matrix, .. } => input_matrix(x),
        }
    }
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Linear { a, b } => f.debug_struct("Linear").field("a", a).field("b", b).finish(),
            Dynamics::Custom { state_dim, input_dim, .. } => f
                .debug_struct("Custom")
                .field("state_dim", state_dim)
                .field("input_dim", input_dim)
                .finish_non_exhaustive(),
        }
    }
}

/// Barrier function with analytic gradient. The safe set is `{x | B(x) ≥ 0}`.
#[derive(Clone)]
pub enum Barrier {
    /// `B(x) = radius − (x−center)ᵀ·shape·(x−center)` with `shape ≻ 0`.
    Quadratic {
        radius: f64,
        center: DVector<f64>,
        shape: DMatrix<f64>,
    },
    Custom { value: ScalarFieldFn, gradient: StateFn },
}

impl Barrier {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Barrier::Quadratic { radius, center, shape } => {
                let d = x - center;
                radius - (d.transpose() * shape * &d)[0]
            }
            Barrier::Custom { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Barrier::Quadratic { center, shape, .. } => {
                let d = x - center;
                -(shape + shape.transpose()) * d
            }
            Barrier::Custom { gradient, .. } => gradient(x),
        }
    }
}

impl fmt::Debug for Barrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Barrier::Quadratic { radius, center, shape } => f
                .debug_struct("Quadratic")
                .field("radius", radius)
                .field("center", center)
                .field("shape", shape)
                .finish(),
            Barrier::Custom { .. } => f.write_str("Custom { .. }"),
        }
    }
}

/// Class-K relaxation: strictly increasing with `α(0) = 0`.
#[derive(Clone)]
pub enum ClassK {
    /// `α(b) = k·b`
    Linear { k: f64 },
    /// `α(b) = k·b³`
    Cubic { k: f64 },
    Custom(ScalarFn),
}

impl ClassK {
    pub fn eval(&self, b: f64) -> f64 {
        match self {
            ClassK::Linear { k } => k * b,
            ClassK::Cubic { k } => k * b * b * b,
            ClassK::Custom(f) => f(b),
        }
    }
}

impl fmt::Debug for ClassK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassK::Linear { k } => write!(f, "Linear {{ k: {k} }}"),
            ClassK::Cubic { k } => write!(f, "Cubic {{ k: {k} }}"),
            ClassK::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Input limits in halfspace form `a·u + b ≤ 0`, one row per constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPolytope {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ControlPolytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, ModelError> {
        if a.nrows() != b.len() {
            return Err(ModelError::DimensionMismatch {
                context: format!("limit matrix has {} rows but offset has {}", a.nrows(), b.len()),
            });
        }
        Ok(Self { a, b })
    }

    /// `±1` box limits on every input coordinate, rows ordered
    /// `u₁≤hi, u₁≥lo, u₂≤hi, u₂≥lo, …`.
    pub fn symmetric_box(input_dim: usize, bound: f64) -> Self {
        let rows = 2 * input_dim;
        let mut a = DMatrix::zeros(rows, input_dim);
        let mut b = DVector::zeros(rows);
        for i in 0..input_dim {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = -bound;
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -bound;
        }
        Self { a, b }
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    /// Residual of row `i` at `u`; nonpositive when satisfied.
    pub fn row_residual(&self, i: usize, u: &DVector<f64>) -> f64 {
        (self.a.row(i) * u)[0] + self.b[i]
    }

    /// Largest row residual at `u` (≤ 0 means `u` is admissible).
    pub fn max_residual(&self, u: &DVector<f64>) -> f64 {
        (0..self.rows())
            .map(|i| self.row_residual(i, u))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, u: &DVector<f64>, tolerance: f64) -> bool {
        self.max_residual(u) <= tolerance
    }

    /// Vertices of the polytope, found by intersecting every full-rank
    /// `input_dim`-subset of rows and keeping feasible points. Suitable for
    /// the small row counts this crate deals with; returns an empty list for
    /// unbounded or empty polytopes.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let m = self.input_dim();
        let p = self.rows();
        if p < m {
            return Vec::new();
        }
        let mut verts: Vec<DVector<f64>> = Vec::new();
        for combo in index_combinations(p, m) {
            let sub_a = DMatrix::from_fn(m, m, |r, c| self.a[(combo[r], c)]);
            let sub_b = DVector::from_fn(m, |r, _| -self.b[combo[r]]);
            let lu = sub_a.clone().full_piv_lu();
            let Some(v) = lu.solve(&sub_b) else { continue };
            if !v.iter().all(|c| c.is_finite()) {
                continue;
            }
            if self.max_residual(&v) > 1e-9 {
                continue;
            }
            if !verts.iter().any(|w| (w - &v).amax() < 1e-9) {
                verts.push(v);
            }
        }
        verts
    }
}

/// All `k`-element index subsets of `0..n` in lexicographic order.
pub(crate) fn index_combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        out.push(combo.clone());
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if combo[i] + 1 <= n - (k - i) {
                combo[i] += 1;
                for j in i + 1..k {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Nominal controller the filter deviates from as little as possible.
#[derive(Clone)]
pub enum NominalControl {
    Constant(DVector<f64>),
    /// `u_des(x) = gain·x + offset`
    StateFeedback { gain: DMatrix<f64>, offset: DVector<f64> },
    Custom(StateFn),
}

impl NominalControl {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            NominalControl::Constant(u) => u.clone(),
            NominalControl::StateFeedback { gain, offset } => gain * x + offset,
            NominalControl::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for NominalControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NominalControl::Constant(u) => write!(f, "Constant({u:?})"),
            NominalControl::StateFeedback { gain, offset } => f
                .debug_struct("StateFeedback")
                .field("gain", gain)
                .field("offset", offset)
                .finish(),
            NominalControl::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Axis-aligned exploration window.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBox {
    pub min: DVector<f64>,
    pub max: DVector<f64>,
}

impl DomainBox {
    pub fn new(min: DVector<f64>, max: DVector<f64>) -> Result<Self, ModelError> {
        if min.len() != max.len() {
            return Err(ModelError::DimensionMismatch {
                context: format!("domain min has {} entries but max has {}", min.len(), max.len()),
            });
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..self.dim()).all(|i| x[i] >= self.min[i] && x[i] <= self.max[i])
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }
}

/// The full safety-filter problem.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub dynamics: Dynamics,
    pub barrier: Barrier,
    pub alpha: ClassK,
    pub limits: ControlPolytope,
    pub u_des: NominalControl,
    pub domain: DomainBox,
    /// Penalty on the relaxation coefficient in the adaptive program.
    pub p_s: f64,
}

impl ProblemSpec {
    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn limit_count(&self) -> usize {
        self.limits.rows()
    }

    pub fn u_des_at(&self, x: &DVector<f64>) -> DVector<f64> {
        self.u_des.eval(x)
    }

    /// Clone with a different relaxation penalty.
    pub fn with_p_s(&self, p_s: f64) -> Self {
        let mut spec = self.clone();
        spec.p_s = p_s;
        spec
    }
}

/// Per-state constraint row quantities consumed by every solver.
///
/// The barrier constraint is `lfb + lgb·u + alpha_b ≥ 0`; the QP standard
/// form uses the negations (`neg_*` accessors) so the row reads `≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintData {
    /// `∇B(x)·f(x)`
    pub lfb: f64,
    /// `∇B(x)ᵀ·g(x)`
    pub lgb: RowDVector<f64>,
    /// `α(B(x))`
    pub alpha_b: f64,
    /// `B(x)`
    pub b_val: f64,
}

impl ConstraintData {
    pub fn neg_lfb(&self) -> f64 {
        -self.lfb
    }

    pub fn neg_lgb(&self) -> RowDVector<f64> {
        -self.lgb.clone()
    }

    pub fn neg_alpha(&self) -> f64 {
        -self.alpha_b
    }

    /// Barrier-constraint slack at `u`; the constraint holds iff this is ≥ 0.
    pub fn slack_at(&self, u: &DVector<f64>) -> f64 {
        self.lfb + (&self.lgb * u)[0] + self.alpha_b
    }

    /// Largest achievable slack over the input polytope, by vertex scan.
    /// Negative means no admissible input satisfies the barrier row at this
    /// state: an infeasibility certificate.
    pub fn max_slack_over(&self, limits: &ControlPolytope) -> f64 {
        limits
            .vertices()
            .iter()
            .map(|v| self.slack_at(v))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Lie derivatives and relaxation value at one state.
pub fn lie_derivatives(spec: &ProblemSpec, x: &DVector<f64>) -> Result<ConstraintData, ModelError> {
    if !x.iter().all(|c| c.is_finite()) {
        return Err(ModelError::NonFiniteEvaluation { context: "state" });
    }
    let grad = spec.barrier.gradient(x);
    let f = spec.dynamics.drift(x);
    let g = spec.dynamics.input_matrix(x);
    let lfb = grad.dot(&f);
    let lgb = grad.transpose() * g;
    let b_val = spec.barrier.value(x);
    let alpha_b = spec.alpha.eval(b_val);
    if !lfb.is_finite() || !b_val.is_finite() || !alpha_b.is_finite() {
        return Err(ModelError::NonFiniteEvaluation { context: "constraint row" });
    }
    if !lgb.iter().all(|c| c.is_finite()) {
        return Err(ModelError::NonFiniteEvaluation { context: "input lie derivative" });
    }
    Ok(ConstraintData { lfb, lgb, alpha_b, b_val })
}

/// Check the problem invariants; returns one message per violation.
///
/// Monotonicity of `α` is tested on ~1000 barrier values sampled over the
/// exploration box (deterministic lattice), so a custom `α` that fails to be
/// strictly increasing on the relevant range is caught here.
pub fn validate_spec(spec: &ProblemSpec) -> Vec<String> {
    let mut diags = Vec::new();
    let n = spec.state_dim();
    let m = spec.input_dim();

    if spec.limits.rows() == 0 {
        diags.push("limits must contain at least one row".to_string());
    }
    if spec.limits.input_dim() != m {
        diags.push(format!(
            "limit rows have {} columns but the input dimension is {}",
            spec.limits.input_dim(),
            m
        ));
    }
    for i in 0..spec.limits.rows() {
        if spec.limits.a.row(i).norm() == 0.0 {
            diags.push(format!("limit row {} has zero norm", i + 1));
        }
    }
    if !(spec.p_s > 0.0) {
        diags.push("p_s must be positive".to_string());
    }
    if spec.domain.dim() != n {
        diags.push(format!(
            "domain box has dimension {} but the state dimension is {}",
            spec.domain.dim(),
            n
        ));
    }
    for i in 0..spec.domain.dim() {
        if !(spec.domain.min[i] < spec.domain.max[i]) {
            diags.push(format!("domain axis {} is empty (min ≥ max)", i + 1));
        }
    }

    let alpha_zero = spec.alpha.eval(0.0);
    if alpha_zero.abs() > 1e-12 {
        diags.push(format!("alpha(0) must be 0, got {alpha_zero}"));
    }

    // Strict monotonicity of alpha over the barrier range seen on the box.
    if spec.domain.dim() == n {
        let per_axis = (1000f64.powf(1.0 / n as f64)).ceil() as usize;
        let per_axis = per_axis.max(2);
        let mut b_values = Vec::new();
        let mut index = vec![0usize; n];
        loop {
            let x = DVector::from_fn(n, |i, _| {
                spec.domain.min[i]
                    + spec.domain.width(i) * index[i] as f64 / (per_axis - 1) as f64
            });
            b_values.push(spec.barrier.value(&x));
            let mut axis = n;
            loop {
                if axis == 0 {
                    break;
                }
                axis -= 1;
                index[axis] += 1;
                if index[axis] < per_axis {
                    break;
                }
                index[axis] = 0;
            }
            if index.iter().all(|&i| i == 0) {
                break;
            }
        }
        b_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        b_values.dedup();
        let monotone = b_values
            .windows(2)
            .filter(|w| w[1] - w[0] > 1e-12)
            .all(|w| spec.alpha.eval(w[0]) < spec.alpha.eval(w[1]));
        if !monotone {
            diags.push("alpha is not strictly increasing on the sampled barrier range".to_string());
        }
    }

    if let NominalControl::Constant(u) = &spec.u_des {
        if u.len() != m {
            diags.push(format!("u_des has {} entries but the input dimension is {}", u.len(), m));
        } else if !spec.limits.contains(u, 1e-12) {
            diags.push("constant u_des violates the input limits".to_string());
        }
    }

    diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn lie_derivatives_at_origin() {
        let spec = presets::linear2d();
        let cd = lie_derivatives(&spec, &v2(0.0, 0.0)).unwrap();
        assert_eq!(cd.lfb, 0.0);
        assert_eq!(cd.lgb, RowDVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(cd.b_val, 9.0);
        assert_eq!(cd.alpha_b, 4.5);
    }

    #[test]
    fn lie_derivatives_on_axis() {
        let spec = presets::linear2d();
        let cd = lie_derivatives(&spec, &v2(0.0, 1.5)).unwrap();
        assert_abs_diff_eq!(cd.lfb, -4.5, epsilon = 1e-14);
        assert_abs_diff_eq!(cd.lgb[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cd.lgb[1], -3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cd.b_val, 6.75, epsilon = 1e-14);
        assert_abs_diff_eq!(cd.alpha_b, 3.375, epsilon = 1e-14);

        let cd = lie_derivatives(&spec, &v2(2.8, 0.0)).unwrap();
        assert_abs_diff_eq!(cd.lfb, -15.68, epsilon = 1e-12);
        assert_abs_diff_eq!(cd.lgb[0], -5.6, epsilon = 1e-14);
        assert_abs_diff_eq!(cd.lgb[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cd.b_val, 1.16, epsilon = 1e-12);
        assert_abs_diff_eq!(cd.alpha_b, 0.58, epsilon = 1e-12);
    }

    #[test]
    fn lie_derivatives_match_symbolic_expansion() {
        // For linear dynamics with the unit quadratic barrier the Lie
        // derivatives reduce to -2xᵀ(A_sys x) and -2xᵀ.
        let spec = presets::linear2d();
        let a_sys = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = v2(rng.random_range(-3.5..3.5), rng.random_range(-3.5..3.5));
            let cd = lie_derivatives(&spec, &x).unwrap();
            let direct_lfb = -2.0 * x.dot(&(&a_sys * &x));
            assert_abs_diff_eq!(cd.lfb, direct_lfb, epsilon = 1e-12);
            assert_abs_diff_eq!(cd.lgb[0], -2.0 * x[0], epsilon = 1e-12);
            assert_abs_diff_eq!(cd.lgb[1], -2.0 * x[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn sign_accessors_are_exact_negations() {
        let spec = presets::linear2d();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = v2(rng.random_range(-3.5..3.5), rng.random_range(-3.5..3.5));
            let cd = lie_derivatives(&spec, &x).unwrap();
            assert_eq!(cd.neg_lfb(), -cd.lfb);
            assert_eq!(cd.neg_alpha(), -cd.alpha_b);
            for j in 0..2 {
                assert_eq!(cd.neg_lgb()[j], -cd.lgb[j]);
            }
        }
    }

    #[test]
    fn validate_accepts_demo_problem() {
        let diags = validate_spec(&presets::linear2d());
        assert!(diags.is_empty(), "unexpected diagnostics: {diags:?}");
    }

    #[test]
    fn validate_rejects_nonpositive_penalty() {
        let mut spec = presets::linear2d();
        spec.p_s = 0.0;
        let diags = validate_spec(&spec);
        assert!(diags.iter().any(|d| d.contains("p_s")), "{diags:?}");
    }

    #[test]
    fn validate_names_zero_limit_row() {
        let mut spec = presets::linear2d();
        spec.limits.a.row_mut(2).fill(0.0);
        let diags = validate_spec(&spec);
        assert!(diags.iter().any(|d| d.contains("row 3")), "{diags:?}");
    }

    #[test]
    fn validate_flags_infeasible_nominal() {
        let mut spec = presets::linear2d();
        spec.u_des = NominalControl::Constant(v2(2.0, 0.0));
        let diags = validate_spec(&spec);
        assert!(diags.iter().any(|d| d.contains("u_des")), "{diags:?}");
    }

    #[test]
    fn validate_flags_non_monotone_alpha() {
        let mut spec = presets::linear2d();
        // b² is not increasing for negative arguments (and the box reaches
        // states with B < 0).
        spec.alpha = ClassK::Custom(Arc::new(|b| b * b));
        let diags = validate_spec(&spec);
        assert!(diags.iter().any(|d| d.contains("increasing")), "{diags:?}");
    }

    #[test]
    fn box_vertices_are_the_corners() {
        let limits = ControlPolytope::symmetric_box(2, 1.0);
        let verts = limits.vertices();
        assert_eq!(verts.len(), 4);
        for v in &verts {
            assert_abs_diff_eq!(v[0].abs(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v[1].abs(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cubic_class_k_is_accepted() {
        let mut spec = presets::linear2d();
        spec.alpha = ClassK::Cubic { k: 0.2 };
        assert!(validate_spec(&spec).is_empty());
        assert_eq!(spec.alpha.eval(2.0), 1.6);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let spec = presets::linear2d();
        let err = lie_derivatives(&spec, &v2(f64::NAN, 0.0)).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteEvaluation { .. }));
    }
}
