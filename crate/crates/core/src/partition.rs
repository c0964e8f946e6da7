//! State-space partitioning into critical regions.
//!
//! Candidate active sets of the limit rows are enumerated exhaustively
//! (2^p − 1 nonempty subsets, cardinality-then-lexicographic order),
//! rank-deficient candidates are pruned, and every grid point of the
//! exploration box is classified by the closed-form solvers. Regions are
//! represented extensionally — per-point labels plus grid rasterization —
//! because the boundaries are not polyhedral for nonlinear dynamics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::adaptive::{self, AdOutcome};
use crate::explicit::{self, ActiveSetLabel, CaseTag, SolveError, SolveOutcome};
use crate::model::{ControlPolytope, DomainBox, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Standard,
    Adaptive,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Standard => f.write_str("standard"),
            Mode::Adaptive => f.write_str("adaptive"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("active-set enumeration supports at most 20 limit rows, got {count}")]
    TooManyLimits { count: usize },
    #[error("grid resolution must be at least 2 per axis")]
    BadResolution,
    #[error("resolution has {got} axes but the domain has {expected}")]
    ResolutionDimension { got: usize, expected: usize },
    #[error("probe segment crosses an infeasible region at {state:?}")]
    SegmentCrossesInfeasible { state: Vec<f64> },
    #[error("probe needs at least 2 samples")]
    TooFewSamples,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// All 2^p − 1 nonempty subsets of the limit rows (zero-based indices),
/// ordered by cardinality then lexicographically. The complementary inactive
/// sets are implied and not stored.
pub fn enumerate_active_sets(row_count: usize) -> Result<Vec<Vec<usize>>, PartitionError> {
    if row_count > 20 {
        return Err(PartitionError::TooManyLimits { count: row_count });
    }
    let mut sets = Vec::with_capacity((1usize << row_count) - 1);
    for k in 1..=row_count {
        sets.extend(crate::model::index_combinations(row_count, k));
    }
    Ok(sets)
}

/// Keep only the candidate sets whose rows are linearly independent at the
/// rank tolerance; dependent sets carry redundant equality rows and cannot
/// identify a region.
pub fn prune_rank_deficient(limits: &ControlPolytope, sets: &[Vec<usize>]) -> Vec<Vec<usize>> {
    sets.iter()
        .filter(|set| {
            let rows = DMatrix::from_fn(set.len(), limits.input_dim(), |r, c| {
                limits.a[(set[r], c)]
            });
            explicit::has_full_row_rank(&rows)
        })
        .cloned()
        .collect()
}

/// Region identity of one grid cell.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RegionLabel {
    Region(ActiveSetLabel),
    Infeasible,
    /// The solver failed at this cell; the record carries the error text.
    Failed,
}

impl RegionLabel {
    pub fn compact(&self) -> String {
        match self {
            RegionLabel::Region(l) => l.compact(),
            RegionLabel::Infeasible => "inf".to_string(),
            RegionLabel::Failed => "err".to_string(),
        }
    }

    pub fn descriptive(&self) -> String {
        match self {
            RegionLabel::Region(l) => l.descriptive(),
            RegionLabel::Infeasible => "infeasible".to_string(),
            RegionLabel::Failed => "failed".to_string(),
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptive())
    }
}

/// Rectilinear grid over the exploration box; row-major order with the last
/// axis varying fastest.
#[derive(Clone, Debug)]
pub struct GridGeometry {
    pub domain: DomainBox,
    pub resolution: Vec<usize>,
}

impl GridGeometry {
    pub fn new(domain: DomainBox, resolution: Vec<usize>) -> Result<Self, PartitionError> {
        if resolution.len() != domain.dim() {
            return Err(PartitionError::ResolutionDimension {
                got: resolution.len(),
                expected: domain.dim(),
            });
        }
        if resolution.iter().any(|&r| r < 2) {
            return Err(PartitionError::BadResolution);
        }
        Ok(Self { domain, resolution })
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.domain.width(axis) / (self.resolution[axis] - 1) as f64
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let n = self.resolution.len();
        let mut idx = vec![0usize; n];
        let mut rem = flat;
        for axis in (0..n).rev() {
            idx[axis] = rem % self.resolution[axis];
            rem /= self.resolution[axis];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for (axis, &i) in idx.iter().enumerate() {
            flat = flat * self.resolution[axis] + i;
        }
        flat
    }

    pub fn point(&self, flat: usize) -> DVector<f64> {
        let idx = self.multi_index(flat);
        DVector::from_fn(self.resolution.len(), |axis, _| {
            self.domain.min[axis] + self.spacing(axis) * idx[axis] as f64
        })
    }
}

/// Everything recorded at one grid cell.
#[derive(Clone, Debug)]
pub struct CellRecord {
    pub x: DVector<f64>,
    pub b_val: f64,
    pub label: RegionLabel,
    pub case_tag: Option<CaseTag>,
    pub u: Option<DVector<f64>>,
    pub lambda: Option<f64>,
    pub mu: Option<DVector<f64>>,
    pub s: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub error: Option<String>,
}

/// Rasterized partition of the exploration box.
#[derive(Clone, Debug)]
pub struct GridClassification {
    pub mode: Mode,
    pub geometry: GridGeometry,
    pub input_dim: usize,
    pub limit_rows: usize,
    pub cells: Vec<CellRecord>,
}

fn classify_cell(spec: &ProblemSpec, mode: Mode, x: DVector<f64>) -> CellRecord {
    let b_val = spec.barrier.value(&x);
    let mut record = CellRecord {
        x: x.clone(),
        b_val,
        label: RegionLabel::Failed,
        case_tag: None,
        u: None,
        lambda: None,
        mu: None,
        s: None,
        kkt_residual: None,
        error: None,
    };
    match mode {
        Mode::Standard => match explicit::classify_and_solve(spec, &x) {
            Ok(SolveOutcome::Solved(sol)) => {
                record.kkt_residual = Some(explicit::kkt_residual(spec, &x, &sol));
                record.label = RegionLabel::Region(sol.active_set.clone());
                record.case_tag = Some(sol.case_tag.clone());
                record.lambda = Some(sol.lambda);
                record.mu = Some(explicit::padded_mu(&sol.mu, spec.limit_count()));
                record.s = Some(sol.s_star);
                record.u = Some(sol.u_star);
            }
            Ok(SolveOutcome::Infeasible(_)) => {
                record.label = RegionLabel::Infeasible;
            }
            Err(err) => {
                record.error = Some(err.to_string());
            }
        },
        Mode::Adaptive => match adaptive::classify_and_solve(spec, &x) {
            Ok(AdOutcome::Solved(sol)) => {
                record.kkt_residual = Some(adaptive::kkt_residual(spec, &x, &sol));
                record.label = RegionLabel::Region(sol.base.active_set.clone());
                record.case_tag = Some(sol.base.case_tag.clone());
                record.lambda = Some(sol.base.lambda);
                record.mu = Some(explicit::padded_mu(&sol.base.mu, spec.limit_count()));
                record.s = Some(sol.base.s_star);
                record.u = Some(sol.base.u_star);
            }
            Ok(AdOutcome::DegenerateInfeasible(_)) => {
                record.label = RegionLabel::Infeasible;
            }
            Err(err) => {
                record.error = Some(err.to_string());
            }
        },
    }
    record
}

/// Classify every grid point; per-cell failures are recorded, never raised.
pub fn classify_grid(
    spec: &ProblemSpec,
    mode: Mode,
    resolution: &[usize],
) -> Result<GridClassification, PartitionError> {
    let geometry = GridGeometry::new(spec.domain.clone(), resolution.to_vec())?;
    let cells: Vec<CellRecord> = (0..geometry.cell_count())
        .map(|flat| classify_cell(spec, mode, geometry.point(flat)))
        .collect();
    Ok(GridClassification {
        mode,
        geometry,
        input_dim: spec.input_dim(),
        limit_rows: spec.limit_count(),
        cells,
    })
}

/// Cell count per region label.
pub fn region_census(gc: &GridClassification) -> BTreeMap<RegionLabel, usize> {
    let mut census = BTreeMap::new();
    for cell in &gc.cells {
        *census.entry(cell.label.clone()).or_insert(0) += 1;
    }
    census
}

/// Re-sample a band around label changes at `factor`× resolution and return
/// the census of the refined samples. Thin slivers that fall between grid
/// points of the base pass show up here.
pub fn boundary_refined_census(
    spec: &ProblemSpec,
    gc: &GridClassification,
    factor: usize,
    band: f64,
) -> BTreeMap<RegionLabel, usize> {
    let geo = &gc.geometry;
    let n = geo.resolution.len();
    let mut boundary = vec![false; gc.cells.len()];
    for flat in 0..gc.cells.len() {
        let idx = geo.multi_index(flat);
        'axes: for axis in 0..n {
            for dir in [-1isize, 1] {
                let neighbor = idx[axis] as isize + dir;
                if neighbor < 0 || neighbor as usize >= geo.resolution[axis] {
                    continue;
                }
                let mut nidx = idx.clone();
                nidx[axis] = neighbor as usize;
                if gc.cells[geo.flat_index(&nidx)].label != gc.cells[flat].label {
                    boundary[flat] = true;
                    break 'axes;
                }
            }
        }
    }

    // widen the boundary marks to the requested band
    let mut marked = boundary.clone();
    for flat in 0..gc.cells.len() {
        if !boundary[flat] {
            continue;
        }
        let idx = geo.multi_index(flat);
        let radius: Vec<isize> = (0..n)
            .map(|axis| ((band / 2.0) / geo.spacing(axis)).ceil() as isize)
            .collect();
        let mut offset = vec![0isize; n];
        fn walk(
            axis: usize,
            n: usize,
            radius: &[isize],
            offset: &mut Vec<isize>,
            idx: &[usize],
            geo: &GridGeometry,
            marked: &mut [bool],
        ) {
            if axis == n {
                let mut nidx = vec![0usize; n];
                for a in 0..n {
                    let v = idx[a] as isize + offset[a];
                    if v < 0 || v as usize >= geo.resolution[a] {
                        return;
                    }
                    nidx[a] = v as usize;
                }
                marked[geo.flat_index(&nidx)] = true;
                return;
            }
            for d in -radius[axis]..=radius[axis] {
                offset[axis] = d;
                walk(axis + 1, n, radius, offset, idx, geo, marked);
            }
        }
        walk(0, n, &radius, &mut offset, &idx, geo, &mut marked);
    }

    let mut census = BTreeMap::new();
    for flat in 0..gc.cells.len() {
        if !marked[flat] {
            continue;
        }
        let center = geo.point(flat);
        let mut sub = vec![0usize; n];
        loop {
            let x = DVector::from_fn(n, |axis, _| {
                center[axis] + geo.spacing(axis) * ((sub[axis] as f64 + 0.5) / factor as f64 - 0.5)
            });
            if spec.domain.contains(&x) {
                let record = classify_cell(spec, gc.mode, x);
                *census.entry(record.label).or_insert(0) += 1;
            }
            let mut axis = n;
            loop {
                if axis == 0 {
                    break;
                }
                axis -= 1;
                sub[axis] += 1;
                if sub[axis] < factor {
                    break;
                }
                sub[axis] = 0;
            }
            if sub.iter().all(|&s| s == 0) {
                break;
            }
        }
    }
    census
}

/// What a continuity probe saw along one segment.
#[derive(Clone, Debug)]
pub struct ContinuityReport {
    pub step_length: f64,
    /// Largest `‖Δu‖∞` between adjacent samples with different labels.
    pub max_boundary_jump_u: f64,
    /// Largest `‖Δu‖∞` between adjacent samples with equal labels.
    pub max_interior_jump_u: f64,
    /// `max_interior_jump_u / step_length` — the observed Lipschitz estimate.
    pub interior_quotient_u: f64,
    pub max_boundary_jump_s: f64,
    pub max_interior_jump_s: f64,
    /// Label pairs at each crossing, in order.
    pub crossings: Vec<(RegionLabel, RegionLabel)>,
    /// Sample indices where the label changes.
    pub crossing_indices: Vec<usize>,
}

/// Sample the explicit solution along the segment `[a, b]` and report the
/// largest jumps at and away from label changes. Standard-mode probes refuse
/// segments that touch infeasible states.
pub fn continuity_probe(
    spec: &ProblemSpec,
    mode: Mode,
    a: &DVector<f64>,
    b: &DVector<f64>,
    samples: usize,
) -> Result<ContinuityReport, PartitionError> {
    if samples < 2 {
        return Err(PartitionError::TooFewSamples);
    }
    let mut us: Vec<DVector<f64>> = Vec::with_capacity(samples);
    let mut ss: Vec<f64> = Vec::with_capacity(samples);
    let mut labels: Vec<RegionLabel> = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = k as f64 / (samples - 1) as f64;
        let x = a + (b - a) * t;
        match mode {
            Mode::Standard => match explicit::classify_and_solve(spec, &x)? {
                SolveOutcome::Solved(sol) => {
                    us.push(sol.u_star);
                    ss.push(sol.s_star);
                    labels.push(RegionLabel::Region(sol.active_set));
                }
                SolveOutcome::Infeasible(_) => {
                    return Err(PartitionError::SegmentCrossesInfeasible {
                        state: x.iter().copied().collect(),
                    });
                }
            },
            Mode::Adaptive => match adaptive::classify_and_solve(spec, &x)? {
                AdOutcome::Solved(sol) => {
                    us.push(sol.base.u_star);
                    ss.push(sol.base.s_star);
                    labels.push(RegionLabel::Region(sol.base.active_set));
                }
                AdOutcome::DegenerateInfeasible(_) => {
                    return Err(PartitionError::SegmentCrossesInfeasible {
                        state: x.iter().copied().collect(),
                    });
                }
            },
        }
    }

    let step_length = (b - a).norm() / (samples - 1) as f64;
    let mut report = ContinuityReport {
        step_length,
        max_boundary_jump_u: 0.0,
        max_interior_jump_u: 0.0,
        interior_quotient_u: 0.0,
        max_boundary_jump_s: 0.0,
        max_interior_jump_s: 0.0,
        crossings: Vec::new(),
        crossing_indices: Vec::new(),
    };
    for k in 0..samples - 1 {
        let du = (&us[k + 1] - &us[k]).amax();
        let ds = (ss[k + 1] - ss[k]).abs();
        if labels[k + 1] != labels[k] {
            report.max_boundary_jump_u = report.max_boundary_jump_u.max(du);
            report.max_boundary_jump_s = report.max_boundary_jump_s.max(ds);
            report.crossings.push((labels[k].clone(), labels[k + 1].clone()));
            report.crossing_indices.push(k);
        } else {
            report.max_interior_jump_u = report.max_interior_jump_u.max(du);
            report.max_interior_jump_s = report.max_interior_jump_s.max(ds);
        }
    }
    if step_length > 0.0 {
        report.interior_quotient_u = report.max_interior_jump_u / step_length;
    }
    Ok(report)
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "NaN".to_string(),
    }
}

/// Write the grid as CSV: `x1..xn,case,active_set,feasible,u1..um,lambda,
/// mu1..mup,s,B,kkt_residual`, one row per cell in row-major grid order.
pub fn write_partition_csv<W: Write>(gc: &GridClassification, out: &mut W) -> io::Result<()> {
    let n = gc.geometry.resolution.len();
    let m = gc.input_dim;
    let p = gc.limit_rows;
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["case".to_string(), "active_set".to_string(), "feasible".to_string()]);
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.push("lambda".to_string());
    header.extend((1..=p).map(|i| format!("mu{i}")));
    header.extend(["s".to_string(), "B".to_string(), "kkt_residual".to_string()]);
    writeln!(out, "{}", header.join(","))?;

    for cell in &gc.cells {
        let mut fields: Vec<String> = cell.x.iter().map(|v| format!("{v}")).collect();
        let case = match (&cell.case_tag, &cell.label) {
            (Some(tag), _) => tag.to_string(),
            (None, RegionLabel::Infeasible) => "infeasible".to_string(),
            (None, _) => "failed".to_string(),
        };
        let active = match &cell.label {
            RegionLabel::Region(l) => l.compact(),
            RegionLabel::Infeasible => "inf".to_string(),
            RegionLabel::Failed => "err".to_string(),
        };
        fields.push(case);
        fields.push(active);
        fields.push(matches!(cell.label, RegionLabel::Region(_)).to_string());
        for i in 0..m {
            fields.push(fmt_opt(cell.u.as_ref().map(|u| u[i])));
        }
        fields.push(fmt_opt(cell.lambda));
        for i in 0..p {
            fields.push(fmt_opt(cell.mu.as_ref().map(|mu| mu[i])));
        }
        fields.push(fmt_opt(cell.s));
        fields.push(format!("{}", cell.b_val));
        fields.push(fmt_opt(cell.kkt_residual));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}
