//! Closed-loop simulation under the explicit controller.
//!
//! Fixed-step fourth-order Runge–Kutta on `ẋ = f(x) + g(x)u(x)` with the
//! controller re-evaluated at every stage point. The barrier value is
//! recorded along the trajectory so forward invariance of the superlevel set
//! can be checked after the fact.

use std::fmt;
use std::io::{self, Write};

use nalgebra::DVector;
use thiserror::Error;

use crate::adaptive::{self, AdOutcome};
use crate::explicit::{self, SolveError, SolveOutcome};
use crate::model::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimMode {
    Standard,
    Adaptive,
    /// Apply the nominal control unfiltered.
    Nominal,
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimMode::Standard => f.write_str("standard"),
            SimMode::Adaptive => f.write_str("adaptive"),
            SimMode::Nominal => f.write_str("nominal"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step must be positive and no larger than the horizon")]
    BadTimeStep,
    #[error("start state is outside the exploration domain")]
    StartOutsideDomain,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// How a run ended.
#[derive(Clone, Debug)]
pub enum SimStatus {
    Completed,
    /// The controller reported infeasibility at `x` (standard mode) or a
    /// degenerate-infeasible boundary state (adaptive mode).
    ControllerInfeasible { t: f64, x: DVector<f64>, reason: String },
    /// The state left the exploration box.
    LeftDomain { t: f64, x: DVector<f64> },
}

impl SimStatus {
    pub fn is_controller_failure(&self) -> bool {
        matches!(self, SimStatus::ControllerInfeasible { .. })
    }
}

#[derive(Clone, Debug)]
pub struct SimSample {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub s: f64,
    pub case_label: String,
    pub b_val: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub mode: SimMode,
    pub step: f64,
    pub samples: Vec<SimSample>,
    pub status: SimStatus,
}

impl Trajectory {
    /// Time of the first recorded barrier crossing, if any.
    pub fn first_barrier_crossing(&self) -> Option<f64> {
        self.samples.iter().find(|s| s.b_val < 0.0).map(|s| s.t)
    }
}

struct StageControl {
    u: DVector<f64>,
    s: f64,
    case_label: String,
}

enum StageResult {
    Ok(StageControl),
    Infeasible(String),
}

fn control_at(spec: &ProblemSpec, mode: SimMode, x: &DVector<f64>) -> Result<StageResult, SolveError> {
    match mode {
        SimMode::Nominal => Ok(StageResult::Ok(StageControl {
            u: spec.u_des_at(x),
            s: 1.0,
            case_label: "nominal".to_string(),
        })),
        SimMode::Standard => match explicit::classify_and_solve(spec, x)? {
            SolveOutcome::Solved(sol) => Ok(StageResult::Ok(StageControl {
                u: sol.u_star,
                s: sol.s_star,
                case_label: sol.case_tag.to_string(),
            })),
            SolveOutcome::Infeasible(cert) => Ok(StageResult::Infeasible(cert.reason)),
        },
        SimMode::Adaptive => match adaptive::classify_and_solve(spec, x)? {
            AdOutcome::Solved(sol) => Ok(StageResult::Ok(StageControl {
                u: sol.base.u_star,
                s: sol.base.s_star,
                case_label: sol.base.case_tag.to_string(),
            })),
            AdOutcome::DegenerateInfeasible(cert) => Ok(StageResult::Infeasible(cert.reason)),
        },
    }
}

/// Integrate the closed loop from `x0` for `t_final` seconds at step `step`.
/// Terminates early (with status, not an error) when the controller reports
/// infeasibility at a stage point or the state leaves the exploration box.
pub fn simulate(
    spec: &ProblemSpec,
    x0: &DVector<f64>,
    t_final: f64,
    step: f64,
    mode: SimMode,
) -> Result<Trajectory, SimError> {
    if !(step > 0.0) || !(t_final >= step) {
        return Err(SimError::BadTimeStep);
    }
    if !spec.domain.contains(x0) {
        return Err(SimError::StartOutsideDomain);
    }

    let steps = (t_final / step).round().max(1.0) as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut status = SimStatus::Completed;
    let mut x = x0.clone();

    let record = |spec: &ProblemSpec, t: f64, x: &DVector<f64>, ctrl: &StageControl| SimSample {
        t,
        x: x.clone(),
        u: ctrl.u.clone(),
        s: ctrl.s,
        case_label: ctrl.case_label.clone(),
        b_val: spec.barrier.value(x),
    };

    'outer: for k in 0..=steps {
        let t = k as f64 * step;
        let ctrl = match control_at(spec, mode, &x)? {
            StageResult::Ok(c) => c,
            StageResult::Infeasible(reason) => {
                status = SimStatus::ControllerInfeasible { t, x: x.clone(), reason };
                break 'outer;
            }
        };
        samples.push(record(spec, t, &x, &ctrl));
        if k == steps {
            break;
        }

        // RK4 with the controller re-evaluated at every stage point.
        let field = |spec: &ProblemSpec,
                     stage_t: f64,
                     y: &DVector<f64>|
         -> Result<Result<DVector<f64>, SimStatus>, SimError> {
            match control_at(spec, mode, y)? {
                StageResult::Ok(c) => {
                    Ok(Ok(spec.dynamics.drift(y) + spec.dynamics.input_matrix(y) * &c.u))
                }
                StageResult::Infeasible(reason) => Ok(Err(SimStatus::ControllerInfeasible {
                    t: stage_t,
                    x: y.clone(),
                    reason,
                })),
            }
        };

        let k1 = spec.dynamics.drift(&x) + spec.dynamics.input_matrix(&x) * &ctrl.u;
        let half = step / 2.0;
        let y2 = &x + &k1 * half;
        let k2 = match field(spec, t + half, &y2)? {
            Ok(v) => v,
            Err(st) => {
                status = st;
                break 'outer;
            }
        };
        let y3 = &x + &k2 * half;
        let k3 = match field(spec, t + half, &y3)? {
            Ok(v) => v,
            Err(st) => {
                status = st;
                break 'outer;
            }
        };
        let y4 = &x + &k3 * step;
        let k4 = match field(spec, t + step, &y4)? {
            Ok(v) => v,
            Err(st) => {
                status = st;
                break 'outer;
            }
        };

        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
        if !spec.domain.contains(&x) {
            status = SimStatus::LeftDomain { t: t + step, x: x.clone() };
            break;
        }
    }

    Ok(Trajectory { mode, step, samples, status })
}

/// Smallest barrier value seen along the trajectory; NaN for an empty one.
pub fn min_barrier(traj: &Trajectory) -> f64 {
    traj.samples
        .iter()
        .map(|s| s.b_val)
        .fold(f64::NAN, |acc, b| if acc.is_nan() || b < acc { b } else { acc })
}

/// Write the trajectory as CSV: `t,x1..xn,u1..um,s,case,B`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: &mut W) -> io::Result<()> {
    let (n, m) = match traj.samples.first() {
        Some(s) => (s.x.len(), s.u.len()),
        None => (0, 0),
    };
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend(["s".to_string(), "case".to_string(), "B".to_string()]);
    writeln!(out, "{}", header.join(","))?;
    for s in &traj.samples {
        let mut fields = vec![format!("{}", s.t)];
        fields.extend(s.x.iter().map(|v| format!("{v}")));
        fields.extend(s.u.iter().map(|v| format!("{v}")));
        fields.push(format!("{}", s.s));
        fields.push(s.case_label.clone());
        fields.push(format!("{}", s.b_val));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}
