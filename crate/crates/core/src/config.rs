//! JSON problem files.
//!
//! ```json
//! {
//!   "dynamics": { "type": "linear", "params": { "a": [[1,2],[1,1]], "b": [[1,0],[0,1]] } },
//!   "barrier":  { "type": "quadratic", "params": { "radius": 9, "center": [0,0], "shape": [[1,0],[0,1]] } },
//!   "alpha":    { "type": "linear", "k": 0.5 },
//!   "limits":   { "A": [[1,0],[-1,0],[0,1],[0,-1]], "b": [-1,-1,-1,-1] },
//!   "u_des":    [0.5, 0.5],
//!   "domain":   { "min": [-3.5,-3.5], "max": [3.5,3.5] },
//!   "p_s":      100.0
//! }
//! ```
//!
//! `u_des` is either a constant vector or
//! `{ "type": "linear_feedback", "gain": [[..]], "offset": [..] }`.
//! Only registry models are expressible here; arbitrary closures go through
//! the library API.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_spec, Barrier, ClassK, ControlPolytope, DomainBox, Dynamics, NominalControl,
    ProblemSpec,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read problem file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse problem file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("problem file is invalid: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case", deny_unknown_fields)]
enum DynamicsCfg {
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case", deny_unknown_fields)]
enum BarrierCfg {
    Quadratic { radius: f64, center: Vec<f64>, shape: Vec<Vec<f64>> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum AlphaCfg {
    Linear { k: f64 },
    Cubic { k: f64 },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsCfg {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum NominalCfg {
    Constant(Vec<f64>),
    Feedback {
        #[serde(rename = "type")]
        kind: String,
        gain: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainCfg {
    min: Vec<f64>,
    max: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    dynamics: DynamicsCfg,
    barrier: BarrierCfg,
    alpha: AlphaCfg,
    limits: LimitsCfg,
    u_des: NominalCfg,
    domain: DomainCfg,
    p_s: f64,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() {
        return Err(ConfigError::Invalid(vec![format!("{what} must not be empty")]));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(ConfigError::Invalid(vec![format!("{what} rows have inconsistent lengths")]));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

/// Parse a problem from JSON text and validate it.
pub fn parse_problem(text: &str) -> Result<ProblemSpec, ConfigError> {
    let file: ProblemFile = serde_json::from_str(text)?;

    let dynamics = match file.dynamics {
        DynamicsCfg::Linear { a, b } => Dynamics::Linear {
            a: matrix(&a, "dynamics.a")?,
            b: matrix(&b, "dynamics.b")?,
        },
    };
    let barrier = match file.barrier {
        BarrierCfg::Quadratic { radius, center, shape } => Barrier::Quadratic {
            radius,
            center: DVector::from_vec(center),
            shape: matrix(&shape, "barrier.shape")?,
        },
    };
    let alpha = match file.alpha {
        AlphaCfg::Linear { k } => ClassK::Linear { k },
        AlphaCfg::Cubic { k } => ClassK::Cubic { k },
    };
    let limits = ControlPolytope::new(
        matrix(&file.limits.a, "limits.A")?,
        DVector::from_vec(file.limits.b),
    )
    .map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
    let u_des = match file.u_des {
        NominalCfg::Constant(u) => NominalControl::Constant(DVector::from_vec(u)),
        NominalCfg::Feedback { kind, gain, offset } => {
            if kind != "linear_feedback" {
                return Err(ConfigError::Invalid(vec![format!(
                    "unknown nominal controller type '{kind}'"
                )]));
            }
            let gain = matrix(&gain, "u_des.gain")?;
            let offset = match offset {
                Some(o) => DVector::from_vec(o),
                None => DVector::zeros(gain.nrows()),
            };
            NominalControl::StateFeedback { gain, offset }
        }
    };
    let domain = DomainBox::new(
        DVector::from_vec(file.domain.min),
        DVector::from_vec(file.domain.max),
    )
    .map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;

    let spec = ProblemSpec { dynamics, barrier, alpha, limits, u_des, domain, p_s: file.p_s };
    let diags = validate_spec(&spec);
    if !diags.is_empty() {
        return Err(ConfigError::Invalid(diags));
    }
    Ok(spec)
}

/// Load and validate a problem file.
pub fn load_problem<P: AsRef<Path>>(path: P) -> Result<ProblemSpec, ConfigError> {
    parse_problem(&fs::read_to_string(path)?)
}
