//! Shared fixtures for the benchmark targets.

use nalgebra::DVector;

pub use cbfx_core::presets::linear2d;

/// States exercising each solution case of the demo problem: barrier row
/// inactive, active without limits, active with one limit, and (adaptive
/// only) active with two limits.
pub fn representative_states() -> Vec<(&'static str, DVector<f64>)> {
    vec![
        ("case1", DVector::from_vec(vec![0.0, 0.0])),
        ("case2", DVector::from_vec(vec![0.0, 1.5])),
        ("case3-single", DVector::from_vec(vec![0.85, 0.84])),
        ("case3-pair", DVector::from_vec(vec![2.0, 1.8])),
    ]
}
