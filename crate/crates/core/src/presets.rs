//! Bundled demo problems.

use nalgebra::{DMatrix, DVector};

use crate::model::{
    Barrier, ClassK, ControlPolytope, DomainBox, Dynamics, NominalControl, ProblemSpec,
};

/// Two-state saturated-input demo: unstable linear dynamics, a circular
/// barrier of radius 3, `α(b) = 0.5·b`, unit box limits on both inputs and a
/// constant nominal control. Ships as `examples/paper_linear2d.json`.
pub fn linear2d() -> ProblemSpec {
    ProblemSpec {
        dynamics: Dynamics::Linear {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 1.0]),
            b: DMatrix::identity(2, 2),
        },
        barrier: Barrier::Quadratic {
            radius: 9.0,
            center: DVector::zeros(2),
            shape: DMatrix::identity(2, 2),
        },
        alpha: ClassK::Linear { k: 0.5 },
        limits: ControlPolytope::symmetric_box(2, 1.0),
        u_des: NominalControl::Constant(DVector::from_vec(vec![0.5, 0.5])),
        domain: DomainBox {
            min: DVector::from_vec(vec![-3.5, -3.5]),
            max: DVector::from_vec(vec![3.5, 3.5]),
        },
        p_s: 100.0,
    }
}
