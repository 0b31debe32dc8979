//! Dense layers over [`ParamVector`] segments.
//!
//! A layer named `trunk.0` owns the segments `trunk.0.w` (`inputs×outputs`)
//! and `trunk.0.b` (`1×outputs`). Every layer has a graph form for training
//! and a plain form for fast evaluation; both compute the same function.

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{BoundParams, GradError, Graph, Matrix, NodeId, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

/// Appends `name.w` with entries uniform in `±scale/√fan_in` and a zero `name.b`.
pub fn init_dense<R: Rng>(params: &mut ParamVector, name: &str, inputs: usize, outputs: usize, scale: f64, rng: &mut R) {
    let bound = scale / (inputs as f64).sqrt();
    let w = (0..inputs * outputs).map(|_| rng.random_range(-bound..=bound)).collect();
    params.push(&format!("{name}.w"), inputs, outputs, w);
    params.push(&format!("{name}.b"), 1, outputs, vec![0.0; outputs]);
}

pub fn dense(g: &mut Graph, bound: &BoundParams, name: &str, x: NodeId, act: Activation) -> Result<NodeId, GradError> {
    let w = bound.get(&format!("{name}.w"))?;
    let b = bound.get(&format!("{name}.b"))?;
    let h = g.matmul(x, w)?;
    let h = g.bias_add(h, b)?;
    Ok(match act {
        Activation::Tanh => g.tanh(h),
        Activation::Relu => g.clamp_min(h, 0.0),
        Activation::Linear => h,
    })
}

pub fn dense_plain(params: &ParamVector, name: &str, x: &Matrix, act: Activation) -> Result<Matrix, GradError> {
    let w = params.view(&format!("{name}.w"))?;
    let b = params.view(&format!("{name}.b"))?;
    if x.ncols() != w.nrows() {
        return Err(GradError::ShapeMismatch {
            op: "matrix product",
            lhs: x.dim(),
            rhs: w.dim(),
        });
    }
    let mut h = x.dot(&w);
    h += &b.index_axis(Axis(0), 0);
    match act {
        Activation::Tanh => h.mapv_inplace(crate::grad::tanh),
        Activation::Relu => h.mapv_inplace(|v| v.max(0.0)),
        Activation::Linear => {}
    }
    Ok(h)
}
