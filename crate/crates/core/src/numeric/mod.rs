//! Dense double-precision matrices, reverse-mode gradients over a tape,
//! initialisation, Adam, finite-difference checking and checkpoints.

mod adam;
mod attention;
mod checkpoint;
mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use attention::{AttentionEdges, Segments};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{error_floor, finite_diff_check, relative_error, GradCheckReport, ParamCheck};
pub use matrix::Matrix;
pub use params::{glorot_uniform, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// `W x + b` where `b` (rows × 1) is broadcast over the columns of `x`.
pub fn linear(w: &Matrix, x: &Matrix, b: Option<&Matrix>) -> Result<Matrix> {
    let mut out = w.matmul(x)?;
    if let Some(b) = b {
        if b.rows() != out.rows() || b.cols() != 1 {
            return Err(Error::shape(format!(
                "bias {:?} does not broadcast over {:?}",
                b.shape(),
                out.shape()
            )));
        }
        let cols = out.cols();
        for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
            let bias = b[(r, 0)];
            row.iter_mut().for_each(|v| *v += bias);
        }
    }
    Ok(out)
}

/// Softmax with max subtraction. Masked (`false`) entries get weight 0.
pub fn softmax(v: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if let Some(m) = mask {
        if m.len() != v.len() {
            return Err(Error::shape(format!(
                "mask length {} != vector length {}",
                m.len(),
                v.len()
            )));
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..v.len())
        .filter(|&i| keep(i))
        .map(|i| v[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut out: Vec<f64> = (0..v.len())
        .map(|i| if keep(i) { (v[i] - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of [`leaky_relu`]; at the kink the midpoint `(1 + slope) / 2`
/// of the subdifferential, which is what a central difference sees.
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        slope
    } else {
        0.5 * (1.0 + slope)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
