//! Differentiable operations, exposed as methods on [`Var`](crate::autograd::Var).

mod attention;
mod conv;
mod elementwise;
mod matmul;
mod norm;
mod pool;
mod shape;

pub use attention::attention_weights;
pub use conv::{conv_output_size, Conv2dOptions};
pub use norm::{BatchNormOptions, NormMode, RunningStats};

pub(crate) use elementwise::sigmoid_scalar;

/// Splits a shape around `axis` into `(outer, axis_len, inner)` extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
