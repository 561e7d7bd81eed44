//! Dense arrays and reverse-mode differentiation.

mod array;
mod gradcheck;
mod tape;

pub use array::NumArray;
pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{elementwise, ElementwiseKind, Gradients, Tape, Var};

use crate::error::Result;

/// Matrix product of two recorded 2-D arrays.
pub fn matmul<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    a.matmul(b)
}

/// Population mean and variance along `axis`, both differentiable.
pub fn reduce_mean_var(x: Var<'_>, axis: usize) -> Result<(Var<'_>, Var<'_>)> {
    x.mean_var(axis)
}

/// Depthwise zero-padded convolution that preserves the time length.
pub fn conv1d_same<'t>(x: Var<'t>, kernel: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    x.conv1d_same(kernel, bias)
}

/// Runs reverse accumulation from a scalar `loss`.
pub fn backward(tape: &Tape, loss: Var<'_>) -> Result<Gradients> {
    tape.backward(loss)
}
