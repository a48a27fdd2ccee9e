//! Dense-math primitives with hand-written backward passes.
//!
//! Everything here works on flat row-major slices. Matrices are stored
//! `out × in`, so a linear layer is `y = x · Wᵀ`; batched inputs are stacked
//! rows. The [`Real`] trait lets the same code run in `f32` for training and
//! `f64` for gradient checks.

mod activations;
mod gradcheck;
mod linalg;
mod norm;
mod tensor;

pub use activations::{relu, sigmoid, silu, silu_grad, softplus};
pub use gradcheck::{grad_check, grad_check_stepped, GradCheckReport, STEP_LADDER};
pub use linalg::{dot, linear, linear_input_grad, linear_weight_grad, swiglu_ffn};
pub use norm::{
    relu_l2norm, relu_l2norm_backward, relu_l2norm_row, rmsnorm, rmsnorm_row,
    rmsnorm_row_backward, DEFAULT_EPS,
};
pub use tensor::{contract_keys, delta_update, HeadTensor, Tensor};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar the model can run in.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// General matrix multiply `C = alpha·A·B + beta·C` with explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds `m×k`, `k×n`, and `m×n`
    /// matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
