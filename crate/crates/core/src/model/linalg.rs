use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point element type of the model: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Debug + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    /// Raw strided GEMM, `c = alpha * a * b + beta * c`.
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major operand: `trans` reads the stored matrix transposed; `ld` is
/// the stored row stride.
#[derive(Clone, Copy)]
pub(crate) struct Op<'a, T> {
    pub data: &'a [T],
    pub ld: usize,
    pub trans: bool,
}

pub(crate) fn n<T>(data: &[T], ld: usize) -> Op<'_, T> {
    Op { data, ld, trans: false }
}

pub(crate) fn t<T>(data: &[T], ld: usize) -> Op<'_, T> {
    Op { data, ld, trans: true }
}

fn strides<T>(op: &Op<'_, T>, rows: usize, cols: usize) -> (isize, isize) {
    let (stored_rows, stored_cols) = if op.trans { (cols, rows) } else { (rows, cols) };
    if stored_rows > 0 && stored_cols > 0 {
        assert!(stored_cols <= op.ld, "leading dimension too small");
        assert!(
            (stored_rows - 1) * op.ld + stored_cols <= op.data.len(),
            "operand out of bounds"
        );
    }
    if op.trans {
        (1, op.ld as isize)
    } else {
        (op.ld as isize, 1)
    }
}

/// `c[m×n] = alpha * op(a)[m×k] * op(b)[k×n] + beta * c`, with `c` stored
/// row-major at stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: Op<'_, T>,
    b: Op<'_, T>,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(n <= ldc && (m - 1) * ldc + n <= c.len(), "output out of bounds");
    if k == 0 {
        for i in 0..m {
            for x in &mut c[i * ldc..i * ldc + n] {
                *x = if beta == T::zero() { T::zero() } else { *x * beta };
            }
        }
        return;
    }
    let (rsa, csa) = strides(&a, m, k);
    let (rsb, csb) = strides(&b, k, n);
    // SAFETY: bounds of all three operands were checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        )
    }
}

pub(crate) fn add_row_bias<T: Real>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

pub(crate) fn add_column_sums<T: Real>(acc: &mut [T], x: &[T]) {
    for row in x.chunks_exact(acc.len()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += *v;
        }
    }
}
