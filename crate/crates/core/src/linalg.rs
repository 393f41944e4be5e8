//! Dense row-major matrix products over f32 and f64.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;

    /// C ← alpha·op(A)·op(B) + beta·C with general strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize, beta: Self, c: &mut [Self], rsc: isize, csc: isize);
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn gemm_raw(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize, beta: Self, c: &mut [Self], rsc: isize, csc: isize) {
        // SAFETY: callers pass slices whose extents cover the strided views (checked in `gemm`).
        unsafe {
            matrixmultiply::sgemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
                c.as_mut_ptr(), rsc, csc)
        }
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn gemm_raw(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize, beta: Self, c: &mut [Self], rsc: isize, csc: isize) {
        // SAFETY: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
                c.as_mut_ptr(), rsc, csc)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// C (m×n) ← alpha·op(A)·op(B) + beta·C for dense row-major buffers.
///
/// `A` is stored m×k when `ta == N` and k×m otherwise; same for `B` with k×n.
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Real>(ta: Op, tb: Op, m: usize, k: usize, n: usize, alpha: F, a: &[F], b: &[F],
    beta: F, c: &mut [F]) {
    assert!(a.len() >= m * k, "A too small");
    assert!(b.len() >= k * n, "B too small");
    assert!(c.len() >= m * n, "C too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    F::gemm_raw(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::ZERO;
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}
