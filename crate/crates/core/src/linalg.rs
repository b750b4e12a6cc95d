//! Scalar abstraction and the handful of dense kernels the network needs.
//!
//! Matrices are row-major slices. [`gemm`] accepts explicit strides so the
//! recurrent step can write straight into a time-strided gate buffer.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating point type the network can run at (32-bit for training and
/// inference, 64-bit for gradient checks).
pub trait Real:
    Float + Default + Debug + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing (for `c`) matrices.
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

    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite constant")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
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
    unsafe fn gemm_raw(
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

/// A strided view into a slice: element `(i, j)` lives at `offset + i*rs + j*cs`.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    /// Plain row-major `rows × cols` matrix at the start of the slice.
    pub const fn rows(cols: usize) -> Self {
        Layout {
            offset: 0,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub const fn transposed(cols: usize) -> Self {
        Layout {
            offset: 0,
            rs: 1,
            cs: cols,
        }
    }

    pub const fn at(self, offset: usize) -> Self {
        Layout { offset, ..self }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return self.offset;
        }
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C = alpha * A B + beta * C` with `A: m×k`, `B: k×n`, `C: m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<R: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: R,
    a: &[R],
    la: Layout,
    b: &[R],
    lb: Layout,
    beta: R,
    c: &mut [R],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || la.last_index(m, k) < a.len(), "gemm: A out of bounds");
    assert!(k == 0 || lb.last_index(k, n) < b.len(), "gemm: B out of bounds");
    assert!(lc.last_index(m, n) < c.len(), "gemm: C out of bounds");
    // SAFETY: bounds checked above; `c` is uniquely borrowed so it cannot alias `a`/`b`.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(la.offset),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr().add(lb.offset),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.rs as isize,
            lc.cs as isize,
        )
    }
}

#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

/// Hyperbolic tangent through a single `exp`; several times faster than the
/// libm routine and within a few ulp of it.
#[inline]
pub fn tanh<R: Real>(x: R) -> R {
    let t = (-(x.abs() + x.abs())).exp();
    ((R::one() - t) / (R::one() + t)).copysign(x)
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_into<R: Real>(logits: &[R], out: &mut [R]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits
        .iter()
        .copied()
        .fold(R::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut total = R::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

pub fn softmax<R: Real>(logits: &[R]) -> Vec<R> {
    let mut out = vec![R::zero(); logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<R: PartialOrd + Copy>(xs: &[R]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
