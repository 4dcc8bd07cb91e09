//! Scalar abstraction shared by the sparse and finite-element layers.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real floating-point scalar usable by [`crate::sparsela`] and [`crate::mesh`].
///
/// Implemented for `f32` and `f64`. The statistical layers (EM, inference)
/// are written against `f64` directly.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + nalgebra::Scalar
{
    /// Converts an `f64` constant, panicking only for non-representable input.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }

    /// `C += alpha A B` on strided views: `A` is `m x k`, `B` is `k x n`,
    /// `C` is `m x n`, and element `(i, j)` sits at `i * rs + j * cs`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        (rsa, csa): (usize, usize),
        b: &[Self],
        (rsb, csb): (usize, usize),
        c: &mut [Self],
        (rsc, csc): (usize, usize),
    ) {
        for j in 0..n {
            for p in 0..k {
                let f = alpha * b[p * rsb + j * csb];
                for i in 0..m {
                    c[i * rsc + j * csc] += a[i * rsa + p * csa] * f;
                }
            }
        }
    }
}

fn span(r: usize, c: usize, rs: usize, cs: usize) -> usize {
    if r == 0 || c == 0 {
        0
    } else {
        (r - 1) * rs + (c - 1) * cs + 1
    }
}

macro_rules! blas_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                c: &mut [Self],
                (rsc, csc): (usize, usize),
            ) {
                if m == 0 || n == 0 || k == 0 {
                    return;
                }
                assert!(a.len() >= span(m, k, rsa, csa));
                assert!(b.len() >= span(k, n, rsb, csb));
                assert!(c.len() >= span(m, n, rsc, csc));
                // SAFETY: every index reachable through the strides is in
                // bounds by the assertions above, and `c` is exclusively
                // borrowed so it cannot alias `a` or `b`.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        1.0,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }
        }
    };
}

blas_real!(f32, matrixmultiply::sgemm);
blas_real!(f64, matrixmultiply::dgemm);
