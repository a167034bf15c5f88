//! Scalar abstraction shared by the DSP and network code.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
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
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real always converts to f64")
    }

    /// `c = a · b` for an `m × k` by `k × n` product with explicit
    /// `(row, column)` strides on every operand.
    fn gemm(dims: (usize, usize, usize), a: &[Self], sa: Strides, b: &[Self], sb: Strides, c: &mut [Self], sc: Strides);
}

/// `(row stride, column stride)` in elements.
pub type Strides = (usize, usize);

fn extent((m, n): (usize, usize), (rs, cs): Strides) -> usize {
    if m == 0 || n == 0 {
        0
    } else {
        (m - 1) * rs + (n - 1) * cs + 1
    }
}

const AXPY_MAX_ROWS: usize = 4;

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm((m, k, n): (usize, usize, usize), a: &[Self], sa: Strides, b: &[Self], sb: Strides, c: &mut [Self], sc: Strides) {
                assert!(a.len() >= extent((m, k), sa) && b.len() >= extent((k, n), sb) && c.len() >= extent((m, n), sc));
                if m == 0 || n == 0 {
                    return;
                }
                // repacking b costs more than the product itself
                if m <= AXPY_MAX_ROWS && sb.1 == 1 && sc.1 == 1 {
                    for i in 0..m {
                        let row = &mut c[i * sc.0..i * sc.0 + n];
                        row.fill(0.0);
                        for p in 0..k {
                            let aip = a[i * sa.0 + p * sa.1];
                            row.iter_mut().zip(&b[p * sb.0..p * sb.0 + n]).for_each(|(o, &v)| *o += aip * v);
                        }
                    }
                    return;
                }
                // SAFETY: every operand's extent under its strides was checked above.
                unsafe {
                    $gemm(
                        m, k, n, 1.0,
                        a.as_ptr(), sa.0 as isize, sa.1 as isize,
                        b.as_ptr(), sb.0 as isize, sb.1 as isize,
                        0.0,
                        c.as_mut_ptr(), sc.0 as isize, sc.1 as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
