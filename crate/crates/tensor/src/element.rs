use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Scalar types a [`Tensor`](crate::Tensor) can hold.
///
/// `f32` is the working precision; `f64` exists so gradients can be checked
/// against finite differences without single-precision noise.
pub trait Element:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Row-major general matrix multiply, `c = alpha * op(a) * op(b) + beta * c`,
    /// where `op(a)` is `m x k`, `op(b)` is `k x n` and `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

/// Row/column strides of a row-major `rows x cols` matrix, optionally viewed transposed.
fn strides(trans: bool, cols: usize) -> (isize, isize) {
    if trans {
        (1, cols as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_element {
    ($ty:ty, $kernel:path) => {
        impl Element for $ty {
            fn gemm(
                trans_a: bool,
                trans_b: bool,
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs buffer too small");
                assert!(b.len() >= k * n, "gemm: rhs buffer too small");
                assert!(c.len() >= m * n, "gemm: output buffer too small");
                if m == 0 || n == 0 {
                    return;
                }
                // Stored shapes: a is m x k (or k x m when transposed), b is k x n (or n x k).
                let (rsa, csa) = strides(trans_a, if trans_a { m } else { k });
                let (rsb, csb) = strides(trans_b, if trans_b { k } else { n });
                // SAFETY: the asserts above bound every index the kernel touches
                // (m*k, k*n and m*n elements) for these strides.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);
