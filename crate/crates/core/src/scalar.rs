//! Floating-point scalar abstraction shared by the tensor engine and models.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// A real scalar the engine can compute with.
///
/// Besides the usual `Float` arithmetic, each scalar supplies a dense
/// matrix-multiply kernel; the convolution and dense layers route all their
/// heavy lifting through it.
pub trait Scalar: Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static {
    const NAME: &'static str;

    /// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
    ///
    /// `op(a)` is `m x k`: when `trans_a` is false `a` is stored `m x k`,
    /// otherwise it is stored `k x m`. Same convention for `b` (`k x n`).
    /// `c` is always stored `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

fn strides(trans: bool, rows: usize, cols: usize) -> (isize, isize) {
    // Logical (rows x cols) view over a row-major buffer.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_dims(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: usize,
    b: usize,
    c: usize,
) -> ((isize, isize), (isize, isize)) {
    assert!(a >= m * k, "gemm: lhs buffer too short");
    assert!(b >= k * n, "gemm: rhs buffer too short");
    assert!(c >= m * n, "gemm: output buffer too short");
    (strides(trans_a, m, k), strides(trans_b, k, n))
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                trans_a: bool,
                trans_b: bool,
                m: usize,
                n: usize,
                k: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let ((rsa, csa), (rsb, csb)) = check_gemm_dims(trans_a, trans_b, m, n, k, a.len(), b.len(), c.len());
                // SAFETY: the buffer lengths were checked against the logical
                // dimensions and the strides never leave those bounds.
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

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);
