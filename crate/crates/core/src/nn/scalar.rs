use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Element type of a [`Tensor`](super::Tensor): `f32` or `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + 'static {
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C = alpha · A · B + beta · C` with arbitrary strides.
    ///
    /// # Safety
    /// Strides and dimensions must describe memory inside the given pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize,
        alpha: Self, a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    );
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize,
        alpha: f32, a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize,
        alpha: f64, a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major `C[m×n] (+)= op(A)[m×k] · op(B)[k×n]`.
///
/// `a_t` means `a` is stored as `k×m`; `b_t` means `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every access implied by the strides.
    unsafe {
        T::gemm_raw(
            m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_layouts() {
        // A = [[1,2,3],[4,5,6]], B = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let expected = [4.0, 5.0, 10.0, 11.0];
        for (aa, a_t) in [(&a, false), (&at, true)] {
            for (bb, b_t) in [(&b, false), (&bt, true)] {
                let mut c = [0.0f64; 4];
                gemm(2, 3, 2, aa, a_t, bb, b_t, &mut c, false);
                assert_eq!(c, expected);
            }
        }
        let mut c = [1.0f64; 4];
        gemm(2, 3, 2, &a, false, &b, false, &mut c, true);
        assert_eq!(c, [5.0, 6.0, 11.0, 12.0]);
    }
}
