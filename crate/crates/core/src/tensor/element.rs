use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Scalar types the tensor engine computes in.
pub trait Element:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * op(a) * op(b) + beta * c` for row-major operands.
    ///
    /// `op(a)` is `m x k`, `op(b)` is `k x n`, `c` is `m x n`. A transposed
    /// operand is stored in its own row-major layout (`k x m` for `a`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // logical rows x cols view
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

fn check_gemm(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert!(a >= m * k && b >= k * n && c >= m * n, "gemm operand too small");
}

impl Element for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    ) {
        check_gemm(m, k, n, a.len(), b.len(), c.len());
        if m == 0 || n == 0 {
            return;
        }
        let (rsa, csa) = strides(m, k, trans_a);
        let (rsb, csb) = strides(k, n, trans_b);
        // SAFETY: bounds checked above; strides describe dense row-major buffers.
        unsafe {
            matrixmultiply::sgemm(
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

impl Element for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    ) {
        check_gemm(m, k, n, a.len(), b.len(), c.len());
        if m == 0 || n == 0 {
            return;
        }
        let (rsa, csa) = strides(m, k, trans_a);
        let (rsb, csb) = strides(k, n, trans_b);
        // SAFETY: as above.
        unsafe {
            matrixmultiply::dgemm(
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]] (2x3), b = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0f64, 2., 3., 4., 5., 6.];
        let b = [1.0f64, 0., 0., 1., 1., 1.];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [4., 5., 10., 11.]);

        // a^T stored as 3x2
        let at = [1.0f64, 4., 2., 5., 3., 6.];
        let mut c2 = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &at, true, &b, false, 0.0, &mut c2);
        assert_eq!(c2, c);

        let bt = [1.0f64, 0., 1., 0., 1., 1.];
        let mut c3 = [1.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, false, &bt, true, 1.0, &mut c3);
        assert_eq!(c3, [5., 6., 11., 12.]);
    }
}
