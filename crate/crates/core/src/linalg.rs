//! Dense row-major kernels shared by the probe and SAE code.
//!
//! Everything is generic over [`Real`] so the same forward/backward code runs
//! in `f32` for training and in `f64` for finite-difference gradient checks.

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Send + Sync + std::fmt::Debug + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
                    }
                };
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output too short");
                // SAFETY: the asserts above bound every index the kernel touches.
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
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// `c[m,n] (+)= a[m,k] * b[n,k]^T`
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T], acc: bool) {
    let beta = if acc { T::one() } else { T::zero() };
    T::gemm(
        m, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1,
    );
}

/// `c[m,n] (+)= a[k,m]^T * b[k,n]`
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T], acc: bool) {
    let beta = if acc { T::one() } else { T::zero() };
    T::gemm(
        m, k, n, T::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1,
    );
}

/// `c[m,n] (+)= a[m,k] * b[k,n]`
pub fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T], acc: bool) {
    let beta = if acc { T::one() } else { T::zero() };
    T::gemm(
        m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1,
    );
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    }
}
