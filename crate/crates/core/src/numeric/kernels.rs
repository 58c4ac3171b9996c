//! Slice-level kernels shared by the forward and backward passes. All matrix
//! arguments are row-major; every kernel accumulates into `out`.

use super::Real;

/// Dot product with eight independent accumulators (fixed summation order).
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out[n,m] += a[n,k] · b[k,m]`
pub fn matmul<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            let br = &b[p * m..(p + 1) * m];
            for (x, &y) in o.iter_mut().zip(br) {
                *x += s * y;
            }
        }
    }
}

/// `out[n,m] += a[n,k] · b[m,k]ᵀ`
pub fn matmul_bt<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] += dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k,m] += a[n,k]ᵀ · b[n,m]`
pub fn matmul_at<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let br = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            let o = &mut out[p * m..(p + 1) * m];
            for (x, &y) in o.iter_mut().zip(br) {
                *x += s * y;
            }
        }
    }
}

/// In-place softmax with max subtraction.
pub fn softmax_row<T: Real>(row: &mut [T]) {
    let mut mx = row[0];
    for &x in row.iter() {
        mx = mx.max(x);
    }
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// `log softmax(row)[i]` for every i.
pub fn log_softmax_row<T: Real>(row: &[T]) -> Vec<T> {
    let mut mx = row[0];
    for &x in row {
        mx = mx.max(x);
    }
    let mut sum = T::zero();
    for &x in row {
        sum += (x - mx).exp();
    }
    let lse = mx + sum.ln();
    row.iter().map(|&x| x - lse).collect()
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `x·Φ(x)` with the exact normal CDF.
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    x * half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = T::from_f64(FRAC_1_SQRT_2PI) * (-(x * x) * half).exp();
    cdf + x * pdf
}
