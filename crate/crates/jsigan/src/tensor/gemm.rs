//! Thin row-major matrix-multiply wrappers over `matrixmultiply`.
//!
//! Convolution and fully-connected layers lower to these calls; everything
//! here is deterministic for fixed shapes, so bit-exact reproducibility is
//! preserved.

use rayon::prelude::*;

use super::Element;
use crate::threads::threads;

/// Below this output width, a direct streaming kernel beats the packed GEMM:
/// the left matrix is read once in row order instead of being repacked.
const DIRECT_N: usize = 64;

/// Work sizes below this stay sequential even when threads are available.
const PAR_MIN_FLOP: usize = 1 << 22;


/// Number of row chunks to split an `m x n` output into for the current
/// thread cap (1 = stay sequential).
fn split_for(m: usize, k: usize, n: usize) -> usize {
    let t = threads();
    if t > 1 && m >= 2 * t && 2 * m * k * n >= PAR_MIN_FLOP {
        t
    } else {
        1
    }
}

/// `c[m x n] = a[m x k] @ b[k x n]`, all row-major contiguous.
///
/// Splits output rows across workers when a thread cap above 1 is set; each
/// element is still produced by one kernel call, so only scheduling changes.
pub fn matmul<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "out size");
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let chunks = split_for(m, k, n);
    if chunks > 1 {
        let rows = m.div_ceil(chunks);
        c.par_chunks_mut(rows * n)
            .enumerate()
            .for_each(|(i, cc)| {
                let lo = i * rows;
                let sub_m = cc.len() / n;
                matmul_one(sub_m, k, n, &a[lo * k..(lo + sub_m) * k], b, cc);
            });
    } else {
        matmul_one(m, k, n, a, b, c);
    }
}

fn matmul_one<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    if n <= DIRECT_N {
        c.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for (l, &av) in arow.iter().enumerate() {
                let brow = &b[l * n..(l + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
        return;
    }
    matmul_acc(m, k, n, a, b, c, T::zero())
}

/// `c = a @ b + beta * c`, all row-major contiguous.
pub fn matmul_acc<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    beta: T,
) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "out size");
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m x n] = a^T[m x k] @ b[k x n]` where `a` is stored as `k x m` row-major.
pub fn matmul_at<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), k * m, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "out size");
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let chunks = split_for(m, k, n);
    if chunks > 1 {
        let rows = m.div_ceil(chunks);
        c.par_chunks_mut(rows * n)
            .enumerate()
            .for_each(|(i, cc)| {
                matmul_at_one(i * rows, cc.len() / n, m, k, n, a, b, cc);
            });
    } else {
        matmul_at_one(0, m, m, k, n, a, b, c);
    }
}

/// Rows `[lo, lo + sub_m)` of the transposed product.
fn matmul_at_one<T: Element>(
    lo: usize,
    sub_m: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    if n <= DIRECT_N {
        c.iter_mut().for_each(|v| *v = T::zero());
        for l in 0..k {
            let atrow = &a[l * m + lo..l * m + lo + sub_m];
            let brow = &b[l * n..(l + 1) * n];
            for (i, &av) in atrow.iter().enumerate() {
                let crow = &mut c[i * n..(i + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
        return;
    }
    unsafe {
        T::gemm(
            sub_m,
            k,
            n,
            T::one(),
            a.as_ptr().add(lo),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            T::zero(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m x n] = a[m x k] @ b^T[k x n]` where `b` is stored as `n x k` row-major.
/// Accumulates into `c` when `beta` is one.
pub fn matmul_bt_acc<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    beta: T,
) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), n * k, "rhs size");
    assert_eq!(c.len(), m * n, "out size");
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let chunks = split_for(m, k, n);
    let rows = if chunks > 1 { m.div_ceil(chunks) } else { m };
    let run = |lo: usize, sub_m: usize, cc: &mut [T]| unsafe {
        T::gemm(
            sub_m,
            k,
            n,
            T::one(),
            a.as_ptr().add(lo * k),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            cc.as_mut_ptr(),
            n as isize,
            1,
        );
    };
    if chunks > 1 {
        c.par_chunks_mut(rows * n)
            .enumerate()
            .for_each(|(i, cc)| run(i * rows, cc.len() / n, cc));
    } else {
        run(0, m, c);
    }
}


#[cfg(test)]
mod par_tests {
    use super::*;
    use crate::threads::set_threads;

    #[test]
    fn parallel_split_matches_sequential() {
        let (m, k, n) = (256usize, 512, 128);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.13).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.07).cos()).collect();
        let run = |t: usize| {
            set_threads(t);
            let mut c1 = vec![0.0; m * n];
            matmul(m, k, n, &a, &b, &mut c1);
            let mut c2 = vec![0.0; m * n];
            matmul_at(m, k, n, &a[..k * m], &b, &mut c2);
            let mut c3 = vec![0.0; m * n];
            matmul_bt_acc(m, k, n, &a, &b[..n * k], &mut c3, 0.0);
            set_threads(0);
            (c1, c2, c3)
        };
        let seq = run(0);
        let par = run(3);
        assert_eq!(seq.0, par.0);
        assert_eq!(seq.1, par.1);
        assert_eq!(seq.2, par.2);
    }
}
