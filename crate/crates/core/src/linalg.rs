//! Dense kernels: row-major matrix products and symmetric eigenpairs, on
//! top of `faer` run sequentially so results are reproducible.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};

fn check_gemm(m: usize, n: usize, k: usize, a: usize, b: usize, c: usize) {
    assert!(a >= m * k, "gemm: A buffer too small");
    assert!(b >= k * n, "gemm: B buffer too small");
    assert!(c >= m * n, "gemm: C buffer too small");
}

/// `op(X)` as an `rows×cols` view of a row-major buffer holding `X` (or `Xᵀ`
/// when `transposed`).
fn view<T: faer::traits::ComplexField>(x: &[T], rows: usize, cols: usize, transposed: bool) -> MatRef<'_, T> {
    if transposed {
        MatRef::from_column_major_slice(&x[..rows * cols], rows, cols)
    } else {
        MatRef::from_row_major_slice(&x[..rows * cols], rows, cols)
    }
}

macro_rules! gemm_impl {
    ($name:ident, $t:ty) => {
        /// Row-major `C = alpha * op(A) * op(B) + beta * C` where `op(A)` is
        /// `m×k` and `op(B)` is `k×n`.
        #[allow(clippy::too_many_arguments)]
        pub fn $name(ta: bool, tb: bool, m: usize, n: usize, k: usize, alpha: $t, a: &[$t], b: &[$t], beta: $t, c: &mut [$t]) {
            check_gemm(m, n, k, a.len(), b.len(), c.len());
            if m == 0 || n == 0 {
                return;
            }
            let accum = if beta == 0.0 {
                Accum::Replace
            } else {
                if beta != 1.0 {
                    c[..m * n].iter_mut().for_each(|v| *v *= beta);
                }
                Accum::Add
            };
            if k == 0 {
                if accum == Accum::Replace {
                    c[..m * n].fill(0.0);
                }
                return;
            }
            let dst = MatMut::from_row_major_slice_mut(&mut c[..m * n], m, n);
            matmul(dst, accum, view(a, m, k, ta), view(b, k, n, tb), alpha, Par::Seq);
        }
    };
}

gemm_impl!(sgemm, f32);
gemm_impl!(dgemm, f64);

/// Symmetric rank-k product. Returns the full `n×n` matrix `alpha * Aᵀ A`
/// (`transpose = true`, A is `k×n`) or `alpha * A Aᵀ` (A is `n×k`), exactly
/// symmetric.
pub fn syrk(transpose: bool, n: usize, k: usize, alpha: f64, a: &[f64]) -> Vec<f64> {
    assert!(a.len() >= n * k);
    let mut c = vec![0.0; n * n];
    if transpose {
        dgemm(true, false, n, n, k, alpha, a, a, 0.0, &mut c);
    } else {
        dgemm(false, true, n, n, k, alpha, a, a, 0.0, &mut c);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            c[i * n + j] = c[j * n + i];
        }
    }
    c
}

/// Largest `count` eigenpairs of a symmetric `n×n` matrix (row-major, only
/// the lower triangle is read). Eigenvalues come back in descending order;
/// eigenvectors are the rows of the returned `count×n` matrix.
pub fn top_eigenpairs(matrix: &[f64], n: usize, count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if matrix.len() != n * n || count == 0 || count > n {
        return Err(Error::dim(format!("top {count} eigenpairs of a {n}×{n} matrix from {} values", matrix.len())));
    }
    let a = MatRef::from_row_major_slice(matrix, n, n);
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("symmetric eigendecomposition failed: {e:?}")))?;
    let (s, u) = (evd.S(), evd.U());
    let mut values = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count * n);
    // Ascending order from the solver; walk it backwards.
    for c in (n - count..n).rev() {
        values.push(s[c]);
        vectors.extend((0..n).map(|r| u[(r, c)]));
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2,3],[4,5,6]] (2x3), B = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        dgemm(false, false, 2, 2, 3, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // Aᵀ A is 3x3
        let mut ata = [0.0; 9];
        dgemm(true, false, 3, 3, 2, 1.0, &a, &a, 0.0, &mut ata);
        assert_eq!(ata, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        assert_eq!(syrk(true, 3, 2, 1.0, &a), ata.to_vec());
        let mut aat = [0.0f32; 4];
        let af: Vec<f32> = a.iter().map(|&x| x as f32).collect();
        sgemm(false, true, 2, 2, 3, 1.0, &af, &af, 0.0, &mut aat);
        assert_eq!(aat, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn eigenpairs_of_diagonal() {
        let m = [2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0];
        let (vals, vecs) = top_eigenpairs(&m, 3, 2).unwrap();
        assert!(top_eigenpairs(&m, 3, 4).is_err());
        assert!((vals[0] - 5.0).abs() < 1e-12 && (vals[1] - 2.0).abs() < 1e-12);
        assert!((vecs[1].abs() - 1.0).abs() < 1e-12);
        assert!((vecs[3].abs() - 1.0).abs() < 1e-12);
    }

    fn naive(ta: bool, tb: bool, m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c0: f64) -> Vec<f64> {
        let mut c = vec![c0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_over_shapes() {
        let shapes = [(3, 5, 2), (17, 33, 7), (32, 576, 16), (5, 300, 7), (64, 100, 40), (64, 1152, 196)];
        for (m, n, k) in shapes {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
            let (af, bf): (Vec<f32>, Vec<f32>) =
                (a.iter().map(|&x| x as f32).collect(), b.iter().map(|&x| x as f32).collect());
            for ta in [false, true] {
                for tb in [false, true] {
                    let want = naive(ta, tb, m, n, k, &a, &b, 0.5);
                    let mut c = vec![0.5; m * n];
                    dgemm(ta, tb, m, n, k, 1.0, &a, &b, 1.0, &mut c);
                    let mut cf = vec![0.5f32; m * n];
                    sgemm(ta, tb, m, n, k, 1.0, &af, &bf, 1.0, &mut cf);
                    for ((w, d), s) in want.iter().zip(&c).zip(&cf) {
                        assert!((w - d).abs() < 1e-9, "dgemm {ta} {tb} {m}x{n}x{k}");
                        assert!((w - *s as f64).abs() < 1e-3 * (1.0 + w.abs()), "sgemm {ta} {tb} {m}x{n}x{k}");
                    }
                }
            }
        }
    }

    #[test]
    fn eigenpairs_have_small_residuals() {
        let n = 300;
        let a: Vec<f64> = (0..n * 400).map(|i| ((i as f64) * 0.37).sin() + ((i % 7) as f64) * 0.1).collect();
        let c = syrk(true, n, 400, 1.0 / 400.0, &a);
        let (vals, vecs) = top_eigenpairs(&c, n, 40).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for e in 0..40 {
            let v = &vecs[e * n..(e + 1) * n];
            let norm: f64 = v.iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-10);
            for i in 0..n {
                let av: f64 = (0..n).map(|j| c[i * n + j] * v[j]).sum();
                assert!((av - vals[e] * v[i]).abs() < 1e-9 * vals[0]);
            }
        }
    }
}
