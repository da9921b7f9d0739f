//! Minimal dense symmetric linear algebra for the embedding-distance
//! metric: a cyclic Jacobi eigendecomposition sized for the small (≤ 64²)
//! covariance matrices this crate produces.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Takes a row-major `dim * dim` symmetric matrix and returns
/// `(eigenvalues, eigenvectors)` with eigenvectors stored row-major,
/// column `k` belonging to eigenvalue `k`, so `A == V diag(λ) Vᵀ`.
/// The caller guarantees symmetry; rotations preserve it.
pub(crate) fn jacobi_symmetric(matrix: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(matrix.len(), dim * dim);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; dim * dim];
    for i in 0..dim {
        v[i * dim + i] = 1.0;
    }
    if dim < 2 {
        return ((0..dim).map(|i| a[i * dim + i]).collect(), v);
    }

    let frobenius = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tolerance = (frobenius * 1e-15).max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        let off_norm = {
            let mut sum = 0.0;
            for p in 0..dim {
                for q in p + 1..dim {
                    sum += a[p * dim + q] * a[p * dim + q];
                }
            }
            (2.0 * sum).sqrt()
        };
        if off_norm <= tolerance {
            break;
        }
        for p in 0..dim - 1 {
            for q in p + 1..dim {
                let apq = a[p * dim + q];
                if apq.abs() <= tolerance / (dim * dim) as f64 {
                    continue;
                }
                // Rotation angle that zeroes a[p][q].
                let theta = (a[q * dim + q] - a[p * dim + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // a := Jᵀ a J, applied as column then row updates.
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
                for k in 0..dim {
                    let vkp = v[k * dim + p];
                    let vkq = v[k * dim + q];
                    v[k * dim + p] = c * vkp - s * vkq;
                    v[k * dim + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    ((0..dim).map(|i| a[i * dim + i]).collect(), v)
}

/// Row-major product of two `dim * dim` matrices.
pub(crate) fn mat_mul(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..dim {
                out[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    out
}

/// Symmetric positive-semidefinite square root via eigendecomposition,
/// with negative eigenvalues (rounding noise on a PSD input) clamped to 0.
pub(crate) fn sqrt_psd(matrix: &[f64], dim: usize) -> Vec<f64> {
    let (eigenvalues, vectors) = jacobi_symmetric(matrix, dim);
    let roots: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut sum = 0.0;
            for (k, &root) in roots.iter().enumerate() {
                sum += vectors[i * dim + k] * root * vectors[j * dim + k];
            }
            out[i * dim + j] = sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reconstruct(eigenvalues: &[f64], vectors: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                for (k, &l) in eigenvalues.iter().enumerate() {
                    out[i * dim + j] += vectors[i * dim + k] * l * vectors[j * dim + k];
                }
            }
        }
        out
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn diagonal_matrix_is_its_own_decomposition() {
        let m = [3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.5];
        let (eigenvalues, vectors) = jacobi_symmetric(&m, 3);
        assert_eq!(eigenvalues, vec![3.0, -1.0, 0.5]);
        let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(vectors, identity.to_vec());
    }

    #[test]
    fn two_by_two_matches_hand_solution() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let m = [2.0, 1.0, 1.0, 2.0];
        let (mut eigenvalues, vectors) = jacobi_symmetric(&m, 2);
        eigenvalues.sort_by(f64::total_cmp);
        assert!((eigenvalues[0] - 1.0).abs() <= 1e-12);
        assert!((eigenvalues[1] - 3.0).abs() <= 1e-12);
        // Columns are orthonormal.
        for a in 0..2 {
            for b in 0..2 {
                let dot: f64 = (0..2).map(|k| vectors[k * 2 + a] * vectors[k * 2 + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sqrt_of_psd_matrix_squares_back() {
        // B = [[1, 2], [0, 1]], A = BᵀB is PSD.
        let a = [1.0, 2.0, 2.0, 5.0];
        let root = sqrt_psd(&a, 2);
        let squared = mat_mul(&root, &root, 2);
        assert!(max_abs_diff(&squared, &a) <= 1e-12);
    }

    #[test]
    fn single_element_matrix_is_trivial() {
        let (eigenvalues, vectors) = jacobi_symmetric(&[4.0], 1);
        assert_eq!(eigenvalues, vec![4.0]);
        assert_eq!(vectors, vec![1.0]);
        assert_eq!(sqrt_psd(&[4.0], 1), vec![2.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn decomposition_reconstructs_random_symmetric_matrices(
            dim in 1usize..6,
            raw in proptest::collection::vec(-5.0f64..5.0, 36),
        ) {
            let mut m = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    m[i * dim + j] = (raw[i * 6 + j] + raw[j * 6 + i]) / 2.0;
                }
            }
            let (eigenvalues, vectors) = jacobi_symmetric(&m, dim);
            prop_assert!(max_abs_diff(&reconstruct(&eigenvalues, &vectors, dim), &m) <= 1e-9);
            for a in 0..dim {
                for b in 0..dim {
                    let dot: f64 = (0..dim)
                        .map(|k| vectors[k * dim + a] * vectors[k * dim + b])
                        .sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn gram_matrices_have_nonnegative_spectra(
            dim in 1usize..5,
            raw in proptest::collection::vec(-3.0f64..3.0, 25),
        ) {
            // A = BᵀB is PSD by construction.
            let mut b = vec![0.0; dim * dim];
            for (index, value) in b.iter_mut().enumerate() {
                *value = raw[index];
            }
            let mut a = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    a[i * dim + j] = (0..dim).map(|k| b[k * dim + i] * b[k * dim + j]).sum();
                }
            }
            let (eigenvalues, _) = jacobi_symmetric(&a, dim);
            for l in eigenvalues {
                prop_assert!(l >= -1e-9);
            }
        }
    }
}
