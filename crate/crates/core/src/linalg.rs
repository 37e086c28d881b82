//! Small dense linear-algebra kernels: a cyclic Jacobi eigensolver for
//! symmetric matrices and an LU solve with partial pivoting. Matrix extents
//! in this crate stay in the low hundreds, where these are entirely adequate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// eigenvector `k` is column `k` of the returned matrix.
pub fn sym_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = match a.shape() {
        [r, c] if r == c => *r,
        s => return Err(Error::dim("sym_eigen (square required)", s, s)),
    };
    let mut m: Vec<f64> = a.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[i * n + j] * m[i * n + j];
            }
        }
        s
    };
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(1e-300);

    for _sweep in 0..100 {
        if off(&m) <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + new_col] = v[r * n + old_col];
        }
    }
    Ok((values, Tensor::new(vec![n, n], vectors)?))
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve(a: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let n = match a.shape() {
        [r, c] if r == c => *r,
        s => return Err(Error::dim("solve (square required)", s, s)),
    };
    if b.len() != n {
        return Err(Error::dim("solve rhs", &[n], &[b.len()]));
    }
    let mut m = a.data().to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if m[r * n + col].abs() > m[pivot * n + col].abs() {
                pivot = r;
            }
        }
        let pval = m[pivot * n + col];
        if pval.abs() < 1e-300 {
            return Err(Error::Numerical(
                "singular linear system; increase the regularizer lambda".into(),
            ));
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        for r in (col + 1)..n {
            let factor = m[r * n + col] / m[col * n + col];
            if factor == 0.0 {
                continue;
            }
            m[r * n + col] = 0.0;
            for k in (col + 1)..n {
                m[r * n + k] -= factor * m[col * n + k];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in (col + 1)..n {
            acc -= m[col * n + k] * x[k];
        }
        x[col] = acc / m[col * n + col];
    }
    Ok(x)
}
