//! Small dense symmetric eigensolver and the nuclear norm built on it.

use crate::error::{DadaError, Result};
use crate::tensor::{matmul_raw, matmul_tn_raw, Tensor};

/// Sweep cap for the cyclic Jacobi solver.
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Singular values below this are dropped from the nuclear-norm gradient.
pub const SINGULAR_CLAMP: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix. `vectors` is row-major with
/// eigenvector `k` stored in column `k`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
    pub n: usize,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n×n` row-major matrix.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> Result<SymmetricEigen> {
    if matrix.len() != n * n {
        return Err(DadaError::Dimension {
            op: "jacobi_eigen",
            lhs: vec![n, n],
            rhs: vec![matrix.len()],
        });
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 || n == 1 {
        return Ok(SymmetricEigen {
            values: (0..n).map(|i| a[i * n + i]).collect(),
            vectors: v,
            n,
            sweeps: 0,
        });
    }
    let tol = scale * 1e-16;

    for sweep in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            return Ok(SymmetricEigen {
                values: (0..n).map(|i| a[i * n + i]).collect(),
                vectors: v,
                n,
                sweeps: sweep,
            });
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(DadaError::numeric(format!(
        "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps ({n}x{n})"
    )))
}

/// Nuclear norm of a matrix and the `U·Vᵀ` (sub)gradient of the thin SVD.
pub fn nuclear_norm_with_grad(a: &Tensor) -> Result<(f64, Vec<f64>)> {
    let (n, c) = (a.rows(), a.cols());
    if c <= n {
        // Gram = AᵀA (c×c); grad = A · V Σ⁻¹ Vᵀ
        let gram = matmul_tn_raw(a.data(), a.data(), n, c, c);
        let eig = jacobi_eigen(&gram, c)?;
        let (norm, inv) = inverse_sqrt_projector(&eig);
        Ok((norm, matmul_raw(a.data(), &inv, n, c, c)))
    } else {
        // Gram = AAᵀ (n×n); grad = U Σ⁻¹ Uᵀ · A
        let at = a.transpose();
        let gram = matmul_tn_raw(at.data(), at.data(), c, n, n);
        let eig = jacobi_eigen(&gram, n)?;
        let (norm, inv) = inverse_sqrt_projector(&eig);
        Ok((norm, matmul_raw(&inv, a.data(), n, n, c)))
    }
}

/// Returns `Σ σ_k` and `Σ_{σ_k > clamp} v_k v_kᵀ / σ_k` for a Gram eigensystem.
fn inverse_sqrt_projector(eig: &SymmetricEigen) -> (f64, Vec<f64>) {
    let n = eig.n;
    let mut norm = 0.0;
    let mut proj = vec![0.0; n * n];
    // Gram eigenvalues at round-off level are zero singular values.
    let top = eig.values.iter().fold(0.0f64, |m, &v| m.max(v));
    let floor = top * n as f64 * f64::EPSILON * 8.0;
    for k in 0..n {
        let sigma = if eig.values[k] > floor { eig.values[k].sqrt() } else { 0.0 };
        norm += sigma;
        if sigma <= SINGULAR_CLAMP {
            continue;
        }
        for i in 0..n {
            let vik = eig.vectors[i * n + k] / sigma;
            for j in 0..n {
                proj[i * n + j] += vik * eig.vectors[j * n + k];
            }
        }
    }
    (norm, proj)
}
