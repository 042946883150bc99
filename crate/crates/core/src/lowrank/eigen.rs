//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! The matrices we decompose are small Gram matrices (`m x m` with
//! `m` in the hundreds), where Jacobi's O(m³)-per-sweep cost is easily
//! affordable and its accuracy — eigenvalues good to machine precision,
//! eigenvectors orthogonal by construction — is exactly what the basis
//! orthonormality budget (1e-10) demands.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Relative off-diagonal tolerance: converged when the off-diagonal
/// Frobenius norm drops below `tol * ||A||_F`.
pub const JACOBI_TOL: f64 = 1e-12;

/// Sweep budget. Jacobi converges quadratically once rotations are small;
/// well-conditioned Gram matrices need 6-10 sweeps, so 30 is generous.
pub const JACOBI_MAX_SWEEPS: usize = 30;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted in
/// nonincreasing order and eigenvectors as the corresponding columns.
/// The input is symmetrized as `(A + Aᵀ)/2` first, so tiny asymmetries
/// from accumulated rounding are harmless.
pub fn symmetric_eig(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }

    // Work on a symmetrized copy in a flat row-major buffer; the hot loop
    // below indexes it directly.
    let mut m = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a[[i, j]] + a[[j, i]]);
        }
    }
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let fro: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if fro == 0.0 {
        // Zero matrix: all eigenvalues zero, identity eigenvectors.
        return Ok((Array1::zeros(n), Array2::eye(n)));
    }
    let threshold = JACOBI_TOL * fro;

    let mut converged = false;
    let mut last_off = f64::INFINITY;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    let x = m[p * n + q];
                    s += 2.0 * x * x;
                }
            }
            s.sqrt()
        };
        last_off = off;
        if off <= threshold {
            converged = true;
            break;
        }

        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // tan of the rotation angle; the |theta| guard avoids
                // overflow in theta² for nearly-diagonal pairs.
                let t = if theta.abs() > 1e10 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[r * n + p];
                    let arq = m[r * n + q];
                    let new_rp = arp - s * (arq + tau * arp);
                    let new_rq = arq + s * (arp - tau * arq);
                    m[r * n + p] = new_rp;
                    m[p * n + r] = new_rp;
                    m[r * n + q] = new_rq;
                    m[q * n + r] = new_rq;
                }
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = vrp - s * (vrq + tau * vrp);
                    v[r * n + q] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }

    if !converged {
        return Err(Error::ConvergenceFailure { off: last_off, sweeps: JACOBI_MAX_SWEEPS });
    }

    // Sort eigenpairs by eigenvalue, descending; stable so exact ties keep
    // the sweep order and results stay reproducible.
    let mut order: Vec<usize> = (0..n).collect();
    order
        .sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).expect("eigenvalues are finite"));

    let mut eigenvalues = Array1::zeros(n);
    let mut eigenvectors = Array2::zeros((n, n));
    for (out_col, &src) in order.iter().enumerate() {
        eigenvalues[out_col] = m[src * n + src];
        for r in 0..n {
            eigenvectors[[r, out_col]] = v[r * n + src];
        }
    }
    Ok((eigenvalues, eigenvectors))
}
