//! Thin singular value decomposition via one-sided Jacobi rotations.
//!
//! One-sided Jacobi orthogonalizes the columns of the working matrix with
//! complex plane rotations; at convergence the column norms are the singular
//! values and the accumulated rotations form `V`. It is slower than
//! bidiagonalization-based methods but simple, dependency-free, and accurate
//! to near machine precision — more than enough for the matrix sizes this
//! simulator touches (tens of rows/columns).

use num_complex::Complex64;

use super::ComplexMatrix;
use crate::{Error, Result};

/// Thin SVD: `a == u * diag(s) * v^H` with `u: m×k`, `v: n×k`, `k = min(m, n)`,
/// orthonormal columns in both factors, and `s` non-negative descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub s: Vec<f64>,
    pub v: ComplexMatrix,
}

const MAX_SWEEPS: usize = 64;
/// Pairwise off-diagonal threshold relative to the column-norm product.
const JACOBI_TOL: f64 = 1e-13;
/// Relative threshold below which a singular value is treated as rank-
/// deficient when forming `U`'s columns.
const RANK_TOL: f64 = 1e-12;

pub fn svd(a: &ComplexMatrix) -> Result<Svd> {
    if a.is_empty() {
        return Err(Error::Domain {
            op: "svd",
            details: "empty matrix".into(),
        });
    }
    if !a.all_finite() {
        return Err(Error::Numerical(format!(
            "svd input contains non-finite entries ({}x{})",
            a.rows(),
            a.cols()
        )));
    }
    // One-sided Jacobi wants at least as many rows as columns; otherwise
    // decompose the conjugate transpose and swap the factors.
    if a.rows() < a.cols() {
        let t = svd(&a.hermitian())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }

    let m = a.rows();
    let n = a.cols();
    // Column-major working copies: w = A's columns, v = identity columns.
    let mut w: Vec<Vec<Complex64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<Complex64>> = (0..n)
        .map(|j| {
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            col[j] = Complex64::new(1.0, 0.0);
            col
        })
        .collect();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let app: f64 = w[p].iter().map(|z| z.norm_sqr()).sum();
                let aqq: f64 = w[q].iter().map(|z| z.norm_sqr()).sum();
                let apq: Complex64 = w[p]
                    .iter()
                    .zip(&w[q])
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let g = apq.norm();
                if g <= JACOBI_TOL * (app * aqq).sqrt() || g < f64::MIN_POSITIVE {
                    continue;
                }
                rotated = true;
                // Phase factor turning the 2x2 Gram block real, then a
                // classic symmetric Jacobi rotation to diagonalize it.
                let phase = apq / g; // e^{j arg(apq)}
                let tau = (aqq - app) / (2.0 * g);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let pc = phase.conj();
                for i in 0..m {
                    let wp = w[p][i];
                    let wq = pc * w[q][i];
                    w[p][i] = c * wp - s * wq;
                    w[q][i] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[p][i];
                    let vq = pc * v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        // Fingerprint identifies the offending input without dumping it.
        return Err(Error::Numerical(format!(
            "svd failed to converge in {MAX_SWEEPS} sweeps (matrix {}x{}, fro norm {:.6e})",
            m,
            n,
            a.fro_norm_sq().sqrt()
        )));
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = w
        .iter()
        .map(|col| col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = s.first().copied().unwrap_or(0.0);

    // U's columns: normalized W columns where the singular value carries
    // signal, Gram-Schmidt completion where it does not (rank deficiency).
    let mut u_cols: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    for (rank, &j) in order.iter().enumerate() {
        if norms[j] > RANK_TOL * smax && norms[j] > 0.0 {
            u_cols.push(w[j].iter().map(|z| z / norms[j]).collect());
        } else {
            u_cols.push(complete_orthonormal(&u_cols[..rank], m));
        }
    }

    let u = ComplexMatrix::from_columns(&u_cols)?;
    let v_sorted: Vec<Vec<Complex64>> = order.iter().map(|&j| v[j].clone()).collect();
    let v = ComplexMatrix::from_columns(&v_sorted)?;
    Ok(Svd { u, s, v })
}

/// Finds a unit vector orthogonal to all `existing` columns by orthogonalizing
/// standard basis vectors (twice, for numerical hygiene) and keeping the first
/// candidate with non-trivial residual mass.
fn complete_orthonormal(existing: &[Vec<Complex64>], dim: usize) -> Vec<Complex64> {
    for cand in 0..dim {
        let mut vec = vec![Complex64::new(0.0, 0.0); dim];
        vec[cand] = Complex64::new(1.0, 0.0);
        for _ in 0..2 {
            for col in existing {
                let proj: Complex64 = col.iter().zip(&vec).map(|(c, x)| c.conj() * x).sum();
                for (x, c) in vec.iter_mut().zip(col) {
                    *x -= proj * c;
                }
            }
        }
        let norm = vec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.5 {
            return vec.iter().map(|z| z / norm).collect();
        }
    }
    unreachable!("orthonormal completion exists whenever existing.len() < dim");
}

/// Least-squares solve `min_x ||a x - b||_F` via the SVD pseudo-inverse.
///
/// Singular values below `RANK_TOL * s_max` are dropped; when that happens the
/// system is rank-deficient, the minimum-norm solution is returned, and a
/// warning is logged with the effective rank.
pub fn lstsq(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::Shape {
            op: "lstsq",
            details: format!(
                "lhs is {}x{}, rhs is {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        });
    }
    let dec = svd(a)?;
    let k = dec.s.len();
    let smax = dec.s.first().copied().unwrap_or(0.0);
    let kept: usize = dec.s.iter().filter(|&&s| s > RANK_TOL * smax && s > 0.0).count();
    if kept < k {
        log::warn!(
            "lstsq: rank-deficient system ({}x{}, rank {kept} of {k}, s_max {smax:.3e}); \
             returning minimum-norm solution",
            a.rows(),
            a.cols()
        );
    }
    // x = V * diag(1/s) * U^H * b over the retained spectrum.
    let uhb = dec.u.hermitian().matmul(b)?;
    let mut scaled = ComplexMatrix::zeros(k, b.cols());
    for i in 0..kept {
        for j in 0..b.cols() {
            scaled.set(i, j, uhb.at(i, j) / dec.s[i]);
        }
    }
    dec.v.matmul(&scaled)
}
