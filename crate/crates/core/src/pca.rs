//! Principal component analysis by explicit covariance eigendecomposition.
//!
//! Rows are observations. The data is centered, the sample covariance
//! (divisor n−1) eigendecomposed with a cyclic Jacobi sweep, and components
//! returned in non-increasing eigenvalue order.

use crate::{Error, Result};

/// PCA of a set of vectors.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Component directions, one per row, unit length, ordered by variance.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the covariance, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// explained_variance[i] = eigenvalues[i] / Σ eigenvalues.
    pub explained_variance: Vec<f64>,
    /// Column means removed before decomposition.
    pub mean: Vec<f64>,
}

impl PcaResult {
    /// Project one observation onto the first `k` components.
    pub fn project(&self, x: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; k];
        for (j, comp) in self.components.iter().take(k).enumerate() {
            out[j] = x
                .iter()
                .zip(comp.iter().zip(&self.mean))
                .map(|(&xi, (&ci, &mi))| (xi - mi) * ci)
                .sum();
        }
        out
    }

    /// Reconstruct the centered observation from all components.
    pub fn reconstruct_centered(&self, projected_full: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = vec![0.0; d];
        for (j, comp) in self.components.iter().enumerate() {
            for i in 0..d {
                out[i] += projected_full[j] * comp[i];
            }
        }
        out
    }
}

/// Compute the PCA of `rows` (each an observation of equal dimension).
///
/// Fails on fewer than 3 observations or on data with (numerically) zero
/// total variance, where explained-variance ratios are undefined.
pub fn pca(rows: &[Vec<f64>]) -> Result<PcaResult> {
    if rows.len() < 3 {
        return Err(Error::Degenerate("need at least 3 observations"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape {
            context: "pca rows",
            expected: d,
            got: rows.iter().map(|r| r.len()).find(|&l| l != d).unwrap_or(d),
        });
    }
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for i in 0..d {
            mean[i] += r[i];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Sample covariance, divisor n−1.
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let ci = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += ci * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if !(total > 1e-300) {
        return Err(Error::Degenerate("zero covariance"));
    }

    let (mut eigenvalues, mut vectors) = jacobi_eigen(&mut cov, d);

    // Order by eigenvalue, non-increasing; clamp tiny negatives from roundoff.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
    eigenvalues = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();
    vectors = order.iter().map(|&i| std::mem::take(&mut vectors[i])).collect();

    let sum: f64 = eigenvalues.iter().sum();
    let explained_variance = eigenvalues.iter().map(|&l| l / sum).collect();

    Ok(PcaResult {
        components: vectors,
        eigenvalues,
        explained_variance,
        mean,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (destroys `a`).
/// Returns (eigenvalues, eigenvectors as rows).
fn jacobi_eigen(a: &mut [f64], d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[p * d + k];
                    let vkq = v[q * d + k];
                    v[p * d + k] = c * vkp - s * vkq;
                    v[q * d + k] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    let vectors: Vec<Vec<f64>> = (0..d).map(|i| v[i * d..(i + 1) * d].to_vec()).collect();
    (eigenvalues, vectors)
}
