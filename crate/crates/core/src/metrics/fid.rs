use super::linalg::{psd_eigenvalues, sqrtm_psd, Matrix};
use crate::data::FeatureTable;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Rows per accumulation chunk; chunk partials are combined in order, so
/// the statistics do not depend on the thread count.
const CHUNK_ROWS: usize = 256;

/// Mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn gaussian_stats(features: &FeatureTable) -> Result<GaussianStats> {
    gaussian_stats_with(features, Execution::default())
}

pub fn gaussian_stats_with(features: &FeatureTable, exec: Execution) -> Result<GaussianStats> {
    let n = features.len();
    let d = features.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 feature rows for a covariance, got {n}"
        )));
    }
    let chunks = n.div_ceil(CHUNK_ROWS);
    let rows = |c: usize| (c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n)).map(|i| features.row(i));

    let partial_sums = exec.map_range(chunks, |c| {
        let mut s = vec![0.0; d];
        for r in rows(c) {
            s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        s
    });
    let mut mean = vec![0.0; d];
    for s in partial_sums {
        mean.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);

    let partial_cov = exec.map_range(chunks, |c| {
        let mut acc = vec![0.0; d * d];
        let mut centered = vec![0.0; d];
        for r in rows(c) {
            centered.iter_mut().zip(r.iter().zip(&mean)).for_each(|(x, (v, m))| *x = v - m);
            for i in 0..d {
                let ci = centered[i];
                for j in i..d {
                    acc[i * d + j] += ci * centered[j];
                }
            }
        }
        acc
    });
    let mut upper = vec![0.0; d * d];
    for p in partial_cov {
        upper.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let mut cov = Matrix::zeros(d);
    for i in 0..d {
        for j in i..d {
            let v = upper[i * d + j] / (n - 1) as f64;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(GaussianStats { mean, cov, n })
}

/// Fréchet distance between two Gaussians,
/// `‖μ₁−μ₂‖² + Tr Σ₁ + Tr Σ₂ − 2·Tr √(Σ₁^½ Σ₂ Σ₁^½)`.
///
/// The symmetric sandwich keeps every square root on a symmetric PSD matrix.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.n() != a.dim() || b.cov.n() != b.dim() {
        return Err(Error::Dimension(format!(
            "Gaussian statistics of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let root_a = sqrtm_psd(&a.cov)?;
    let sandwich = root_a.matmul(&b.cov).matmul(&root_a).symmetrized();
    let tr_covmean: f64 = psd_eigenvalues(&sandwich)?.iter().map(|v| v.sqrt()).sum();
    let (tr_a, tr_b) = (a.cov.trace(), b.cov.trace());
    let d = mean_term + tr_a + tr_b - 2.0 * tr_covmean;
    let scale = 1.0 + mean_term + tr_a + tr_b;
    if d < -1e-8 * scale || !d.is_finite() {
        return Err(Error::Numerical(format!("Fréchet distance evaluated to {d}")));
    }
    Ok(d.max(0.0))
}
