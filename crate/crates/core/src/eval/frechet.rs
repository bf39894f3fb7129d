//! Gaussian feature statistics and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues above `-PSD_TOLERANCE` are clipped to zero; below it is an error.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Shrinkage toward a scaled identity used when `n <= dim`.
pub const SHRINKAGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetStats {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub covariance: Vec<f64>,
    pub n: usize,
    pub shrinkage: f64,
}

impl FrechetStats {
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(Error::dim(format!("covariance needs {} entries for dim {d}", d * d)));
        }
        let mut s = Self {
            mean,
            covariance,
            n,
            shrinkage: 0.0,
        };
        s.symmetrize();
        Ok(s)
    }

    /// Sample mean and unbiased covariance of feature rows.
    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::TooFewSamples { minimum: 2, got: n });
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("feature rows must share a nonzero dimension"));
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut cov = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (r[j] - mean[j]) / (n - 1) as f64;
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[i * d + j] = cov[j * d + i];
            }
        }
        let mut s = Self::new(mean, cov, n)?;
        if n <= d {
            s.shrink(SHRINKAGE);
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn symmetrize(&mut self) {
        let d = self.dim();
        for i in 0..d {
            for j in 0..i {
                let v = 0.5 * (self.covariance[i * d + j] + self.covariance[j * d + i]);
                self.covariance[i * d + j] = v;
                self.covariance[j * d + i] = v;
            }
        }
    }

    fn shrink(&mut self, alpha: f64) {
        let d = self.dim();
        let avg = (0..d).map(|i| self.covariance[i * d + i]).sum::<f64>() / d as f64;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { avg } else { 0.0 };
                self.covariance[i * d + j] = (1.0 - alpha) * self.covariance[i * d + j] + alpha * target;
            }
        }
        self.shrinkage = alpha;
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.covariance)
    }
}

fn clipped_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    for v in eig.eigenvalues.iter_mut() {
        if *v < -PSD_TOLERANCE {
            return Err(Error::Numeric(format!("{what} is not PSD (eigenvalue {v:.3e})")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The trace of the cross term is taken as `Tr sqrt(sqrt(S_a) S_b sqrt(S_a))`,
/// which only needs symmetric eigendecompositions.
pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("feature dims differ: {} vs {}", a.dim(), b.dim())));
    }
    let (sa, sb) = (a.matrix(), b.matrix());
    let ea = clipped_eigen(sa.clone(), "first covariance")?;
    clipped_eigen(sb.clone(), "second covariance")?;
    let root_a = &ea.eigenvectors * DMatrix::from_diagonal(&ea.eigenvalues.map(f64::sqrt)) * ea.eigenvectors.transpose();
    let inner = clipped_eigen(&root_a * &sb * &root_a, "cross term")?;
    let tr_cross: f64 = inner.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let dmu = DVector::from_column_slice(&a.mean) - DVector::from_column_slice(&b.mean);
    let d = dmu.norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_cross;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        let s = FrechetStats::new(vec![1.0, 2.0], vec![2.0, 0.5, 0.5, 1.0], 10).unwrap();
        assert!(frechet_distance(&s, &s).unwrap().abs() < 1e-10);
    }

    #[test]
    fn identity_covariance_gives_mean_gap() {
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let a = FrechetStats::new(vec![0.0, 0.0, 0.0], eye.clone(), 10).unwrap();
        let b = FrechetStats::new(vec![1.0, -2.0, 0.5], eye, 10).unwrap();
        assert!((frechet_distance(&a, &b).unwrap() - 5.25).abs() < 1e-12);
    }

    #[test]
    fn negative_definite_rejected() {
        let a = FrechetStats::new(vec![0.0], vec![-1.0], 3).unwrap();
        assert!(frechet_distance(&a, &a).is_err());
    }

    #[test]
    fn few_samples_shrunk() {
        let rows = vec![vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]];
        let s = FrechetStats::from_features(&rows).unwrap();
        assert_eq!(s.shrinkage, SHRINKAGE);
    }
}
