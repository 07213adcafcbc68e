//! Analytic Gaussian densities used as the latent / base density.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LatentRecord {
    StdNormal { dim: usize },
    Gaussian { mean: Vec<f64>, covariance: Matrix },
}

/// `N(0, I)` or a general `N(mean, covariance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatentRecord", into = "LatentRecord")]
pub enum LatentDensity {
    StdNormal { dim: usize },
    Gaussian(Gaussian),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    covariance: Matrix,
    /// Lower Cholesky factor of the covariance.
    chol: Matrix,
    log_det: f64,
}

impl TryFrom<LatentRecord> for LatentDensity {
    type Error = crate::Error;

    fn try_from(r: LatentRecord) -> Result<Self> {
        match r {
            LatentRecord::StdNormal { dim } => Self::std_normal(dim),
            LatentRecord::Gaussian { mean, covariance } => Self::gaussian(mean, covariance),
        }
    }
}

impl From<LatentDensity> for LatentRecord {
    fn from(d: LatentDensity) -> Self {
        match d {
            LatentDensity::StdNormal { dim } => LatentRecord::StdNormal { dim },
            LatentDensity::Gaussian(g) => LatentRecord::Gaussian {
                mean: g.mean,
                covariance: g.covariance,
            },
        }
    }
}

fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l.set(i, i, math::sqrt(s));
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

impl LatentDensity {
    pub fn std_normal(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(arg_err!("dimension must be positive"));
        }
        Ok(Self::StdNormal { dim })
    }

    pub fn gaussian(mean: Vec<f64>, covariance: Matrix) -> Result<Self> {
        let n = mean.len();
        if n == 0 || covariance.rows() != n || covariance.cols() != n {
            return Err(shape_err!(
                "mean of length {n} with a {}x{} covariance",
                covariance.rows(),
                covariance.cols()
            ));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (covariance.get(i, j), covariance.get(j, i));
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(arg_err!("covariance is not symmetric at ({i}, {j})"));
                }
            }
        }
        let chol = cholesky(&covariance)
            .ok_or_else(|| arg_err!("covariance is not positive definite"))?;
        let log_det = 2.0 * (0..n).map(|i| math::ln(chol.get(i, i))).sum::<f64>();
        Ok(Self::Gaussian(Gaussian {
            mean,
            covariance,
            chol,
            log_det,
        }))
    }

    /// Zero-mean Gaussian with unit variances and a common pairwise correlation.
    pub fn equicorrelated(dim: usize, variance: f64, correlation: f64) -> Result<Self> {
        let mut cov = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                cov.set(i, j, if i == j { variance } else { correlation * variance });
            }
        }
        Self::gaussian(vec![0.0; dim], cov)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::StdNormal { dim } => *dim,
            Self::Gaussian(g) => g.mean.len(),
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(shape_err!("point has {} coordinates, density {}", x.len(), self.dim()));
        }
        Ok(())
    }

    /// Whitened residual `L^{-1} (x - mean)`.
    fn whiten(g: &Gaussian, x: &[f64]) -> Vec<f64> {
        let n = g.mean.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = x[i] - g.mean[i];
            for k in 0..i {
                s -= g.chol.get(i, k) * y[k];
            }
            y[i] = s / g.chol.get(i, i);
        }
        y
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let n = self.dim() as f64;
        Ok(match self {
            Self::StdNormal { .. } => {
                -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * n * math::LN_2PI
            }
            Self::Gaussian(g) => {
                let y = Self::whiten(g, x);
                -0.5 * y.iter().map(|v| v * v).sum::<f64>() - 0.5 * g.log_det - 0.5 * n * math::LN_2PI
            }
        })
    }

    /// `grad log pdf(x) = -Sigma^{-1} (x - mean)`.
    pub fn grad_log_pdf(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match self {
            Self::StdNormal { .. } => x.iter().map(|v| -v).collect(),
            Self::Gaussian(g) => {
                let y = Self::whiten(g, x);
                let n = y.len();
                let mut z = vec![0.0; n];
                for i in (0..n).rev() {
                    let mut s = y[i];
                    for k in i + 1..n {
                        s -= g.chol.get(k, i) * z[k];
                    }
                    z[i] = s / g.chol.get(i, i);
                }
                z.iter().map(|v| -v).collect()
            }
        })
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Self::StdNormal { .. } => out.iter_mut().for_each(|v| *v = rng::normal(rng)),
            Self::Gaussian(g) => {
                let n = g.mean.len();
                let z: Vec<f64> = (0..n).map(|_| rng::normal(rng)).collect();
                for i in 0..n {
                    let mut s = g.mean[i];
                    for k in 0..=i {
                        s += g.chol.get(i, k) * z[k];
                    }
                    out[i] = s;
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.sample_into(rng, &mut v);
        v
    }

    pub fn sample_matrix<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Matrix {
        let n = self.dim();
        let mut m = Matrix::zeros(count, n);
        for i in 0..count {
            self.sample_into(rng, m.row_mut(i));
        }
        m
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Self::StdNormal { dim } => vec![0.0; *dim],
            Self::Gaussian(g) => g.mean.clone(),
        }
    }

    pub fn covariance(&self) -> Matrix {
        match self {
            Self::StdNormal { dim } => {
                let mut m = Matrix::zeros(*dim, *dim);
                (0..*dim).for_each(|i| m.set(i, i, 1.0));
                m
            }
            Self::Gaussian(g) => g.covariance.clone(),
        }
    }
}
