use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::linalg::Matrix;
use crate::math;

/// Smallest bandwidth used when a coordinate has zero spread.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

/// Kernels further than this many bandwidths away (in the first
/// coordinate) are skipped; each contributes less than `exp(-72)`.
const WINDOW: f64 = 12.0;

/// `(4 / ((d + 2) n))^(1 / (d + 4))`, the Silverman rule multiplier.
pub fn silverman_factor(dim: usize, n: usize) -> f64 {
    let d = dim as f64;
    math::powf(4.0 / ((d + 2.0) * n as f64), 1.0 / (d + 4.0))
}

/// Gaussian product-kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    /// Sorted by the first coordinate.
    data: Matrix,
    bandwidth: Vec<f64>,
    /// Coordinates whose bandwidth hit [`BANDWIDTH_FLOOR`].
    floored_dims: Vec<usize>,
}

impl KdeModel {
    /// Per-coordinate Silverman bandwidths `h_i = sd_i * silverman_factor`.
    pub fn fit_silverman(data: &Matrix) -> Result<Self> {
        if data.rows() < 2 {
            return Err(arg_err!("KDE needs at least two points, got {}", data.rows()));
        }
        let factor = silverman_factor(data.cols(), data.rows());
        let mut floored = Vec::new();
        let bw = (0..data.cols())
            .map(|d| {
                let h = math::sqrt(math::variance(&data.column(d))) * factor;
                if h > BANDWIDTH_FLOOR {
                    h
                } else {
                    floored.push(d);
                    BANDWIDTH_FLOOR
                }
            })
            .collect();
        let mut model = Self::with_bandwidth(data, bw)?;
        model.floored_dims = floored;
        Ok(model)
    }

    pub fn with_bandwidth(data: &Matrix, bandwidth: Vec<f64>) -> Result<Self> {
        if data.rows() == 0 {
            return Err(arg_err!("KDE needs data"));
        }
        if bandwidth.len() != data.cols() {
            return Err(shape_err!("{} bandwidths for {} dimensions", bandwidth.len(), data.cols()));
        }
        if bandwidth.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(arg_err!("bandwidths must be positive"));
        }
        let mut order: Vec<usize> = (0..data.rows()).collect();
        order.sort_by(|&a, &b| data.get(a, 0).total_cmp(&data.get(b, 0)));
        Ok(Self {
            data: data.select_rows(&order),
            bandwidth,
            floored_dims: Vec::new(),
        })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn floored_dims(&self) -> &[usize] {
        &self.floored_dims
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    fn exponents(&self, x: &[f64], rows: core::ops::Range<usize>, out: &mut Vec<f64>) {
        out.clear();
        for i in rows {
            let row = self.data.row(i);
            let mut q = 0.0;
            for d in 0..x.len() {
                let z = (x[d] - row[d]) / self.bandwidth[d];
                q += z * z;
            }
            out.push(-0.5 * q);
        }
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(shape_err!("point has {} coordinates, KDE {}", x.len(), self.dim()));
        }
        let n = self.data.rows();
        let reach = WINDOW * self.bandwidth[0];
        let lo = self.partition(x[0] - reach);
        let hi = self.partition(x[0] + reach);
        let mut buf = Vec::new();
        self.exponents(x, lo..hi, &mut buf);
        let mut lse = math::log_sum_exp(&buf);
        // Skipped mass is at most n exp(-W^2 / 2); keep it below e^-30 relative.
        if !lse.is_finite() || lse < -0.5 * WINDOW * WINDOW + math::ln(n as f64) + 30.0 {
            // Far from all data: every kernel matters.
            self.exponents(x, 0..n, &mut buf);
            lse = math::log_sum_exp(&buf);
        }
        let log_norm: f64 = self.bandwidth.iter().map(|h| math::ln(*h)).sum::<f64>()
            + 0.5 * self.dim() as f64 * math::LN_2PI
            + math::ln(n as f64);
        Ok(lse - log_norm)
    }

    pub fn logpdf_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.logpdf(r)).collect()
    }

    /// First index whose leading coordinate is `>= v`.
    fn partition(&self, v: f64) -> usize {
        let (mut lo, mut hi) = (0, self.data.rows());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.data.get(mid, 0) < v {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }
}
