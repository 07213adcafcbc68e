//! Time knots and the linear interpolant.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Linear,
    Logarithmic,
    Explicit,
}

/// Strictly increasing knots `t_0 = 0 < t_1 < ... < t_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRecord")]
pub struct TimeGrid {
    kind: GridKind,
    times: Vec<f64>,
}

#[derive(Deserialize)]
struct GridRecord {
    kind: GridKind,
    times: Vec<f64>,
}

impl TryFrom<GridRecord> for TimeGrid {
    type Error = crate::Error;

    fn try_from(r: GridRecord) -> Result<Self> {
        let mut g = Self::explicit(r.times)?;
        g.kind = r.kind;
        Ok(g)
    }
}

impl TimeGrid {
    /// `t_j = j / N`.
    pub fn linear(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(arg_err!("grid needs at least one interval"));
        }
        let mut times: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        times[n] = 1.0;
        Ok(Self {
            kind: GridKind::Linear,
            times,
        })
    }

    /// `t_0 = 0`, then `t_1 = t_min, ..., t_N = 1` with a constant ratio.
    pub fn logarithmic(n: usize, t_min: f64) -> Result<Self> {
        if n == 0 {
            return Err(arg_err!("grid needs at least one interval"));
        }
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(arg_err!("logarithmic grid needs 0 < t_min < 1, got {t_min}"));
        }
        let mut times = Vec::with_capacity(n + 1);
        times.push(0.0);
        if n == 1 {
            times.push(1.0);
        } else {
            // t_j = t_min^((N - j) / (N - 1)) hits both ends exactly
            for j in 1..=n {
                let e = (n - j) as f64 / (n - 1) as f64;
                times.push(math::powf(t_min, e));
            }
        }
        Ok(Self {
            kind: GridKind::Logarithmic,
            times,
        })
    }

    pub fn explicit(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(arg_err!("grid needs at least two knots"));
        }
        if times[0] != 0.0 {
            return Err(arg_err!("first knot must be 0, got {}", times[0]));
        }
        for (j, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(arg_err!(
                    "knots must be strictly increasing: t_{} = {} after {}",
                    j + 1,
                    w[1],
                    w[0]
                ));
            }
        }
        Ok(Self {
            kind: GridKind::Explicit,
            times,
        })
    }

    /// `t_min` is only read for logarithmic grids.
    pub fn make(kind: GridKind, n: usize, t_min: f64) -> Result<Self> {
        match kind {
            GridKind::Linear => Self::linear(n),
            GridKind::Logarithmic => Self::logarithmic(n, t_min),
            GridKind::Explicit => Err(arg_err!("explicit grids are built from their knots")),
        }
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of intervals `N`.
    pub fn n_intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t(&self, j: usize) -> f64 {
        self.times[j]
    }

    pub fn t_end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `dt_j = t_j - t_{j-1}` for `j` in `1..=N`.
    pub fn dt(&self, j: usize) -> f64 {
        self.times[j] - self.times[j - 1]
    }

    /// `tbar_j = t_{j-1} + dt_j / 2`.
    pub fn midpoint(&self, j: usize) -> f64 {
        self.times[j - 1] + self.dt(j) / 2.0
    }

    pub fn max_dt(&self) -> f64 {
        (1..=self.n_intervals())
            .map(|j| self.dt(j))
            .fold(0.0, f64::max)
    }

    /// Largest `j'` with `t_{j'} <= t`, or `None` outside `[t_0, t_N]`.
    pub fn locate(&self, t: f64) -> Option<usize> {
        if !(t >= self.times[0] && t <= self.t_end()) {
            return None;
        }
        Some(self.times.partition_point(|&k| k <= t) - 1)
    }
}

/// `(1 - t) x0 + t x1`; exact at `t = 0` and `t = 1`.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<alloc::vec::Vec<f64>> {
    if x0.len() != x1.len() {
        return Err(shape_err!("interpolating {} and {} coordinates", x0.len(), x1.len()));
    }
    let mut out = alloc::vec![0.0; x0.len()];
    interpolate_into(x0, x1, t, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn interpolate_into(x0: &[f64], x1: &[f64], t: f64, out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(x0).zip(x1) {
        *o = (1.0 - t) * a + t * b;
    }
}
