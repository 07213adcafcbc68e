//! Sample sets of a stochastic process observed at a sequence of times.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::linalg::Matrix;

/// Per-time sample matrices (`N_j x n`). In a paired dataset row `i` of every
/// matrix comes from the same trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDataset {
    times: Vec<f64>,
    samples: Vec<Matrix>,
    paired: bool,
}

/// Knot times closer than this are treated as the same slot.
const TIME_MATCH: f64 = 1e-9;

impl PathDataset {
    pub fn new(times: Vec<f64>, samples: Vec<Matrix>, paired: bool) -> Result<Self> {
        if times.is_empty() || times.len() != samples.len() {
            return Err(shape_err!(
                "{} times for {} sample sets",
                times.len(),
                samples.len()
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(arg_err!("observation times must be strictly increasing"));
        }
        let dim = samples[0].cols();
        for (t, s) in times.iter().zip(&samples) {
            if s.cols() != dim {
                return Err(shape_err!("samples at t = {t} have {} columns, expected {dim}", s.cols()));
            }
            if s.rows() == 0 {
                return Err(Error::Data(alloc::format!("no samples at t = {t}")));
            }
        }
        if paired && samples.iter().any(|s| s.rows() != samples[0].rows()) {
            return Err(shape_err!("paired dataset with unequal sample counts"));
        }
        Ok(Self {
            times,
            samples,
            paired,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> &[Matrix] {
        &self.samples
    }

    pub fn samples_at(&self, slot: usize) -> &Matrix {
        &self.samples[slot]
    }

    pub fn paired(&self) -> bool {
        self.paired
    }

    pub fn dim(&self) -> usize {
        self.samples[0].cols()
    }

    /// Index of the observation slot at time `t`.
    pub fn slot(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= TIME_MATCH)
            .ok_or_else(|| Error::Data(alloc::format!("no observations at t = {t}")))
    }
}
