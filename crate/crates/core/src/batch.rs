//! Contrastive training pairs: samples at `t_{j-1}` (label 0) and `t_j` (label 1).

use rand::Rng;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::grid::{interpolate_into, TimeGrid};
use crate::latent::LatentDensity;
use crate::linalg::Matrix;
use crate::paths::PathDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    /// Label-0 side, drawn from the density at `t_{j-1}`.
    pub x_prev: Matrix,
    /// Label-1 side, drawn from the density at `t_j`.
    pub x_next: Matrix,
    pub t_mid: f64,
    pub dt: f64,
}

fn check_pair(grid: &TimeGrid, j: usize) -> Result<()> {
    if j == 0 || j > grid.n_intervals() {
        return Err(arg_err!("pair index {j} outside 1..={}", grid.n_intervals()));
    }
    Ok(())
}

/// Interpolant samples `(1 - t) z + t x` at both ends of interval `j`, with a
/// fresh latent draw `z` and an independent uniform data row `x` per row.
pub fn static_pair_batch<R: Rng + ?Sized>(
    data: &Matrix,
    latent: &LatentDensity,
    grid: &TimeGrid,
    j: usize,
    batch: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    check_pair(grid, j)?;
    if data.rows() == 0 {
        return Err(arg_err!("dataset is empty"));
    }
    if data.cols() != latent.dim() {
        return Err(shape_err!(
            "data has {} columns, latent density {}",
            data.cols(),
            latent.dim()
        ));
    }
    let fill = |t: f64, rng: &mut R| {
        let n = data.cols();
        let mut out = Matrix::zeros(batch, n);
        let mut z = alloc::vec![0.0; n];
        for i in 0..batch {
            latent.sample_into(rng, &mut z);
            let x = data.row(rng.random_range(0..data.rows()));
            interpolate_into(&z, x, t, out.row_mut(i));
        }
        out
    };
    let x_prev = fill(grid.t(j - 1), rng);
    let x_next = fill(grid.t(j), rng);
    Ok(PairBatch {
        x_prev,
        x_next,
        t_mid: grid.midpoint(j),
        dt: grid.dt(j),
    })
}

/// Rows drawn uniformly with replacement from the observations at `t_{j-1}`
/// and `t_j`; small sample sets are replicated to fill the batch.
pub fn path_pair_batch<R: Rng + ?Sized>(
    paths: &PathDataset,
    grid: &TimeGrid,
    j: usize,
    batch: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    check_pair(grid, j)?;
    let prev = paths.samples_at(paths.slot(grid.t(j - 1))?);
    let next = paths.samples_at(paths.slot(grid.t(j))?);
    let draw = |m: &Matrix, rng: &mut R| {
        let idx: alloc::vec::Vec<usize> = (0..batch).map(|_| rng.random_range(0..m.rows())).collect();
        m.select_rows(&idx)
    };
    let x_prev = draw(prev, rng);
    let x_next = draw(next, rng);
    if x_prev.cols() != x_next.cols() {
        return Err(Error::Shape("sample widths differ between knots".into()));
    }
    Ok(PairBatch {
        x_prev,
        x_next,
        t_mid: grid.midpoint(j),
        dt: grid.dt(j),
    })
}
