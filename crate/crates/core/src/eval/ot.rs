//! Entropic optimal transport between uniform point clouds, squared
//! Euclidean ground cost, log-domain Sinkhorn iterations.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    /// `<P, C>`, without the entropy term.
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// L1 violation of the row marginal at exit.
    pub marginal_error: f64,
    /// Points actually used on each side.
    pub n_a: usize,
    pub n_b: usize,
    pub subsampled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtOptions {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Larger point sets are subsampled (without replacement) to this size.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for OtOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iter: 10_000,
            tol: 1e-6,
            max_points: 2000,
            seed: 0,
        }
    }
}

/// Rows chosen uniformly without replacement, in their original order.
pub fn subsample_rows<R: rand::Rng + ?Sized>(m: &Matrix, cap: usize, rng: &mut R) -> Matrix {
    if m.rows() <= cap {
        return m.clone();
    }
    let mut idx: Vec<usize> = (0..m.rows()).collect();
    rng::shuffle(&mut idx, rng);
    idx.truncate(cap);
    idx.sort_unstable();
    m.select_rows(&idx)
}

/// [`sinkhorn_ot`] after capping both sets at `opts.max_points`.
pub fn ot_distance(a: &Matrix, b: &Matrix, opts: &OtOptions) -> Result<SinkhornResult> {
    if opts.max_points == 0 {
        return Err(arg_err!("max_points must be positive"));
    }
    let mut r = rng::seeded(opts.seed);
    let sa = subsample_rows(a, opts.max_points, &mut r);
    let sb = subsample_rows(b, opts.max_points, &mut r);
    let mut res = sinkhorn_ot(&sa, &sb, opts.epsilon, opts.max_iter, opts.tol)?;
    res.subsampled = sa.rows() < a.rows() || sb.rows() < b.rows();
    Ok(res)
}

/// `f_i = -eps * log sum_j b_j exp((g_j - C_ij) / eps)` for every row of `cost`.
fn soft_min(cost: &[f64], rows: usize, cols: usize, pot: &[f64], log_w: f64, eps: f64, out: &mut [f64], transpose: bool) {
    let mut buf = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            let c = if transpose { cost[j * rows + i] } else { cost[i * cols + j] };
            buf[j] = (pot[j] - c) / eps;
        }
        out[i] = -eps * (math::log_sum_exp(&buf) + log_w);
    }
}

/// Entropic OT with uniform marginals. Uses epsilon scaling from the
/// largest cost down to `epsilon`; `max_iter` bounds the total number of
/// Sinkhorn sweeps. Stops once the row-marginal L1 error is below `tol`.
pub fn sinkhorn_ot(a: &Matrix, b: &Matrix, epsilon: f64, max_iter: usize, tol: f64) -> Result<SinkhornResult> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(arg_err!("point sets must be non-empty"));
    }
    if a.cols() != b.cols() {
        return Err(shape_err!("point sets have widths {} and {}", a.cols(), b.cols()));
    }
    if !(epsilon > 0.0) || !(tol > 0.0) {
        return Err(arg_err!("epsilon and tol must be positive"));
    }
    let (n, m) = (a.rows(), b.rows());
    let mut cost = Vec::with_capacity(n * m);
    for ra in a.iter_rows() {
        for rb in b.iter_rows() {
            cost.push(ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
        }
    }
    let (log_a, log_b) = (-math::ln(n as f64), -math::ln(m as f64));
    let c_max = cost.iter().copied().fold(0.0, f64::max);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut f_new = vec![0.0; n];
    let mut eps = c_max.max(epsilon);
    let mut iterations = 0;
    let mut err;
    let mut converged = false;
    loop {
        let last_stage = eps <= epsilon;
        // Intermediate stages only need a warm start.
        let stage_tol = if last_stage { tol } else { tol.max(1e-2) };
        let mut stage_iters = 0;
        loop {
            soft_min(&cost, n, m, &g, log_b, eps, &mut f_new, false);
            // Row sums of the current plan are a_i exp((f_i - f_new_i) / eps).
            err = if iterations == 0 && stage_iters == 0 {
                f64::INFINITY
            } else {
                f.iter()
                    .zip(&f_new)
                    .map(|(fo, fn_)| math::exp(log_a) * (math::exp((fo - fn_) / eps) - 1.0).abs())
                    .sum()
            };
            if err < stage_tol {
                break;
            }
            if iterations >= max_iter || (!last_stage && stage_iters >= 200) {
                break;
            }
            core::mem::swap(&mut f, &mut f_new);
            soft_min(&cost, m, n, &f, log_a, eps, &mut g, true);
            iterations += 1;
            stage_iters += 1;
        }
        if last_stage {
            converged = err < tol;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        eps = (eps * 0.5).max(epsilon);
    }
    let mut total = Vec::with_capacity(n);
    let mut row = Vec::with_capacity(m);
    for i in 0..n {
        row.clear();
        for j in 0..m {
            let c = cost[i * m + j];
            row.push(math::exp((f[i] + g[j] - c) / eps + log_a + log_b) * c);
        }
        total.push(math::pairwise_sum(&row));
    }
    Ok(SinkhornResult {
        cost: math::pairwise_sum(&total),
        converged,
        iterations,
        marginal_error: err,
        n_a: n,
        n_b: m,
        subsampled: false,
    })
}
