//! Log-density reconstruction from a trained classifier.
//!
//! With the base density at `t_0`, the log density at knot `k` is
//! `log rho_0 + sum_{j <= k} f(x, tbar_j) dt_j`; between knots the next
//! interval's term is added in proportion to the elapsed time. Every
//! evaluation is a weighted sum `sum_j c_j f(x, tbar_j)` so the score is the
//! same sum over input gradients.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::error::{arg_err, shape_err, Result};
use crate::grid::TimeGrid;
use crate::latent::LatentDensity;
use crate::linalg::Matrix;
use crate::math;
use crate::samplers::Target;

/// Knot at which the analytic base density is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    /// Base density at `t_0`; sums run forward.
    #[default]
    Start,
    /// Base density at `t_N`; sums run backward.
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityRecord")]
pub struct DensityModel {
    model: ClassifierModel,
    grid: TimeGrid,
    base: LatentDensity,
    #[serde(default)]
    anchor: Anchor,
}

#[derive(Deserialize)]
struct DensityRecord {
    model: ClassifierModel,
    grid: TimeGrid,
    base: LatentDensity,
    #[serde(default)]
    anchor: Anchor,
}

impl TryFrom<DensityRecord> for DensityModel {
    type Error = crate::Error;

    fn try_from(r: DensityRecord) -> Result<Self> {
        Self::new(r.model, r.grid, r.base, r.anchor)
    }
}

impl DensityModel {
    pub fn new(model: ClassifierModel, grid: TimeGrid, base: LatentDensity, anchor: Anchor) -> Result<Self> {
        if base.dim() != model.data_dim() {
            return Err(shape_err!(
                "base density has dimension {}, model {}",
                base.dim(),
                model.data_dim()
            ));
        }
        Ok(Self {
            model,
            grid,
            base,
            anchor,
        })
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn base(&self) -> &LatentDensity {
        &self.base
    }

    pub fn anchor(&self) -> Anchor {
        self.anchor
    }

    pub fn dim(&self) -> usize {
        self.model.data_dim()
    }

    /// Weights `c_j` (index `j - 1`) of `f(., tbar_j)` in `log rho_t - log base`.
    fn coefficients(&self, t: f64) -> Result<Vec<f64>> {
        let g = &self.grid;
        let k = g
            .locate(t)
            .filter(|_| t <= g.t_end())
            .ok_or_else(|| arg_err!("time {t} outside [{}, {}]", g.t(0), g.t_end()))?;
        let n = g.n_intervals();
        let mut c = vec![0.0; n];
        match self.anchor {
            Anchor::Start => {
                for j in 1..=k {
                    c[j - 1] = g.dt(j);
                }
                if k < n && t > g.t(k) {
                    c[k] = t - g.t(k);
                }
            }
            Anchor::End => {
                for j in k + 1..=n {
                    c[j - 1] = -g.dt(j);
                }
                if k < n && t > g.t(k) {
                    c[k] = -(g.t(k + 1) - t);
                }
            }
        }
        Ok(c)
    }

    fn knot_time(&self, k: usize) -> Result<f64> {
        if k > self.grid.n_intervals() {
            return Err(arg_err!("knot {k} outside 0..={}", self.grid.n_intervals()));
        }
        Ok(self.grid.t(k))
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(shape_err!("points have {} coordinates, model {}", x.cols(), self.dim()));
        }
        Ok(())
    }

    fn base_log(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.base.log_pdf(r)).collect()
    }

    /// `log rho_t` for every row of `x`.
    pub fn log_density_batch(&self, x: &Matrix, t: f64) -> Result<Vec<f64>> {
        self.check(x)?;
        let c = self.coefficients(t)?;
        let mut terms: Vec<Vec<f64>> = Vec::new();
        for (j, &cj) in c.iter().enumerate() {
            if cj != 0.0 {
                let f = self.model.f_batch(x, self.grid.midpoint(j + 1))?;
                terms.push(f.into_iter().map(|v| v * cj).collect());
            }
        }
        let base = self.base_log(x)?;
        let mut buf = Vec::with_capacity(terms.len());
        Ok(base
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                buf.clear();
                buf.extend(terms.iter().map(|col| col[i]));
                b + math::pairwise_sum(&buf)
            })
            .collect())
    }

    /// `log rho_t` and its spatial gradient for every row.
    pub fn log_density_and_score_batch(&self, x: &Matrix, t: f64) -> Result<(Vec<f64>, Matrix)> {
        self.check(x)?;
        let c = self.coefficients(t)?;
        let n = self.dim();
        let mut terms: Vec<Vec<f64>> = Vec::new();
        let mut grads: Vec<Matrix> = Vec::new();
        for (j, &cj) in c.iter().enumerate() {
            if cj != 0.0 {
                let (f, g) = self.model.f_and_grad_batch(x, self.grid.midpoint(j + 1), cj)?;
                terms.push(f.into_iter().map(|v| v * cj).collect());
                grads.push(g);
            }
        }
        let mut logp = Vec::with_capacity(x.rows());
        let mut score = Matrix::zeros(x.rows(), n);
        let mut buf = Vec::with_capacity(terms.len());
        for (i, row) in x.iter_rows().enumerate() {
            buf.clear();
            buf.extend(terms.iter().map(|col| col[i]));
            logp.push(self.base.log_pdf(row)? + math::pairwise_sum(&buf));
            let base_grad = self.base.grad_log_pdf(row)?;
            let out = score.row_mut(i);
            for d in 0..n {
                buf.clear();
                buf.extend(grads.iter().map(|g| g.get(i, d)));
                out[d] = base_grad[d] + math::pairwise_sum(&buf);
            }
        }
        Ok((logp, score))
    }

    pub fn score_batch(&self, x: &Matrix, t: f64) -> Result<Matrix> {
        Ok(self.log_density_and_score_batch(x, t)?.1)
    }

    fn single(x: &[f64]) -> Matrix {
        Matrix::from_vec_unchecked(1, x.len(), x.to_vec())
    }

    /// `log rho` at knot `k`.
    pub fn log_density_at_knot(&self, x: &[f64], k: usize) -> Result<f64> {
        let t = self.knot_time(k)?;
        Ok(self.log_density_batch(&Self::single(x), t)?[0])
    }

    /// `log rho_t` at any `t` in the grid range.
    pub fn log_density_at(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.log_density_batch(&Self::single(x), t)?[0])
    }

    /// `log rho` at the final knot (the data density in static mode).
    pub fn log_density_data(&self, x: &[f64]) -> Result<f64> {
        self.log_density_at(x, self.grid.t_end())
    }

    pub fn log_density_data_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.log_density_batch(x, self.grid.t_end())
    }

    pub fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.score_batch(&Self::single(x), t)?.into_vec())
    }

    /// Sample-mean estimates of `KL(rho_0 || rho_k)` (from samples of
    /// `rho_0`) and `KL(rho_k || rho_0)` (from samples of `rho_k`).
    pub fn kl_estimates(&self, samples_p0: &Matrix, samples_pt: &Matrix, k: usize) -> Result<(f64, f64)> {
        self.knot_time(k)?;
        if samples_p0.rows() == 0 || samples_pt.rows() == 0 {
            return Err(arg_err!("KL estimates need non-empty sample sets"));
        }
        self.check(samples_p0)?;
        self.check(samples_pt)?;
        let mut fwd = Vec::with_capacity(k);
        let mut rev = Vec::with_capacity(k);
        for j in 1..=k {
            let tm = self.grid.midpoint(j);
            let dt = self.grid.dt(j);
            fwd.push(math::mean(&self.model.f_batch(samples_p0, tm)?) * dt);
            rev.push(math::mean(&self.model.f_batch(samples_pt, tm)?) * dt);
        }
        Ok((-math::pairwise_sum(&fwd), math::pairwise_sum(&rev)))
    }

    /// The density at time `t` as a sampling target.
    pub fn at_time(&self, t: f64) -> Result<DensityTarget<'_>> {
        self.coefficients(t)?;
        Ok(DensityTarget { model: self, t })
    }
}

/// A [`DensityModel`] frozen at one time.
#[derive(Debug, Clone, Copy)]
pub struct DensityTarget<'a> {
    model: &'a DensityModel,
    t: f64,
}

impl Target for DensityTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.model.log_density_batch(x, self.t)
    }

    fn score(&self, x: &Matrix) -> Result<Matrix> {
        self.model.score_batch(x, self.t)
    }

    fn log_density_and_score(&self, x: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        self.model.log_density_and_score_batch(x, self.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::TimeEmbedding;
    use crate::mlp::{Activation, Layer, MlpParams};
    use crate::rng;

    fn random_dm(anchor: Anchor) -> DensityModel {
        let mut r = rng::seeded(21);
        let model = ClassifierModel::new(2, &[16, 16], Activation::Silu, TimeEmbedding::fourier(4, 1.0, 3).unwrap(), &mut r)
            .unwrap();
        let grid = TimeGrid::logarithmic(5, 0.05).unwrap();
        DensityModel::new(model, grid, LatentDensity::std_normal(2).unwrap(), anchor).unwrap()
    }

    fn zero_dm() -> DensityModel {
        let model = ClassifierModel::zeros(2, &[8], Activation::Relu, TimeEmbedding::raw()).unwrap();
        DensityModel::new(model, TimeGrid::linear(4).unwrap(), LatentDensity::std_normal(2).unwrap(), Anchor::Start).unwrap()
    }

    /// `f(x, t) = a` for all inputs, raw time embedding.
    fn constant_dm(a: f64, grid: TimeGrid) -> DensityModel {
        let net = MlpParams::new(
            vec![Layer {
                weight: Matrix::zeros(1, 2),
                bias: vec![a],
            }],
            Activation::Relu,
        )
        .unwrap();
        let model = ClassifierModel::from_parts(1, TimeEmbedding::raw(), net).unwrap();
        DensityModel::new(model, grid, LatentDensity::std_normal(1).unwrap(), Anchor::Start).unwrap()
    }

    #[test]
    fn knot_zero_is_base() {
        let dm = random_dm(Anchor::Start);
        let x = [0.3, -1.2];
        assert_eq!(dm.log_density_at_knot(&x, 0).unwrap(), dm.base().log_pdf(&x).unwrap());
    }

    #[test]
    fn zero_net_is_base_everywhere() {
        let dm = zero_dm();
        let x = [0.7, 0.1];
        let base = dm.base().log_pdf(&x).unwrap();
        for k in 0..=4 {
            assert_eq!(dm.log_density_at_knot(&x, k).unwrap(), base);
        }
        assert_eq!(dm.log_density_data(&x).unwrap(), base);
        assert_eq!(dm.score(&x, 0.6).unwrap(), vec![-0.7, -0.1]);
        let s = Matrix::from_rows(&[[0.1, 0.2], [1.0, -1.0]]).unwrap();
        assert_eq!(dm.kl_estimates(&s, &s, 4).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn telescoping_difference_is_one_term() {
        let dm = random_dm(Anchor::Start);
        let x = [0.4, 0.9];
        for k in 1..=5 {
            let diff = dm.log_density_at_knot(&x, k).unwrap() - dm.log_density_at_knot(&x, k - 1).unwrap();
            let term = dm.model().f_eval(&x, dm.grid().midpoint(k)).unwrap() * dm.grid().dt(k);
            assert!((diff - term).abs() < 1e-12);
        }
    }

    #[test]
    fn off_knot_equals_knot_at_knots() {
        let dm = random_dm(Anchor::Start);
        let x = [-0.2, 0.5];
        for k in 0..=5 {
            let t = dm.grid().t(k);
            assert_eq!(dm.log_density_at(&x, t).unwrap(), dm.log_density_at_knot(&x, k).unwrap());
        }
    }

    #[test]
    fn constant_rate_interpolates_linearly() {
        let dm = constant_dm(2.0, TimeGrid::explicit(vec![0.0, 0.4, 1.0]).unwrap());
        let base = dm.base().log_pdf(&[0.0]).unwrap();
        // Halfway through the second interval: 2 * 0.4 + 2 * 0.3.
        let v = dm.log_density_at(&[0.0], 0.7).unwrap();
        assert!((v - base - 1.4).abs() < 1e-14);
        let mid = 0.5 * (dm.log_density_at_knot(&[0.0], 1).unwrap() + dm.log_density_at_knot(&[0.0], 2).unwrap());
        assert!((v - mid).abs() < 1e-14);
    }

    #[test]
    fn end_anchor_runs_backward() {
        let dm = constant_dm(2.0, TimeGrid::explicit(vec![0.0, 0.4, 1.0]).unwrap());
        let dm = DensityModel::new(dm.model().clone(), dm.grid().clone(), dm.base().clone(), Anchor::End).unwrap();
        let base = dm.base().log_pdf(&[0.0]).unwrap();
        assert_eq!(dm.log_density_data(&[0.0]).unwrap(), base);
        assert!((dm.log_density_at_knot(&[0.0], 0).unwrap() - (base - 2.0)).abs() < 1e-14);
        assert!((dm.log_density_at(&[0.0], 0.7).unwrap() - (base - 0.6)).abs() < 1e-14);
    }

    #[test]
    fn score_matches_finite_differences() {
        for anchor in [Anchor::Start, Anchor::End] {
            let dm = random_dm(anchor);
            for &t in &[0.0, 0.05, 0.3, 0.77, 1.0] {
                let x = [0.3, -0.8];
                let s = dm.score(&x, t).unwrap();
                for d in 0..2 {
                    let h = 1e-5;
                    let mut xp = x;
                    xp[d] += h;
                    let mut xm = x;
                    xm[d] -= h;
                    let fd = (dm.log_density_at(&xp, t).unwrap() - dm.log_density_at(&xm, t).unwrap()) / (2.0 * h);
                    assert!((fd - s[d]).abs() / s[d].abs().max(1e-3) < 1e-5, "t {t} dim {d}: {fd} vs {}", s[d]);
                }
            }
        }
    }

    #[test]
    fn batch_and_single_agree() {
        let dm = random_dm(Anchor::Start);
        let x = Matrix::from_rows(&[[0.1, 0.2], [-1.0, 2.0], [0.0, 0.0]]).unwrap();
        let (lp, sc) = dm.log_density_and_score_batch(&x, 0.42).unwrap();
        assert_eq!(lp, dm.log_density_batch(&x, 0.42).unwrap());
        for i in 0..3 {
            assert_eq!(lp[i], dm.log_density_at(x.row(i), 0.42).unwrap());
            assert_eq!(sc.row(i), dm.score(x.row(i), 0.42).unwrap().as_slice());
        }
    }

    #[test]
    fn range_errors() {
        let dm = zero_dm();
        assert!(dm.log_density_at_knot(&[0.0, 0.0], 5).is_err());
        assert!(dm.log_density_at(&[0.0, 0.0], 1.5).is_err());
        assert!(dm.log_density_at(&[0.0, 0.0], -0.1).is_err());
        assert!(dm.log_density_at(&[0.0], 0.5).is_err());
        let empty = Matrix::zeros(0, 2);
        assert!(dm.kl_estimates(&empty, &empty, 2).is_err());
    }

    #[test]
    fn kl_constant_rate() {
        let dm = constant_dm(1.5, TimeGrid::linear(4).unwrap());
        let s = Matrix::from_rows(&[[0.3], [-0.3]]).unwrap();
        let (fwd, rev) = dm.kl_estimates(&s, &s, 2).unwrap();
        assert!((fwd + 0.75).abs() < 1e-14);
        assert!((rev - 0.75).abs() < 1e-14);
    }
}
