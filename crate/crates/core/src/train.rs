//! Training loops: the contrastive pair classifier over a time grid, and a
//! penalised maximum-likelihood variant for static data.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::batch::{path_pair_batch, static_pair_batch, PairBatch};
use crate::classifier::ClassifierModel;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::grid::TimeGrid;
use crate::latent::LatentDensity;
use crate::linalg::Matrix;
use crate::loss::nu_weighted_loss;
use crate::math::{self, LOGIT_CLAMP};
use crate::mlp::MlpParams;
use crate::paths::PathDataset;
use crate::rng;

pub use crate::loss::ScoreRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub score: ScoreRule,
    /// Weight of the label-1 class relative to label 0.
    pub nu: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Per-epoch learning-rate multiplier; 1 disables the schedule.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            score: ScoreRule::Brier,
            nu: 1.0,
            epochs: 10_000,
            batch: 5_000,
            lr: 1e-3,
            lr_decay: 1.0,
            weight_decay: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(arg_err!("{name} must be positive and finite, got {v}"))
            }
        };
        positive("nu", self.nu)?;
        positive("lr", self.lr)?;
        positive("lr_decay", self.lr_decay)?;
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(arg_err!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(arg_err!("epochs and batch must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    /// Filled in by callers that have a clock.
    pub wall_time_secs: Option<f64>,
}

/// Passed to the observer after every epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochProgress {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Where the label-0 / label-1 samples come from.
#[derive(Debug, Clone, Copy)]
pub enum DataSource<'a> {
    /// Observed process samples at the grid knots.
    Paths(&'a PathDataset),
    /// Linear interpolant between `latent` (t = 0) and `data` (t = 1).
    Static {
        data: &'a Matrix,
        latent: &'a LatentDensity,
    },
}

impl DataSource<'_> {
    fn check(&self, model: &ClassifierModel, grid: &TimeGrid) -> Result<()> {
        match *self {
            DataSource::Paths(p) => {
                if p.dim() != model.data_dim() {
                    return Err(shape_err!("paths have dimension {}, model {}", p.dim(), model.data_dim()));
                }
                for &t in grid.times() {
                    p.slot(t)?;
                }
            }
            DataSource::Static { data, latent } => {
                if data.cols() != model.data_dim() || latent.dim() != model.data_dim() {
                    return Err(shape_err!(
                        "data dimension {}, latent {}, model {}",
                        data.cols(),
                        latent.dim(),
                        model.data_dim()
                    ));
                }
                if data.rows() == 0 {
                    return Err(arg_err!("dataset is empty"));
                }
                if (grid.t_end() - 1.0).abs() > 1e-12 {
                    return Err(arg_err!("static training needs a grid ending at 1, got {}", grid.t_end()));
                }
            }
        }
        Ok(())
    }

    fn batch<R: rand::Rng + ?Sized>(
        &self,
        grid: &TimeGrid,
        j: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<PairBatch> {
        match *self {
            DataSource::Paths(p) => path_pair_batch(p, grid, j, n, rng),
            DataSource::Static { data, latent } => static_pair_batch(data, latent, grid, j, n, rng),
        }
    }
}

/// Loss and parameter gradient of one pair batch.
pub fn pair_loss_and_grad(
    model: &ClassifierModel,
    batch: &PairBatch,
    score: ScoreRule,
    nu: f64,
) -> Result<(f64, MlpParams)> {
    let nb = batch.x_prev.rows();
    let stacked = batch.x_prev.vstack(&batch.x_next)?;
    let design = model.design(&stacked, batch.t_mid)?;
    let (f, cache) = model.net().forward(&design)?;
    let shift = math::ln(nu);
    let z: Vec<f64> = f.iter().map(|v| v * batch.dt + shift).collect();
    let d: Vec<f64> = z.iter().map(|&v| math::sigmoid(v)).collect();
    let out = nu_weighted_loss(score, &d[..nb], &d[nb..], nu)?;
    let dl_dd = out.grad_prev.iter().chain(&out.grad_next);
    let dl_df: Vec<f64> = dl_dd
        .zip(z.iter().zip(&d))
        .map(|(g, (&zi, &di))| {
            if zi.abs() >= LOGIT_CLAMP {
                0.0
            } else {
                g * di * (1.0 - di) * batch.dt
            }
        })
        .collect();
    let (grads, _) = model.net().backward(&cache, &dl_df)?;
    Ok((out.loss, grads))
}

/// [`train_observed`] without a progress callback.
pub fn train(
    model: ClassifierModel,
    source: DataSource<'_>,
    grid: &TimeGrid,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    train_observed(model, source, grid, cfg, &mut |_| {})
}

/// Contrastive training. Each epoch visits every time pair once in shuffled
/// order and takes one Adam step per pair. All randomness comes from
/// `cfg.seed`.
pub fn train_observed(
    mut model: ClassifierModel,
    source: DataSource<'_>,
    grid: &TimeGrid,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochProgress),
) -> Result<(ClassifierModel, TrainReport)> {
    cfg.validate()?;
    source.check(&model, grid)?;
    let mut rng = rng::seeded(cfg.seed);
    let mut adam = AdamState::new(model.net());
    let mut order: Vec<usize> = (1..=grid.n_intervals()).collect();
    let mut lr = cfg.lr;
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut order, &mut rng);
        let mut losses = Vec::with_capacity(order.len());
        for &j in &order {
            let batch = source.batch(grid, j, cfg.batch, &mut rng)?;
            let (loss, grads) = pair_loss_and_grad(&model, &batch, cfg.score, cfg.nu)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    pair: j,
                    reason: format!("loss is {loss}"),
                });
            }
            adam.step(model.net_mut(), &grads, lr, cfg.weight_decay)?;
            losses.push(loss);
        }
        let mean_loss = math::mean(&losses);
        report.epoch_losses.push(mean_loss);
        observer(&EpochProgress {
            epoch,
            mean_loss,
            lr,
        });
        lr *= cfg.lr_decay;
    }
    report.final_loss = *report.epoch_losses.last().expect("at least one epoch");
    Ok((model, report))
}

/// Constraint term of the likelihood objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlPenalty {
    /// `lambda * mean_latent(g^2)`.
    #[default]
    SquaredLog,
    /// `lambda * (mean_latent(exp g) - 1)^2`.
    ExpMoment,
}

/// `|mean g|` beyond which the likelihood objective is declared divergent.
pub const ML_DIVERGENCE: f64 = 500.0;

fn accumulate(acc: &mut MlpParams, g: &MlpParams) {
    for (a, b) in acc.tensors_mut().zip(g.tensors()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

/// `g(x) = sum_j f(x, tbar_j) dt_j` for every row.
pub fn log_ratio_sum(model: &ClassifierModel, grid: &TimeGrid, x: &Matrix) -> Result<Vec<f64>> {
    let n = grid.n_intervals();
    let mut per_j = Vec::with_capacity(n);
    for j in 1..=n {
        per_j.push(model.f_batch(x, grid.midpoint(j))?);
    }
    let mut terms = alloc::vec![0.0; n];
    Ok((0..x.rows())
        .map(|i| {
            for j in 0..n {
                terms[j] = per_j[j][i] * grid.dt(j + 1);
            }
            math::pairwise_sum(&terms)
        })
        .collect())
}

/// Penalised maximum likelihood on `g(x) = sum_j f(x, tbar_j) dt_j`:
/// minimises `-mean_data(g) + penalty` with fresh data and latent
/// minibatches each epoch (one Adam step per epoch).
///
/// With [`MlPenalty::SquaredLog`] the pointwise minimiser is
/// `g = rho_data / (2 lambda rho_latent)`, a density ratio rather than its
/// logarithm; [`MlPenalty::ExpMoment`] has minimiser
/// `g = log(rho_data / rho_latent) + log c` with
/// `c = (1 + sqrt(1 + 2 / lambda)) / 2`.
pub fn ml_train(
    mut model: ClassifierModel,
    data: &Matrix,
    latent: &LatentDensity,
    grid: &TimeGrid,
    lambda: f64,
    penalty: MlPenalty,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochProgress),
) -> Result<(ClassifierModel, TrainReport)> {
    cfg.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(arg_err!("lambda must be non-negative, got {lambda}"));
    }
    let source = DataSource::Static { data, latent };
    source.check(&model, grid)?;
    let mut rng = rng::seeded(cfg.seed);
    let mut adam = AdamState::new(model.net());
    let mut lr = cfg.lr;
    let mut report = TrainReport::default();
    let nb = cfg.batch;
    let scale = 1.0 / nb as f64;
    for epoch in 0..cfg.epochs {
        let idx: Vec<usize> = (0..nb).map(|_| rand::Rng::random_range(&mut rng, 0..data.rows())).collect();
        let stacked = data.select_rows(&idx).vstack(&latent.sample_matrix(nb, &mut rng))?;
        let g = log_ratio_sum(&model, grid, &stacked)?;
        let (g_data, g_lat) = g.split_at(nb);
        let mean_data = math::mean(g_data);
        let mean_lat = math::mean(g_lat);
        let diverged = |reason: alloc::string::String| Error::Diverged {
            epoch,
            pair: 0,
            reason,
        };
        if !mean_data.is_finite() || !mean_lat.is_finite() || mean_data.abs() > ML_DIVERGENCE || mean_lat.abs() > ML_DIVERGENCE {
            return Err(diverged(format!(
                "mean log-ratio on data {mean_data}, on latent {mean_lat}"
            )));
        }
        let (loss, dl_dg_lat): (f64, Vec<f64>) = match penalty {
            MlPenalty::SquaredLog => {
                let sq: Vec<f64> = g_lat.iter().map(|v| v * v).collect();
                (
                    -mean_data + lambda * math::mean(&sq),
                    g_lat.iter().map(|v| 2.0 * lambda * v * scale).collect(),
                )
            }
            MlPenalty::ExpMoment => {
                let e: Vec<f64> = g_lat.iter().map(|&v| math::exp(v)).collect();
                let m = math::mean(&e);
                (
                    -mean_data + lambda * (m - 1.0) * (m - 1.0),
                    e.iter().map(|v| 2.0 * lambda * (m - 1.0) * v * scale).collect(),
                )
            }
        };
        if !loss.is_finite() {
            return Err(diverged(format!("objective is {loss}")));
        }
        let mut dl_dg = alloc::vec![-scale; nb];
        dl_dg.extend(dl_dg_lat);
        let mut grads = model.net().zeros_like();
        for j in 1..=grid.n_intervals() {
            let design = model.design(&stacked, grid.midpoint(j))?;
            let (_, cache) = model.net().forward(&design)?;
            let dt = grid.dt(j);
            let seed: Vec<f64> = dl_dg.iter().map(|v| v * dt).collect();
            let (gj, _) = model.net().backward(&cache, &seed)?;
            accumulate(&mut grads, &gj);
        }
        adam.step(model.net_mut(), &grads, lr, cfg.weight_decay)?;
        report.epoch_losses.push(loss);
        observer(&EpochProgress {
            epoch,
            mean_loss: loss,
            lr,
        });
        lr *= cfg.lr_decay;
    }
    report.final_loss = *report.epoch_losses.last().expect("at least one epoch");
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::TimeEmbedding;
    use crate::mlp::Activation;
    use alloc::vec;

    fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
        math::exp(-(x - m) * (x - m) / (2.0 * v)) / math::sqrt(2.0 * math::PI * v)
    }

    fn gaussian_paths(n: usize, shift: f64, seed: u64) -> PathDataset {
        let mut r = rng::seeded(seed);
        let a: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng::normal(&mut r) + shift).collect();
        PathDataset::new(
            vec![0.0, 0.1],
            vec![Matrix::new(n, 1, a).unwrap(), Matrix::new(n, 1, b).unwrap()],
            false,
        )
        .unwrap()
    }

    fn small_model(seed: u64) -> ClassifierModel {
        let mut r = rng::seeded(seed);
        ClassifierModel::new(1, &[32, 32], Activation::Silu, TimeEmbedding::raw(), &mut r).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            nu: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let model = small_model(3);
        let mut r = rng::seeded(9);
        let paths = gaussian_paths(50, 0.5, 1);
        let grid = TimeGrid::explicit(vec![0.0, 0.1]).unwrap();
        let batch = path_pair_batch(&paths, &grid, 1, 16, &mut r).unwrap();
        for (score, nu) in [(ScoreRule::Brier, 1.0), (ScoreRule::Logarithmic, 2.0)] {
            let (_, grads) = pair_loss_and_grad(&model, &batch, score, nu).unwrap();
            let h = 1e-5;
            for (k, layer) in grads.layers().iter().enumerate() {
                for (i, &g) in layer.bias.iter().enumerate().take(4) {
                    let mut plus = model.clone();
                    plus.net_mut().layers_mut()[k].bias[i] += h;
                    let mut minus = model.clone();
                    minus.net_mut().layers_mut()[k].bias[i] -= h;
                    let fd = (pair_loss_and_grad(&plus, &batch, score, nu).unwrap().0
                        - pair_loss_and_grad(&minus, &batch, score, nu).unwrap().0)
                        / (2.0 * h);
                    let denom = fd.abs().max(g.abs()).max(1e-9);
                    assert!((fd - g).abs() / denom < 1e-4, "layer {k} bias {i}: {fd} vs {g}");
                }
            }
        }
    }

    #[test]
    fn training_is_reproducible() {
        let paths = gaussian_paths(200, 0.5, 2);
        let grid = TimeGrid::explicit(vec![0.0, 0.1]).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch: 64,
            ..TrainConfig::default()
        };
        let (a, ra) = train(small_model(1), DataSource::Paths(&paths), &grid, &cfg).unwrap();
        let (b, rb) = train(small_model(1), DataSource::Paths(&paths), &grid, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.epoch_losses.len(), 5);
    }

    #[test]
    fn observer_sees_every_epoch_and_decay() {
        let paths = gaussian_paths(100, 0.5, 2);
        let grid = TimeGrid::explicit(vec![0.0, 0.1]).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch: 32,
            lr_decay: 0.5,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        train_observed(small_model(1), DataSource::Paths(&paths), &grid, &cfg, &mut |p| {
            seen.push((p.epoch, p.lr))
        })
        .unwrap();
        assert_eq!(seen, vec![(0, 1e-3), (1, 5e-4), (2, 2.5e-4)]);
    }

    #[test]
    fn missing_knot_is_reported() {
        let paths = gaussian_paths(10, 0.5, 2);
        let grid = TimeGrid::explicit(vec![0.0, 0.2]).unwrap();
        let err = train(small_model(1), DataSource::Paths(&paths), &grid, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("0.2")));
    }

    #[test]
    fn static_needs_unit_horizon() {
        let data = Matrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let latent = LatentDensity::std_normal(1).unwrap();
        let grid = TimeGrid::explicit(vec![0.0, 0.5]).unwrap();
        let res = train(small_model(1), DataSource::Static { data: &data, latent: &latent }, &grid, &TrainConfig::default());
        assert!(res.is_err());
    }

    fn nu_recovery(nu: f64) {
        // Optimal label-0 posterior is rho_prev / (rho_prev + nu rho_next).
        let paths = gaussian_paths(10_000, 0.5, 7);
        let grid = TimeGrid::explicit(vec![0.0, 0.1]).unwrap();
        let cfg = TrainConfig {
            epochs: 1500,
            batch: 512,
            lr: 2e-3,
            weight_decay: 0.0,
            nu,
            seed: 4,
            ..TrainConfig::default()
        };
        let (model, _) = train(small_model(5), DataSource::Paths(&paths), &grid, &cfg).unwrap();
        for k in 0..=20 {
            let x = -1.5 + 3.0 * k as f64 / 20.0;
            let f = model.f_eval(&[x], 0.05).unwrap();
            let d = math::sigmoid(f * 0.1 + math::ln(nu));
            let p0 = normal_pdf(x, 0.0, 1.0);
            let p1 = normal_pdf(x, 0.5, 1.0);
            let expect = p0 / (p0 + nu * p1);
            assert!(((1.0 - d) - expect).abs() < 0.05, "x = {x}: {} vs {expect}", 1.0 - d);
        }
    }

    #[test]
    fn nu_weighted_optimum_recovers_posterior() {
        nu_recovery(1.0);
        nu_recovery(3.0);
    }

    #[test]
    fn ml_without_penalty_diverges() {
        let data = Matrix::new(4, 1, vec![0.7; 4]).unwrap();
        let latent = LatentDensity::std_normal(1).unwrap();
        let grid = TimeGrid::linear(2).unwrap();
        let cfg = TrainConfig {
            epochs: 50_000,
            batch: 16,
            lr: 0.05,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let err = ml_train(small_model(2), &data, &latent, &grid, 0.0, MlPenalty::SquaredLog, &cfg, &mut |_| {})
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    fn ml_fit(penalty: MlPenalty, lambda: f64) -> ClassifierModel {
        let mut r = rng::seeded(11);
        let values: Vec<f64> = (0..20_000).map(|_| rng::normal(&mut r)).collect();
        let data = Matrix::new(20_000, 1, values).unwrap();
        let latent = LatentDensity::gaussian(vec![0.0], Matrix::new(1, 1, vec![2.0]).unwrap()).unwrap();
        let grid = TimeGrid::linear(4).unwrap();
        let cfg = TrainConfig {
            epochs: 3000,
            batch: 1024,
            lr: 2e-3,
            weight_decay: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        ml_train(small_model(8), &data, &latent, &grid, lambda, penalty, &cfg, &mut |_| {})
            .unwrap()
            .0
    }

    #[test]
    fn ml_squared_penalty_reaches_its_ratio_optimum() {
        // Pointwise minimiser of -E_d[g] + lambda E_l[g^2] is rho_d / (2 lambda rho_l).
        let lambda = 2.0;
        let model = ml_fit(MlPenalty::SquaredLog, lambda);
        let grid = TimeGrid::linear(4).unwrap();
        for k in 0..=8 {
            let x = -2.0 + 0.5 * k as f64;
            let g = log_ratio_sum(&model, &grid, &Matrix::new(1, 1, vec![x]).unwrap()).unwrap()[0];
            let expect = normal_pdf(x, 0.0, 1.0) / (2.0 * lambda * normal_pdf(x, 0.0, 2.0));
            assert!((g - expect).abs() < 0.05, "x = {x}: {g} vs {expect}");
        }
    }

    #[test]
    fn ml_exp_moment_recovers_standard_normal() {
        let model = ml_fit(MlPenalty::ExpMoment, 50.0);
        let grid = TimeGrid::linear(4).unwrap();
        let latent = LatentDensity::gaussian(vec![0.0], Matrix::new(1, 1, vec![2.0]).unwrap()).unwrap();
        for k in 0..=8 {
            let x = -2.0 + 0.5 * k as f64;
            let g = log_ratio_sum(&model, &grid, &Matrix::new(1, 1, vec![x]).unwrap()).unwrap()[0];
            let log_rho = latent.log_pdf(&[x]).unwrap() + g;
            let expect = math::ln(normal_pdf(x, 0.0, 1.0));
            assert!((log_rho - expect).abs() < 0.1, "x = {x}: {log_rho} vs {expect}");
        }
    }
}
