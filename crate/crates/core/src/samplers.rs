//! Unadjusted Langevin and Hamiltonian Monte Carlo over batched targets.
//!
//! All chains advance together so the target is evaluated on whole
//! matrices, but chain `i` draws only from its own stream
//! `rng::stream(seed, first_chain + i)`. Splitting chains into chunks
//! therefore reproduces the unsplit run exactly.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::latent::LatentDensity;
use crate::linalg::Matrix;
use crate::math;
use crate::rng::{self, CoreRng};

/// Energy error above which a leapfrog trajectory is rejected outright.
pub const DIVERGENCE_ENERGY: f64 = 1000.0;

/// A density known up to a constant, evaluated row-wise.
pub trait Target {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &Matrix) -> Result<Vec<f64>>;
    fn score(&self, x: &Matrix) -> Result<Matrix>;

    fn log_density_and_score(&self, x: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        Ok((self.log_density(x)?, self.score(x)?))
    }
}

impl Target for LatentDensity {
    fn dim(&self) -> usize {
        LatentDensity::dim(self)
    }

    fn log_density(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.log_pdf(r)).collect()
    }

    fn score(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Vec::with_capacity(x.rows() * x.cols());
        for r in x.iter_rows() {
            out.extend(self.grad_log_pdf(r)?);
        }
        Ok(Matrix::from_vec_unchecked(x.rows(), x.cols(), out))
    }
}

/// How chains are initialised.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedStrategy {
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Uniformly chosen data rows plus `N(0, noise_std^2)` jitter.
    DataInit { data: Matrix, noise_std: f64 },
    Fixed(Vec<f64>),
}

pub fn seed_chains<R: Rng + ?Sized>(strategy: &SeedStrategy, n_chains: usize, rng: &mut R) -> Result<Matrix> {
    match strategy {
        SeedStrategy::UniformBox { lower, upper } => {
            if lower.len() != upper.len() || lower.is_empty() {
                return Err(shape_err!("box bounds have lengths {} and {}", lower.len(), upper.len()));
            }
            if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                return Err(arg_err!("box needs lower < upper in every dimension"));
            }
            let n = lower.len();
            let mut m = Matrix::zeros(n_chains, n);
            for i in 0..n_chains {
                for (d, v) in m.row_mut(i).iter_mut().enumerate() {
                    *v = lower[d] + (upper[d] - lower[d]) * rng::uniform(rng);
                }
            }
            Ok(m)
        }
        SeedStrategy::DataInit { data, noise_std } => {
            if data.rows() == 0 {
                return Err(arg_err!("cannot seed chains from an empty dataset"));
            }
            if !(*noise_std >= 0.0) || !noise_std.is_finite() {
                return Err(arg_err!("noise_std must be non-negative, got {noise_std}"));
            }
            let mut m = Matrix::zeros(n_chains, data.cols());
            for i in 0..n_chains {
                let src = data.row(rng.random_range(0..data.rows()));
                let out = m.row_mut(i);
                out.copy_from_slice(src);
                if *noise_std > 0.0 {
                    out.iter_mut().for_each(|v| *v += noise_std * rng::normal(rng));
                }
            }
            Ok(m)
        }
        SeedStrategy::Fixed(point) => {
            if point.is_empty() || point.iter().any(|v| !v.is_finite()) {
                return Err(arg_err!("fixed seed point must be finite and non-empty"));
            }
            Ok(Matrix::repeat_row(point, n_chains))
        }
    }
}

/// Which RNG streams the chains use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChainStreams {
    pub seed: u64,
    /// Global index of the first chain in this call.
    pub first_chain: u64,
}

impl ChainStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed, first_chain: 0 }
    }

    fn rngs(&self, n: usize) -> Vec<CoreRng> {
        (0..n as u64).map(|i| rng::stream(self.seed, self.first_chain + i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// Final states of the chains that stayed finite.
    pub samples: Matrix,
    /// Recorded states (every `thin`-th step, surviving chains only).
    pub trajectory: Vec<Matrix>,
    /// Fraction of accepted proposals after burn-in (HMC only).
    pub acceptance_rate: Option<f64>,
    /// Indices of chains dropped after a non-finite update.
    pub failed: Vec<usize>,
}

impl ChainOutput {
    /// All trajectory snapshots stacked into one matrix.
    pub fn pooled(&self) -> Matrix {
        let cols = self.samples.cols();
        let mut values = Vec::new();
        for m in &self.trajectory {
            values.extend_from_slice(m.as_slice());
        }
        Matrix::from_vec_unchecked(values.len() / cols.max(1), cols, values)
    }
}

fn keep_rows(m: &Matrix, failed: &[bool]) -> Matrix {
    let idx: Vec<usize> = (0..m.rows()).filter(|&i| !failed[i]).collect();
    m.select_rows(&idx)
}

fn check_seeds<T: Target + ?Sized>(target: &T, seeds: &Matrix) -> Result<()> {
    if seeds.cols() != target.dim() {
        return Err(shape_err!("seeds have {} columns, target dimension {}", seeds.cols(), target.dim()));
    }
    if !seeds.all_finite() {
        return Err(arg_err!("seed states must be finite"));
    }
    Ok(())
}

fn finish(state: &Matrix, snapshots: Vec<Matrix>, failed: &[bool], acceptance_rate: Option<f64>) -> ChainOutput {
    ChainOutput {
        samples: keep_rows(state, failed),
        trajectory: snapshots.iter().map(|m| keep_rows(m, failed)).collect(),
        acceptance_rate,
        failed: (0..failed.len()).filter(|&i| failed[i]).collect(),
    }
}

/// `x <- x + step * score(x) + sqrt(2 step) xi`, no accept/reject.
///
/// A chain whose update is non-finite is frozen at its last finite state
/// and reported in `failed`. `thin > 0` records every `thin`-th state.
pub fn ula<T: Target + ?Sized>(
    target: &T,
    seeds: &Matrix,
    step: f64,
    n_steps: usize,
    thin: usize,
    streams: ChainStreams,
) -> Result<ChainOutput> {
    check_seeds(target, seeds)?;
    if !(step >= 0.0) || !step.is_finite() {
        return Err(arg_err!("step must be non-negative, got {step}"));
    }
    let (n_chains, n) = (seeds.rows(), seeds.cols());
    let mut rngs = streams.rngs(n_chains);
    let mut x = seeds.clone();
    let mut failed = vec![false; n_chains];
    let mut snapshots = Vec::new();
    let noise = math::sqrt(2.0 * step);
    let mut proposal = vec![0.0; n];
    if step > 0.0 {
        for s in 1..=n_steps {
            let score = target.score(&x)?;
            for i in 0..n_chains {
                let r = &mut rngs[i];
                let xi = x.row(i);
                let gi = score.row(i);
                for d in 0..n {
                    proposal[d] = xi[d] + step * gi[d] + noise * rng::normal(r);
                }
                if failed[i] {
                    continue;
                }
                if proposal.iter().all(|v| v.is_finite()) {
                    x.row_mut(i).copy_from_slice(&proposal);
                } else {
                    failed[i] = true;
                }
            }
            if thin > 0 && s % thin == 0 {
                snapshots.push(x.clone());
            }
        }
    }
    Ok(finish(&x, snapshots, &failed, None))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcConfig {
    pub step: f64,
    pub n_leapfrog: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state (1 keeps all, 0 none).
    pub thin: usize,
}

/// Hamiltonian Monte Carlo with unit mass and a leapfrog integrator.
pub fn hmc<T: Target + ?Sized>(target: &T, seeds: &Matrix, cfg: &HmcConfig, streams: ChainStreams) -> Result<ChainOutput> {
    check_seeds(target, seeds)?;
    if !(cfg.step > 0.0) || !cfg.step.is_finite() {
        return Err(arg_err!("step must be positive, got {}", cfg.step));
    }
    if cfg.n_leapfrog == 0 {
        return Err(arg_err!("HMC needs at least one leapfrog step"));
    }
    let (n_chains, n) = (seeds.rows(), seeds.cols());
    let h = cfg.step;
    let mut rngs = streams.rngs(n_chains);
    let mut x = seeds.clone();
    let (mut logp, mut grad) = target.log_density_and_score(&x)?;
    let mut failed: Vec<bool> = logp.iter().map(|v| !v.is_finite()).collect();
    let mut snapshots = Vec::new();
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    for it in 0..cfg.burn_in + cfg.n_samples {
        let mut p = Matrix::zeros(n_chains, n);
        for i in 0..n_chains {
            p.row_mut(i).iter_mut().for_each(|v| *v = rng::normal(&mut rngs[i]));
        }
        let kinetic0: Vec<f64> = p.iter_rows().map(|r| 0.5 * r.iter().map(|v| v * v).sum::<f64>()).collect();
        let mut q = x.clone();
        let mut g = grad.clone();
        let mut lp = logp.clone();
        for l in 0..cfg.n_leapfrog {
            let half = if l == 0 { 0.5 * h } else { h };
            for (pv, gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *pv += half * gv;
            }
            for (qv, pv) in q.as_mut_slice().iter_mut().zip(p.as_slice()) {
                *qv += h * pv;
            }
            // Non-finite positions are kept out of the target and rejected below.
            let bad: Vec<bool> = q.iter_rows().map(|r| r.iter().any(|v| !v.is_finite())).collect();
            let safe = if bad.iter().any(|&b| b) {
                let mut s = q.clone();
                for i in (0..n_chains).filter(|&i| bad[i]) {
                    s.row_mut(i).copy_from_slice(x.row(i));
                }
                s
            } else {
                q.clone()
            };
            let (new_lp, new_g) = target.log_density_and_score(&safe)?;
            lp = new_lp;
            g = new_g;
            for i in (0..n_chains).filter(|&i| bad[i]) {
                lp[i] = f64::NEG_INFINITY;
            }
        }
        for (pv, gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *pv += 0.5 * h * gv;
        }
        let counted = it >= cfg.burn_in;
        for i in 0..n_chains {
            let u = rng::uniform(&mut rngs[i]);
            if failed[i] {
                continue;
            }
            let kinetic1 = 0.5 * p.row(i).iter().map(|v| v * v).sum::<f64>();
            let d_energy = (-lp[i] + kinetic1) - (-logp[i] + kinetic0[i]);
            let ok = d_energy.is_finite()
                && d_energy < DIVERGENCE_ENERGY
                && q.row(i).iter().chain(g.row(i)).all(|v| v.is_finite())
                && u < math::exp(-d_energy);
            if counted {
                proposed += 1;
            }
            if ok {
                x.row_mut(i).copy_from_slice(q.row(i));
                grad.row_mut(i).copy_from_slice(g.row(i));
                logp[i] = lp[i];
                if counted {
                    accepted += 1;
                }
            }
        }
        if counted && cfg.thin > 0 && (it - cfg.burn_in + 1) % cfg.thin == 0 {
            snapshots.push(x.clone());
        }
    }
    failed.iter_mut().zip(&logp).for_each(|(f, v)| *f |= !v.is_finite());
    let rate = (proposed > 0).then(|| accepted as f64 / proposed as f64);
    Ok(finish(&x, snapshots, &failed, rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
        let cols: Vec<Vec<f64>> = (0..m.cols()).map(|d| m.column(d)).collect();
        (
            cols.iter().map(|c| math::mean(c)).collect(),
            cols.iter().map(|c| math::variance(c)).collect(),
        )
    }

    #[test]
    fn ula_standard_normal_moments() {
        let target = LatentDensity::std_normal(2).unwrap();
        let seeds = Matrix::zeros(1000, 2);
        let out = ula(&target, &seeds, 1e-2, 1500, 0, ChainStreams::new(1)).unwrap();
        let (m, v) = moments(&out.samples);
        for d in 0..2 {
            assert!(m[d].abs() < 0.1, "{m:?}");
            assert!(v[d] > 0.9 && v[d] < 1.1, "{v:?}");
        }
        assert!(out.failed.is_empty());
    }

    #[test]
    fn ula_zero_step_is_identity() {
        let target = LatentDensity::std_normal(2).unwrap();
        let seeds = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]).unwrap();
        let out = ula(&target, &seeds, 0.0, 100, 0, ChainStreams::new(1)).unwrap();
        assert_eq!(out.samples, seeds);
    }

    #[test]
    fn chunked_chains_match_single_run() {
        let target = LatentDensity::std_normal(3).unwrap();
        let mut r = rng::seeded(0);
        let seeds = seed_chains(
            &SeedStrategy::UniformBox {
                lower: vec![-1.0; 3],
                upper: vec![1.0; 3],
            },
            10,
            &mut r,
        )
        .unwrap();
        let full = ula(&target, &seeds, 0.05, 50, 0, ChainStreams::new(9)).unwrap();
        let a = ula(&target, &seeds.select_rows(&[0, 1, 2, 3]), 0.05, 50, 0, ChainStreams::new(9)).unwrap();
        let b = ula(
            &target,
            &seeds.select_rows(&[4, 5, 6, 7, 8, 9]),
            0.05,
            50,
            0,
            ChainStreams { seed: 9, first_chain: 4 },
        )
        .unwrap();
        assert_eq!(a.samples.vstack(&b.samples).unwrap(), full.samples);
    }

    /// Score that blows up for positive first coordinates.
    struct Exploding;

    impl Target for Exploding {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, x: &Matrix) -> Result<Vec<f64>> {
            Ok(vec![0.0; x.rows()])
        }
        fn score(&self, x: &Matrix) -> Result<Matrix> {
            let v = x.iter_rows().map(|r| if r[0] > 0.0 { f64::INFINITY } else { 0.0 }).collect();
            Ok(Matrix::from_vec_unchecked(x.rows(), 1, v))
        }
    }

    #[test]
    fn ula_drops_non_finite_chains() {
        let seeds = Matrix::from_rows(&[[1.0], [-1e9]]).unwrap();
        let out = ula(&Exploding, &seeds, 1e-4, 5, 1, ChainStreams::new(0)).unwrap();
        assert_eq!(out.failed, vec![0]);
        assert_eq!(out.samples.rows(), 1);
        assert!(out.trajectory.iter().all(|m| m.rows() == 1));
    }

    #[test]
    fn hmc_standard_normal() {
        let target = LatentDensity::std_normal(2).unwrap();
        let seeds = Matrix::zeros(500, 2);
        let cfg = HmcConfig {
            step: 0.1,
            n_leapfrog: 20,
            n_samples: 40,
            burn_in: 10,
            thin: 1,
        };
        let out = hmc(&target, &seeds, &cfg, ChainStreams::new(3)).unwrap();
        let rate = out.acceptance_rate.unwrap();
        assert!(rate > 0.6 && rate < 0.999, "{rate}");
        let (m, v) = moments(&out.pooled());
        for d in 0..2 {
            assert!(m[d].abs() < 0.05, "{m:?}");
            assert!(v[d] > 0.9 && v[d] < 1.1, "{v:?}");
        }
    }

    #[test]
    fn hmc_rejects_zero_leapfrog() {
        let target = LatentDensity::std_normal(1).unwrap();
        let cfg = HmcConfig {
            step: 0.1,
            n_leapfrog: 0,
            n_samples: 1,
            burn_in: 0,
            thin: 0,
        };
        assert!(hmc(&target, &Matrix::zeros(1, 1), &cfg, ChainStreams::new(0)).is_err());
    }

    #[test]
    fn hmc_tiny_step_accepts_everything() {
        let target = LatentDensity::std_normal(2).unwrap();
        let cfg = HmcConfig {
            step: 1e-4,
            n_leapfrog: 5,
            n_samples: 50,
            burn_in: 0,
            thin: 0,
        };
        let out = hmc(&target, &Matrix::zeros(100, 2), &cfg, ChainStreams::new(0)).unwrap();
        assert!(out.acceptance_rate.unwrap() > 0.9999);
    }

    /// `log p(x) = -4 (x^2 - 1)^2 + 0.5 x`.
    struct DoubleWell;

    impl DoubleWell {
        fn logp(x: f64) -> f64 {
            -4.0 * (x * x - 1.0) * (x * x - 1.0) + 0.5 * x
        }
    }

    impl Target for DoubleWell {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, x: &Matrix) -> Result<Vec<f64>> {
            Ok(x.as_slice().iter().map(|&v| Self::logp(v)).collect())
        }
        fn score(&self, x: &Matrix) -> Result<Matrix> {
            let g = x.as_slice().iter().map(|&v| -16.0 * v * (v * v - 1.0) + 0.5).collect();
            Ok(Matrix::from_vec_unchecked(x.rows(), 1, g))
        }
    }

    #[test]
    fn hmc_double_well_mode_ratio() {
        // Reference by midpoint quadrature on [-3, 3].
        let cells = 60_000;
        let w = 6.0 / cells as f64;
        let (mut pos, mut neg) = (0.0, 0.0);
        for k in 0..cells {
            let x = -3.0 + (k as f64 + 0.5) * w;
            let p = math::exp(DoubleWell::logp(x));
            if x > 0.0 {
                pos += p;
            } else {
                neg += p;
            }
        }
        let expect = pos / neg;
        let mut r = rng::seeded(5);
        let seeds = seed_chains(
            &SeedStrategy::UniformBox {
                lower: vec![-1.5],
                upper: vec![1.5],
            },
            500,
            &mut r,
        )
        .unwrap();
        let cfg = HmcConfig {
            step: 0.05,
            n_leapfrog: 20,
            n_samples: 200,
            burn_in: 100,
            thin: 1,
        };
        let out = hmc(&DoubleWell, &seeds, &cfg, ChainStreams::new(2)).unwrap();
        let all = out.pooled();
        let p = all.as_slice().iter().filter(|&&v| v > 0.0).count() as f64;
        let ratio = p / (all.rows() as f64 - p);
        assert!((ratio / expect - 1.0).abs() < 0.1, "{ratio} vs {expect}");
    }

    #[test]
    fn seeding_strategies() {
        let mut r = rng::seeded(1);
        let data = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let s = seed_chains(&SeedStrategy::DataInit { data: data.clone(), noise_std: 0.0 }, 20, &mut r).unwrap();
        assert!(s.iter_rows().all(|row| row == data.row(0) || row == data.row(1)));
        let f = seed_chains(&SeedStrategy::Fixed(vec![1.0, 0.0, 0.0]), 4, &mut r).unwrap();
        assert!(f.iter_rows().all(|row| row == [1.0, 0.0, 0.0]));
        assert_eq!(f.rows(), 4);
        let n = 20_000;
        let b = seed_chains(
            &SeedStrategy::UniformBox {
                lower: vec![-1.0, 2.0],
                upper: vec![1.0, 6.0],
            },
            n,
            &mut r,
        )
        .unwrap();
        let (m, _) = moments(&b);
        // Uniform standard deviations are 2/sqrt(12) and 4/sqrt(12).
        assert!(m[0].abs() < 3.0 * 0.5774 / math::sqrt(n as f64));
        assert!((m[1] - 4.0).abs() < 3.0 * 1.1547 / math::sqrt(n as f64));
        let empty = SeedStrategy::DataInit {
            data: Matrix::zeros(0, 2),
            noise_std: 0.1,
        };
        assert!(seed_chains(&empty, 3, &mut r).is_err());
    }
}
