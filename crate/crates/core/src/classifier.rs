//! The time-dependent network `f(x, t)` and the classifier
//! `d(x, t, dt) = sigmoid(f(x, t) * dt)`.
//!
//! Time enters the network either as a raw extra input or through random
//! Fourier features `[cos(2 pi w_k t), sin(2 pi w_k t)]`, with the frequencies
//! `w_k ~ N(0, scale^2)` drawn once from a stored seed and then frozen.

use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::mlp::{Activation, MlpParams};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    RawAppend,
    Fourier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmbeddingRecord")]
pub struct TimeEmbedding {
    mode: EmbeddingMode,
    n_freq: usize,
    scale: f64,
    seed: u64,
    freqs: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    mode: EmbeddingMode,
    n_freq: usize,
    scale: f64,
    seed: u64,
    freqs: Vec<f64>,
}

impl TryFrom<EmbeddingRecord> for TimeEmbedding {
    type Error = crate::Error;

    fn try_from(r: EmbeddingRecord) -> Result<Self> {
        Self::from_parts(r.mode, r.n_freq, r.scale, r.seed, r.freqs)
    }
}

impl TimeEmbedding {
    pub fn raw() -> Self {
        Self {
            mode: EmbeddingMode::RawAppend,
            n_freq: 0,
            scale: 0.0,
            seed: 0,
            freqs: Vec::new(),
        }
    }

    pub fn fourier(n_freq: usize, scale: f64, seed: u64) -> Result<Self> {
        if n_freq == 0 || !(scale > 0.0) {
            return Err(arg_err!(
                "Fourier embedding needs n_freq > 0 and scale > 0 (got {n_freq}, {scale})"
            ));
        }
        let mut r = rng::seeded(seed);
        let freqs = (0..n_freq).map(|_| scale * rng::normal(&mut r)).collect();
        Ok(Self {
            mode: EmbeddingMode::Fourier,
            n_freq,
            scale,
            seed,
            freqs,
        })
    }

    /// Reassembles a stored embedding, checking the frozen frequencies.
    pub fn from_parts(
        mode: EmbeddingMode,
        n_freq: usize,
        scale: f64,
        seed: u64,
        freqs: Vec<f64>,
    ) -> Result<Self> {
        match mode {
            EmbeddingMode::RawAppend => Ok(Self::raw()),
            EmbeddingMode::Fourier => {
                if freqs.len() != n_freq || freqs.iter().any(|f| !f.is_finite()) {
                    return Err(arg_err!(
                        "expected {n_freq} finite frequencies, got {}",
                        freqs.len()
                    ));
                }
                Ok(Self {
                    mode,
                    n_freq,
                    scale,
                    seed,
                    freqs,
                })
            }
        }
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            EmbeddingMode::RawAppend => 1,
            EmbeddingMode::Fourier => 2 * self.n_freq,
        }
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim()];
        self.embed_into(t, &mut out);
        out
    }

    pub fn embed_into(&self, t: f64, out: &mut [f64]) {
        match self.mode {
            EmbeddingMode::RawAppend => out[0] = t,
            EmbeddingMode::Fourier => {
                let (c, s) = out.split_at_mut(self.n_freq);
                for (k, w) in self.freqs.iter().enumerate() {
                    let arg = 2.0 * math::PI * w * t;
                    c[k] = math::cos(arg);
                    s[k] = math::sin(arg);
                }
            }
        }
    }
}

/// `f(x, t)`: a scalar network on `[x | embed(t)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord")]
pub struct ClassifierModel {
    data_dim: usize,
    embedding: TimeEmbedding,
    net: MlpParams,
}

#[derive(Deserialize)]
struct ModelRecord {
    data_dim: usize,
    embedding: TimeEmbedding,
    net: MlpParams,
}

impl TryFrom<ModelRecord> for ClassifierModel {
    type Error = crate::Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        Self::from_parts(r.data_dim, r.embedding, r.net)
    }
}

impl ClassifierModel {
    /// Kaiming-initialised network with the given hidden widths.
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        hidden: &[usize],
        activation: Activation,
        embedding: TimeEmbedding,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = Self::layer_sizes(data_dim, hidden, &embedding);
        let net = MlpParams::kaiming_uniform(&sizes, activation, rng)?;
        Self::from_parts(data_dim, embedding, net)
    }

    /// All weights zero, so `f == 0` everywhere.
    pub fn zeros(
        data_dim: usize,
        hidden: &[usize],
        activation: Activation,
        embedding: TimeEmbedding,
    ) -> Result<Self> {
        let sizes = Self::layer_sizes(data_dim, hidden, &embedding);
        let net = MlpParams::zeros(&sizes, activation)?;
        Self::from_parts(data_dim, embedding, net)
    }

    fn layer_sizes(data_dim: usize, hidden: &[usize], embedding: &TimeEmbedding) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(data_dim + embedding.dim());
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        sizes
    }

    pub fn from_parts(data_dim: usize, embedding: TimeEmbedding, net: MlpParams) -> Result<Self> {
        if data_dim == 0 {
            return Err(arg_err!("data dimension must be positive"));
        }
        if net.input_dim() != data_dim + embedding.dim() {
            return Err(shape_err!(
                "network takes {} inputs, data {} + embedding {}",
                net.input_dim(),
                data_dim,
                embedding.dim()
            ));
        }
        Ok(Self {
            data_dim,
            embedding,
            net,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpParams {
        &mut self.net
    }

    fn check_x(&self, cols: usize) -> Result<()> {
        if cols != self.data_dim {
            return Err(shape_err!(
                "points have {cols} coordinates, model expects {}",
                self.data_dim
            ));
        }
        Ok(())
    }

    /// Network input `[x | embed(t)]` for every row of `x`.
    pub fn design(&self, x: &Matrix, t: f64) -> Result<Matrix> {
        self.check_x(x.cols())?;
        let emb = self.embedding.embed(t);
        let width = self.data_dim + emb.len();
        let mut values = Vec::with_capacity(x.rows() * width);
        for row in x.iter_rows() {
            values.extend_from_slice(row);
            values.extend_from_slice(&emb);
        }
        Ok(Matrix::from_vec_unchecked(x.rows(), width, values))
    }

    pub fn f_eval(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_x(x.len())?;
        let m = Matrix::from_vec_unchecked(1, x.len(), x.to_vec());
        Ok(self.f_batch(&m, t)?[0])
    }

    pub fn f_batch(&self, x: &Matrix, t: f64) -> Result<Vec<f64>> {
        self.net.predict(&self.design(x, t)?)
    }

    /// Classifier output in (0, 1); exactly 0.5 when `dt == 0`.
    pub fn d_eval(&self, x: &[f64], t: f64, dt: f64) -> Result<f64> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(arg_err!("time gap must be finite and non-negative, got {dt}"));
        }
        Ok(math::sigmoid(self.f_eval(x, t)? * dt))
    }

    /// `df/dx`; gradients with respect to the time-embedding inputs are dropped.
    pub fn grad_f_x(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_x(x.len())?;
        let m = Matrix::from_vec_unchecked(1, x.len(), x.to_vec());
        let (_, g) = self.f_and_grad_batch(&m, t, 1.0)?;
        Ok(g.into_vec())
    }

    /// `f` on every row and `weight * df/dx` for every row.
    pub fn f_and_grad_batch(&self, x: &Matrix, t: f64, weight: f64) -> Result<(Vec<f64>, Matrix)> {
        let design = self.design(x, t)?;
        let (f, cache) = self.net.forward(&design)?;
        let seed = alloc::vec![weight; x.rows()];
        let g = self.net.input_gradients(&cache, &seed)?;
        let n = self.data_dim;
        let mut out = Vec::with_capacity(x.rows() * n);
        for row in g.iter_rows() {
            out.extend_from_slice(&row[..n]);
        }
        Ok((f, Matrix::from_vec_unchecked(x.rows(), n, out)))
    }
}
