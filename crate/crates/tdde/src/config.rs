//! Experiment configuration: one TOML document per experiment.
//!
//! Parsing rejects unknown keys and reports the offending field path;
//! [`ExperimentConfig::validate`] then checks value ranges so that no work
//! starts on a bad config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tdde_core::eval::OtOptions;
use tdde_core::simdata::{BoucWenParams, DuffingParams, OuParams};
use tdde_core::train::MlPenalty;
use tdde_core::{Activation, Anchor, GridKind, LatentDensity, Matrix, ScoreRule, TrainConfig};

use crate::error::{CliError, Result};
use crate::io::LabelColumn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_noise_free() -> f64 {
    0.0
}

fn default_semisphere_dim() -> usize {
    3
}

fn default_alpha() -> f64 {
    5.0
}

fn default_dt_sim() -> f64 {
    0.01
}

/// Where training samples come from. Toy generators and CSV files give a
/// static dataset; the SDE kinds and `paths` give samples at every knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Circles {
        n: usize,
    },
    Moons {
        n: usize,
        #[serde(default = "default_noise_free")]
        noise: f64,
    },
    Checkerboard {
        n: usize,
    },
    Semisphere {
        n: usize,
        #[serde(default = "default_semisphere_dim")]
        dim: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        normalize: bool,
        /// Dropped from the features when present.
        #[serde(default)]
        label_column: Option<LabelColumn>,
    },
    Duffing {
        n_paths: usize,
        #[serde(default = "default_dt_sim")]
        dt_sim: f64,
        #[serde(default)]
        params: DuffingParams,
    },
    BoucWen {
        n_paths: usize,
        #[serde(default = "default_dt_sim")]
        dt_sim: f64,
        #[serde(default)]
        params: BoucWenParams,
    },
    Ou {
        n_paths: usize,
        #[serde(default)]
        params: OuParams,
    },
    /// A directory written by `simulate` (manifest plus one CSV per knot).
    Paths {
        dir: PathBuf,
    },
}

impl DataConfig {
    /// Time-indexed data (as opposed to a static dataset bridged to a latent).
    pub fn is_process(&self) -> bool {
        matches!(
            self,
            DataConfig::Duffing { .. } | DataConfig::BoucWen { .. } | DataConfig::Ou { .. } | DataConfig::Paths { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub kind: GridKind,
    pub n: usize,
    pub t_min: f64,
    /// Knots for `kind = "explicit"`.
    pub times: Option<Vec<f64>>,
    /// Linear and logarithmic grids are stretched to `[0, t_end]`.
    pub t_end: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            kind: GridKind::Linear,
            n: 10,
            t_min: 0.01,
            times: None,
            t_end: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Raw,
    Fourier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    /// Number of frequencies; the embedding has twice as many features.
    pub n_freq: usize,
    pub scale: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Raw,
            n_freq: 8,
            scale: 1.0,
        }
    }
}

/// Analytic Gaussian base density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub mean: Vec<f64>,
    /// Rows of the covariance; identity when omitted.
    #[serde(default)]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl BaseConfig {
    pub fn density(&self) -> tdde_core::Result<LatentDensity> {
        let n = self.mean.len();
        let cov = match &self.covariance {
            Some(rows) => Matrix::from_rows(rows)?,
            None => {
                let mut m = Matrix::zeros(n, n);
                (0..n).for_each(|i| m.set(i, i, 1.0));
                m
            }
        };
        LatentDensity::gaussian(self.mean.clone(), cov)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub embedding: EmbeddingConfig,
    /// Base density at the anchor knot. Defaults to `N(0, I)` for static
    /// data and to the initial distribution for simulated processes.
    pub base: Option<BaseConfig>,
    pub anchor: Anchor,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            activation: Activation::Relu,
            embedding: EmbeddingConfig::default(),
            base: None,
            anchor: Anchor::Start,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Contrastive,
    Ml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub score: ScoreRule,
    pub nu: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    /// Penalty weight of the likelihood mode.
    pub lambda: f64,
    pub penalty: MlPenalty,
    /// Print a progress line every this many epochs; 0 silences progress.
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: TrainMode::Contrastive,
            score: t.score,
            nu: t.nu,
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            lr_decay: t.lr_decay,
            weight_decay: t.weight_decay,
            lambda: 1.0,
            penalty: MlPenalty::default(),
            log_every: 1,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            score: self.score,
            nu: self.nu,
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            lr_decay: self.lr_decay,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Ula,
    Hmc,
}

/// Chain starting points.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    /// Draws from the base density.
    #[default]
    Latent,
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Training rows plus Gaussian jitter.
    Data {
        #[serde(default)]
        noise_std: f64,
    },
    Fixed {
        point: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub sampler: SamplerKind,
    pub n_chains: usize,
    pub init: InitConfig,
    pub step: f64,
    /// ULA steps per chain.
    pub steps: usize,
    pub n_leapfrog: usize,
    /// HMC iterations after burn-in; every `thin`-th state is written.
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Time at which to sample; the last knot when omitted.
    pub t: Option<f64>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Ula,
            n_chains: 10_000,
            init: InitConfig::Latent,
            step: 1e-4,
            steps: 200,
            n_leapfrog: 10,
            n_samples: 1,
            burn_in: 100,
            thin: 1,
            t: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ot,
    Ks,
    L2,
    Auc,
}

/// Tensor-product evaluation grid over the data space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Points per dimension.
    pub points: usize,
}

impl SpaceGrid {
    pub const MAX_POINTS: usize = 10_000_000;

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn total(&self) -> usize {
        self.points.saturating_pow(self.dim() as u32)
    }

    fn axis(&self, d: usize) -> Vec<f64> {
        let (a, b) = (self.lower[d], self.upper[d]);
        let n = self.points;
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim())
            .map(|d| (self.upper[d] - self.lower[d]) / (self.points - 1) as f64)
            .product()
    }

    /// All grid points, last coordinate varying fastest.
    pub fn points_matrix(&self) -> Matrix {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|d| self.axis(d)).collect();
        let n = self.dim();
        let total = self.total();
        let mut values = Vec::with_capacity(total * n);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            values.extend((0..n).map(|d| axes[d][idx[d]]));
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < self.points {
                    break;
                }
                idx[d] = 0;
            }
        }
        Matrix::new(total, n, values).expect("finite grid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    /// Generated samples; `<out>/samples.csv` when omitted.
    pub samples: Option<PathBuf>,
    /// Reference samples; a fresh draw from the data generator when omitted.
    pub reference: Option<PathBuf>,
    pub ot: OtOptions,
    /// Space grid for `density-grid` and the L2 metric.
    pub grid: Option<SpaceGrid>,
    /// Times for `density-grid`; the last knot when empty.
    pub times: Vec<f64>,
    /// Time at which the L2 metric compares against the reference.
    pub l2_time: Option<f64>,
    /// Labeled CSV for `rare-score` and the AUC metric.
    pub labeled: Option<PathBuf>,
    pub label_column: LabelColumn,
    pub normalize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Ot, Metric::Ks],
            samples: None,
            reference: None,
            ot: OtOptions::default(),
            grid: None,
            times: Vec::new(),
            l2_time: None,
            labeled: None,
            label_column: LabelColumn::default(),
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("run") }
    }
}

/// Parses a TOML document, reporting schema errors with their field path.
pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::new(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        CliError::config(path, inner.message().to_owned())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(path.display().to_string(), e.to_string()))?;
    parse(&text)
}

fn check(ok: bool, path: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(path, message()))
    }
}

fn positive(v: f64, path: &str) -> Result<()> {
    check(v > 0.0 && v.is_finite(), path, || format!("must be positive and finite, got {v}"))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataConfig::Circles { n } | DataConfig::Checkerboard { n } => {
                check(*n > 0, "data.n", || "must be at least 1".into())?
            }
            DataConfig::Moons { n, noise } => {
                check(*n > 0, "data.n", || "must be at least 1".into())?;
                check(*noise >= 0.0 && noise.is_finite(), "data.noise", || format!("must be non-negative, got {noise}"))?;
            }
            DataConfig::Semisphere { n, dim, alpha } => {
                check(*n > 0, "data.n", || "must be at least 1".into())?;
                check(*dim >= 2, "data.dim", || format!("must be at least 2, got {dim}"))?;
                positive(*alpha, "data.alpha")?;
            }
            DataConfig::Csv { .. } | DataConfig::Paths { .. } => {}
            DataConfig::Duffing { n_paths, dt_sim, params } => {
                check(*n_paths > 0, "data.n_paths", || "must be at least 1".into())?;
                positive(*dt_sim, "data.dt_sim")?;
                params.validate().map_err(|e| CliError::config("data.params", e.to_string()))?;
            }
            DataConfig::BoucWen { n_paths, dt_sim, params } => {
                check(*n_paths > 0, "data.n_paths", || "must be at least 1".into())?;
                positive(*dt_sim, "data.dt_sim")?;
                params.validate().map_err(|e| CliError::config("data.params", e.to_string()))?;
            }
            DataConfig::Ou { n_paths, params } => {
                check(*n_paths > 0, "data.n_paths", || "must be at least 1".into())?;
                params.validate().map_err(|e| CliError::config("data.params", e.to_string()))?;
            }
        }

        let g = &self.grid;
        match g.kind {
            GridKind::Explicit => check(g.times.is_some(), "grid.times", || "required for explicit grids".into())?,
            _ => {
                check(g.n >= 1, "grid.n", || "must be at least 1".into())?;
                check(g.times.is_none(), "grid.times", || "only used with kind = \"explicit\"".into())?;
                positive(g.t_end, "grid.t_end")?;
            }
        }
        if g.kind == GridKind::Logarithmic {
            check(g.t_min > 0.0 && g.t_min < 1.0, "grid.t_min", || format!("must lie in (0, 1), got {}", g.t_min))?;
        }
        self.time_grid()?;
        if !self.data.is_process() {
            let end = self.time_grid()?.t_end();
            check((end - 1.0).abs() < 1e-12, "grid", || format!("static data needs a grid ending at 1, got {end}"))?;
        }

        let m = &self.model;
        check(m.hidden.iter().all(|&h| h > 0), "model.hidden", || "widths must be positive".into())?;
        if m.embedding.kind == EmbeddingKind::Fourier {
            check(m.embedding.n_freq > 0, "model.embedding.n_freq", || "must be at least 1".into())?;
            positive(m.embedding.scale, "model.embedding.scale")?;
        }
        if let Some(b) = &m.base {
            b.density().map_err(|e| CliError::config("model.base", e.to_string()))?;
        } else {
            check(!matches!(self.data, DataConfig::Paths { .. }), "model.base", || {
                "required when data.kind = \"paths\"".into()
            })?;
        }

        let t = &self.train;
        t.train_config(0)
            .validate()
            .map_err(|e| CliError::config("train", e.to_string()))?;
        check(t.lambda >= 0.0 && t.lambda.is_finite(), "train.lambda", || format!("must be non-negative, got {}", t.lambda))?;
        if t.mode == TrainMode::Ml {
            check(!self.data.is_process(), "train.mode", || "the likelihood mode needs static data".into())?;
        }

        let s = &self.sample;
        check(s.n_chains > 0, "sample.n_chains", || "must be at least 1".into())?;
        check(s.step >= 0.0 && s.step.is_finite(), "sample.step", || format!("must be non-negative, got {}", s.step))?;
        if s.sampler == SamplerKind::Hmc {
            positive(s.step, "sample.step")?;
            check(s.n_leapfrog > 0, "sample.n_leapfrog", || "must be at least 1".into())?;
            check(s.n_samples > 0, "sample.n_samples", || "must be at least 1".into())?;
            check(s.thin > 0, "sample.thin", || "must be at least 1".into())?;
        }
        match &s.init {
            InitConfig::UniformBox { lower, upper } => check(
                lower.len() == upper.len() && lower.iter().zip(upper).all(|(a, b)| a <= b),
                "sample.init",
                || "lower and upper must have equal lengths with lower <= upper".into(),
            )?,
            InitConfig::Data { noise_std } => check(*noise_std >= 0.0 && noise_std.is_finite(), "sample.init.noise_std", || {
                format!("must be non-negative, got {noise_std}")
            })?,
            _ => {}
        }

        let e = &self.eval;
        positive(e.ot.epsilon, "eval.ot.epsilon")?;
        positive(e.ot.tol, "eval.ot.tol")?;
        check(e.ot.max_points > 0, "eval.ot.max_points", || "must be at least 1".into())?;
        if let Some(sg) = &e.grid {
            check(
                sg.lower.len() == sg.upper.len() && !sg.lower.is_empty(),
                "eval.grid",
                || "lower and upper must be non-empty with equal lengths".into(),
            )?;
            check(sg.lower.iter().zip(&sg.upper).all(|(a, b)| a < b), "eval.grid", || "needs lower < upper".into())?;
            check(sg.points >= 2, "eval.grid.points", || "must be at least 2".into())?;
            check(sg.total() <= SpaceGrid::MAX_POINTS, "eval.grid.points", || {
                format!("grid has more than {} points", SpaceGrid::MAX_POINTS)
            })?;
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<tdde_core::TimeGrid> {
        let g = &self.grid;
        let built = match g.kind {
            GridKind::Explicit => tdde_core::TimeGrid::explicit(g.times.clone().unwrap_or_default()),
            kind => tdde_core::TimeGrid::make(kind, g.n, g.t_min).and_then(|grid| {
                if g.t_end == 1.0 {
                    Ok(grid)
                } else {
                    tdde_core::TimeGrid::explicit(grid.times().iter().map(|t| t * g.t_end).collect())
                }
            }),
        };
        built.map_err(|e| CliError::config("grid", e.to_string()))
    }

    /// The config as JSON, for sidecars and metric files.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("[data]\nkind = \"circles\"\nn = 100\n").unwrap();
        assert_eq!(cfg.data, DataConfig::Circles { n: 100 });
        assert_eq!(cfg.train.batch, 5000);
        assert_eq!(cfg.grid.n, 10);
        assert_eq!(cfg.model.hidden, vec![256, 256, 256]);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = parse("[data]\nkind = \"circles\"\nn = 100\n[train]\nlr = 0.1\nlearning_rate = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        match err {
            CliError::Config { path, message } => {
                assert_eq!(path, "train.learning_rate");
                assert!(message.contains("learning_rate"), "{message}");
            }
            e => panic!("{e}"),
        }
        let err = parse("[data]\nkind = \"circles\"\nn = 100\nradius = 2\n").unwrap_err();
        assert!(matches!(&err, CliError::Config { path, message } if path.starts_with("data") && message.contains("radius")), "{err}");
        let err = parse("[data]\nkind = \"spiral\"\nn = 100\n").unwrap_err();
        assert!(matches!(&err, CliError::Config { path, message } if path.starts_with("data") && message.contains("spiral")), "{err}");
        let err = parse("[data]\nkind = \"circles\"\nn = 100\n[sample]\nstep = \"big\"\n").unwrap_err();
        assert!(matches!(&err, CliError::Config { path, .. } if path == "sample.step"), "{err}");
    }

    #[test]
    fn value_checks() {
        let bad = |s: &str| match parse(s) {
            Err(CliError::Config { path, .. }) => path,
            r => panic!("{r:?}"),
        };
        assert_eq!(bad("[data]\nkind = \"circles\"\nn = 0\n"), "data.n");
        assert_eq!(bad("[data]\nkind = \"circles\"\nn = 5\n[train]\nlr = -1.0\n"), "train");
        assert_eq!(bad("[data]\nkind = \"paths\"\ndir = \"p\"\n"), "model.base");
        assert_eq!(bad("[data]\nkind = \"circles\"\nn = 5\n[grid]\nt_end = 0.8\n"), "grid");
        assert_eq!(
            bad("[data]\nkind = \"ou\"\nn_paths = 5\n[train]\nmode = \"ml\"\n"),
            "train.mode"
        );
    }

    #[test]
    fn stretched_and_explicit_grids() {
        let cfg = parse("[data]\nkind = \"ou\"\nn_paths = 5\n[grid]\nn = 16\nt_end = 0.8\n").unwrap();
        let g = cfg.time_grid().unwrap();
        assert_eq!(g.times().len(), 17);
        assert!((g.t_end() - 0.8).abs() < 1e-15);
        let cfg = parse("[data]\nkind = \"ou\"\nn_paths = 5\n[grid]\nkind = \"explicit\"\ntimes = [0.0, 0.3, 0.5]\n").unwrap();
        assert_eq!(cfg.time_grid().unwrap().times(), &[0.0, 0.3, 0.5]);
    }

    #[test]
    fn space_grid_enumerates_row_major() {
        let g = SpaceGrid {
            lower: vec![0.0, 10.0],
            upper: vec![1.0, 12.0],
            points: 3,
        };
        let m = g.points_matrix();
        assert_eq!(m.rows(), 9);
        assert_eq!(m.row(1), &[0.0, 11.0]);
        assert_eq!(m.row(3), &[0.5, 10.0]);
        assert!((g.cell_volume() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse("seed = 3\n[data]\nkind = \"duffing\"\nn_paths = 10\n[data.params]\ns0 = 0.2\n").unwrap();
        let back: ExperimentConfig = serde_json::from_value(cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
