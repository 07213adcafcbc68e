//! The subcommands. Each one rebuilds what it needs from the config and
//! the files in the output directory, so any of them can run on its own.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use tdde_core::eval::{ecdf_distance, grid_l2, ot_distance, rarity_scores, roc_auc, KdeModel, RocCurve, SinkhornResult};
use tdde_core::samplers::{hmc, seed_chains, ula, ChainOutput, ChainStreams, HmcConfig, SeedStrategy};
use tdde_core::simdata::{self, SimOutput};
use tdde_core::train::{ml_train, train_observed, DataSource, EpochProgress};
use tdde_core::{
    rng, ClassifierModel, DensityModel, LatentDensity, Matrix, PathDataset, TimeEmbedding, TrainReport,
};

use crate::config::{
    DataConfig, EmbeddingKind, ExperimentConfig, InitConfig, Metric, SamplerKind, TrainMode,
};
use crate::error::{CliError, Result};
use crate::io::{self, ModelFile, OutputContext};

pub const MODEL_FILE: &str = "model.json";
pub const SAMPLES_FILE: &str = "samples.csv";

/// Fixed work-unit sizes: results do not depend on the thread count.
const PATH_CHUNK: usize = 1024;
const CHAIN_CHUNK: usize = 256;
const EVAL_CHUNK: usize = 4096;

/// Sub-seed tags under the experiment seed.
mod tag {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const EMBED: u64 = 4;
    pub const CHAIN_SEEDS: u64 = 5;
    pub const CHAINS: u64 = 6;
    pub const REFERENCE: u64 = 7;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Train,
    DensityGrid,
    Sample,
    Eval,
    RareScore,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::DensityGrid => "density-grid",
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::RareScore => "rare-score",
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

pub fn run(command: Command, config_path: &Path, ov: &Overrides) -> Result<()> {
    let mut cfg = crate::config::load(config_path)?;
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.output.dir = o.clone();
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    match ov.threads {
        Some(0) => return Err(CliError::config("--threads", "must be at least 1")),
        Some(n) => pool = pool.num_threads(n),
        None => {}
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::config("--threads", e.to_string()))?;
    pool.install(|| execute(command, &cfg))
}

pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<()> {
    match command {
        Command::Simulate => cmd_simulate(cfg).map(drop),
        Command::Train => cmd_train(cfg).map(drop),
        Command::DensityGrid => cmd_density_grid(cfg).map(drop),
        Command::Sample => cmd_sample(cfg).map(drop),
        Command::Eval => cmd_eval(cfg).map(drop),
        Command::RareScore => cmd_rare_score(cfg).map(drop),
    }
}

fn context(cfg: &ExperimentConfig, command: Command) -> OutputContext {
    OutputContext {
        dir: cfg.output.dir.clone(),
        command: command.name().to_owned(),
        config: cfg.to_json(),
    }
}

pub enum Dataset {
    Static(Matrix),
    Process(PathDataset),
}

impl Dataset {
    pub fn dim(&self) -> usize {
        match self {
            Dataset::Static(m) => m.cols(),
            Dataset::Process(p) => p.dim(),
        }
    }

    /// Samples at time `t` (the data itself for static sets).
    pub fn at(&self, t: f64) -> Result<Matrix> {
        match self {
            Dataset::Static(m) => Ok(m.clone()),
            Dataset::Process(p) => Ok(p.samples_at(p.slot(t)?).clone()),
        }
    }
}

/// Runs `n` paths in fixed-size chunks across the pool and stitches them.
fn chunked_paths<F>(n: usize, sim: F) -> Result<SimOutput>
where
    F: Fn(usize, u64) -> tdde_core::Result<SimOutput> + Sync,
{
    let starts: Vec<usize> = (0..n).step_by(PATH_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| sim(PATH_CHUNK.min(n - s), s as u64))
        .collect::<tdde_core::Result<Vec<_>>>()?;
    let first = &parts[0].paths;
    let samples = (0..first.times().len())
        .map(|k| {
            let mut values = Vec::with_capacity(n * first.dim());
            parts.iter().for_each(|p| values.extend_from_slice(p.paths.samples_at(k).as_slice()));
            Matrix::new(n, first.dim(), values)
        })
        .collect::<tdde_core::Result<Vec<_>>>()?;
    Ok(SimOutput {
        paths: PathDataset::new(first.times().to_vec(), samples, true)?,
        blowups: parts.iter().map(|p| p.blowups).sum(),
    })
}

/// Draws (or loads) the data described by `cfg.data`, seeded by `tag`.
pub fn build_data(cfg: &ExperimentConfig, tag: u64) -> Result<(Dataset, usize)> {
    let seed = rng::derive_seed(cfg.seed, tag);
    let mut r = rng::seeded(seed);
    let knots = cfg.time_grid()?.times().to_vec();
    let stat = |m: tdde_core::Result<Matrix>| -> Result<(Dataset, usize)> { Ok((Dataset::Static(m?), 0)) };
    let proc = |s: SimOutput| -> Result<(Dataset, usize)> { Ok((Dataset::Process(s.paths), s.blowups)) };
    match &cfg.data {
        DataConfig::Circles { n } => stat(simdata::gen_circles(*n, &mut r)),
        DataConfig::Moons { n, noise } => stat(simdata::gen_moons_with_noise(*n, *noise, &mut r)),
        DataConfig::Checkerboard { n } => stat(simdata::gen_checkerboard(*n, &mut r)),
        DataConfig::Semisphere { n, dim, alpha } => stat(simdata::gen_semisphere(*dim, *n, *alpha, &mut r)),
        DataConfig::Csv {
            path,
            normalize,
            label_column,
        } => {
            let m = match label_column {
                Some(col) => io::load_labeled_csv(path, col, *normalize)?.0,
                None => {
                    let mut m = io::load_csv(path)?;
                    if *normalize {
                        io::normalize_rows(&mut m)
                            .map_err(|i| CliError::format(path, format!("row {} has zero norm", i + 1)))?;
                    }
                    m
                }
            };
            Ok((Dataset::Static(m), 0))
        }
        DataConfig::Duffing { n_paths, dt_sim, params } => {
            params.validate()?;
            proc(chunked_paths(*n_paths, |c, f| simdata::simulate(params, c, *dt_sim, &knots, seed, f))?)
        }
        DataConfig::BoucWen { n_paths, dt_sim, params } => {
            params.validate()?;
            proc(chunked_paths(*n_paths, |c, f| simdata::simulate(params, c, *dt_sim, &knots, seed, f))?)
        }
        DataConfig::Ou { n_paths, params } => {
            proc(chunked_paths(*n_paths, |c, f| simdata::simulate_ou_from(params, c, &knots, seed, f))?)
        }
        DataConfig::Paths { dir } => Ok((Dataset::Process(io::load_path_dataset(dir)?), 0)),
    }
}

/// Base density at the anchor knot.
pub fn base_density(cfg: &ExperimentConfig, dim: usize) -> Result<LatentDensity> {
    if let Some(b) = &cfg.model.base {
        return Ok(b.density()?);
    }
    Ok(match &cfg.data {
        DataConfig::Duffing { params, .. } => params.initial.clone(),
        DataConfig::BoucWen { params, .. } => params.initial.clone(),
        DataConfig::Ou { params, .. } => LatentDensity::gaussian(vec![params.m0], Matrix::new(1, 1, vec![params.v0])?)?,
        _ => LatentDensity::std_normal(dim)?,
    })
}

pub fn build_model(cfg: &ExperimentConfig, dim: usize) -> Result<ClassifierModel> {
    let m = &cfg.model;
    let embedding = match m.embedding.kind {
        EmbeddingKind::Raw => TimeEmbedding::raw(),
        EmbeddingKind::Fourier => {
            TimeEmbedding::fourier(m.embedding.n_freq, m.embedding.scale, rng::derive_seed(cfg.seed, tag::EMBED))?
        }
    };
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, tag::INIT));
    Ok(ClassifierModel::new(dim, &m.hidden, m.activation, embedding, &mut r)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub kind: &'static str,
    pub rows: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    pub blowups: usize,
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulateSummary> {
    if matches!(cfg.data, DataConfig::Csv { .. } | DataConfig::Paths { .. }) {
        return Err(CliError::config("data.kind", "file-backed data has nothing to simulate"));
    }
    let out = context(cfg, Command::Simulate);
    let (data, blowups) = build_data(cfg, tag::DATA)?;
    let summary = match &data {
        Dataset::Static(m) => {
            out.write("data.csv", &io::matrix_csv(m))?;
            SimulateSummary {
                kind: "static",
                rows: m.rows(),
                dim: m.cols(),
                times: Vec::new(),
                blowups,
            }
        }
        Dataset::Process(p) => {
            io::write_path_dataset(&out, "paths", p)?;
            SimulateSummary {
                kind: "paths",
                rows: p.samples_at(0).rows(),
                dim: p.dim(),
                times: p.times().to_vec(),
                blowups,
            }
        }
    };
    if blowups > 0 {
        eprintln!("warning: {blowups} paths blew up and were redrawn");
    }
    out.write_json("simulate_stats.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub mode: TrainMode,
    pub report: TrainReport,
}

/// Trains the classifier and writes `model.json` and `train_report.json`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<DensityModel> {
    let out = context(cfg, Command::Train);
    let (data, _) = build_data(cfg, tag::DATA)?;
    let grid = cfg.time_grid()?;
    let dim = data.dim();
    let base = base_density(cfg, dim)?;
    let model = build_model(cfg, dim)?;
    let tcfg = cfg.train.train_config(rng::derive_seed(cfg.seed, tag::TRAIN));
    let (epochs, every) = (tcfg.epochs, cfg.train.log_every);
    let mut observer = |p: &EpochProgress| {
        let e = p.epoch + 1;
        if every > 0 && (e % every == 0 || e == epochs) {
            println!("epoch {e:>6}  loss {:.6e}  lr {:.3e}", p.mean_loss, p.lr);
        }
    };
    let start = Instant::now();
    let (model, mut report) = match (&data, cfg.train.mode) {
        (Dataset::Static(m), TrainMode::Contrastive) => train_observed(
            model,
            DataSource::Static { data: m, latent: &base },
            &grid,
            &tcfg,
            &mut observer,
        )?,
        (Dataset::Process(p), TrainMode::Contrastive) => {
            train_observed(model, DataSource::Paths(p), &grid, &tcfg, &mut observer)?
        }
        (Dataset::Static(m), TrainMode::Ml) => ml_train(
            model,
            m,
            &base,
            &grid,
            cfg.train.lambda,
            cfg.train.penalty,
            &tcfg,
            &mut observer,
        )?,
        (Dataset::Process(_), TrainMode::Ml) => {
            return Err(CliError::config("train.mode", "the likelihood mode needs static data"))
        }
    };
    report.wall_time_secs = Some(start.elapsed().as_secs_f64());
    let dm = DensityModel::new(model, grid, base, cfg.model.anchor)?;
    out.write_json(MODEL_FILE, &ModelFile::new(dm.clone()))?;
    out.write_json(
        "train_report.json",
        &TrainSummary {
            mode: cfg.train.mode,
            report,
        },
    )?;
    Ok(dm)
}

pub fn load_trained(cfg: &ExperimentConfig) -> Result<DensityModel> {
    io::load_model(&cfg.output.dir.join(MODEL_FILE))
}

/// Applies `f` to fixed-size row blocks of `x` in parallel, in order.
pub fn par_rows<F>(x: &Matrix, f: F) -> Result<Vec<f64>>
where
    F: Fn(&Matrix) -> tdde_core::Result<Vec<f64>> + Sync,
{
    let starts: Vec<usize> = (0..x.rows()).step_by(EVAL_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + EVAL_CHUNK).min(x.rows())).collect();
            f(&x.select_rows(&idx))
        })
        .collect::<tdde_core::Result<Vec<_>>>()?;
    Ok(parts.concat())
}

fn space_grid(cfg: &ExperimentConfig, dim: usize) -> Result<&crate::config::SpaceGrid> {
    let g = cfg
        .eval
        .grid
        .as_ref()
        .ok_or_else(|| CliError::config("eval.grid", "required for density grids and the L2 metric"))?;
    if g.dim() != dim {
        return Err(CliError::config(
            "eval.grid",
            format!("grid has {} dimensions, model {dim}", g.dim()),
        ));
    }
    Ok(g)
}

/// `x_1..x_n, t, log_density` rows for every configured time.
pub fn cmd_density_grid(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = context(cfg, Command::DensityGrid);
    let dm = load_trained(cfg)?;
    let points = space_grid(cfg, dm.dim())?.points_matrix();
    let times = if cfg.eval.times.is_empty() {
        vec![dm.grid().t_end()]
    } else {
        cfg.eval.times.clone()
    };
    let mut rows = Vec::with_capacity(points.rows() * times.len());
    for &t in &times {
        let logp = par_rows(&points, |b| dm.log_density_batch(b, t))?;
        for (x, lp) in points.iter_rows().zip(logp) {
            let mut r = x.to_vec();
            r.extend([t, lp]);
            rows.push(r);
        }
    }
    let mut header = io::coord_header(dm.dim());
    header.extend(["t".to_owned(), "log_density".to_owned()]);
    out.write("density_grid.csv", &io::csv_string(&header, rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerStats {
    pub sampler: SamplerKind,
    pub t: f64,
    pub n_chains: usize,
    pub failed_chains: Vec<usize>,
    pub acceptance_rate: Option<f64>,
    pub rows: usize,
    pub wall_time_secs: f64,
}

fn chain_seeds(cfg: &ExperimentConfig, dm: &DensityModel, t: f64) -> Result<Matrix> {
    let n = cfg.sample.n_chains;
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, tag::CHAIN_SEEDS));
    let strategy = match &cfg.sample.init {
        InitConfig::Latent => return Ok(dm.base().sample_matrix(n, &mut r)),
        InitConfig::UniformBox { lower, upper } => SeedStrategy::UniformBox {
            lower: lower.clone(),
            upper: upper.clone(),
        },
        InitConfig::Data { noise_std } => SeedStrategy::DataInit {
            data: build_data(cfg, tag::DATA)?.0.at(t)?,
            noise_std: *noise_std,
        },
        InitConfig::Fixed { point } => SeedStrategy::Fixed(point.clone()),
    };
    Ok(seed_chains(&strategy, n, &mut r)?)
}

/// Chain draws with their global chain index and draw number.
pub struct Draws {
    pub chain: Vec<usize>,
    pub draw: Vec<usize>,
    pub x: Matrix,
    pub failed: Vec<usize>,
    pub acceptance_rate: Option<f64>,
}

fn collect_draws(parts: Vec<(usize, ChainOutput)>, n_chains: usize, dim: usize, final_only: bool, last: usize) -> Result<Draws> {
    let mut chain = Vec::new();
    let mut draw = Vec::new();
    let mut values = Vec::new();
    let mut failed = Vec::new();
    let (mut acc_num, mut acc_den) = (0.0, 0usize);
    for (start, out) in parts {
        let size = out.samples.rows() + out.failed.len();
        let alive: Vec<usize> = (0..size).filter(|i| !out.failed.contains(i)).map(|i| start + i).collect();
        failed.extend(out.failed.iter().map(|i| start + i));
        if let Some(a) = out.acceptance_rate {
            acc_num += a * size as f64;
            acc_den += size;
        }
        if final_only {
            chain.extend(&alive);
            draw.extend(std::iter::repeat_n(last, alive.len()));
            values.extend_from_slice(out.samples.as_slice());
        } else {
            for (k, snap) in out.trajectory.iter().enumerate() {
                chain.extend(&alive);
                draw.extend(std::iter::repeat_n(k, alive.len()));
                values.extend_from_slice(snap.as_slice());
            }
        }
    }
    debug_assert!(failed.len() <= n_chains);
    Ok(Draws {
        x: Matrix::new(chain.len(), dim, values)?,
        chain,
        draw,
        failed,
        acceptance_rate: (acc_den > 0).then(|| acc_num / acc_den as f64),
    })
}

/// Runs the configured sampler on `dm` at time `t`.
pub fn run_sampler(cfg: &ExperimentConfig, dm: &DensityModel, t: f64) -> Result<Draws> {
    let s = &cfg.sample;
    let target = dm.at_time(t)?;
    let seeds = chain_seeds(cfg, dm, t)?;
    let chain_seed = rng::derive_seed(cfg.seed, tag::CHAINS);
    let starts: Vec<usize> = (0..s.n_chains).step_by(CHAIN_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&st| {
            let idx: Vec<usize> = (st..(st + CHAIN_CHUNK).min(s.n_chains)).collect();
            let block = seeds.select_rows(&idx);
            let streams = ChainStreams {
                seed: chain_seed,
                first_chain: st as u64,
            };
            let out = match s.sampler {
                SamplerKind::Ula => ula(&target, &block, s.step, s.steps, 0, streams),
                SamplerKind::Hmc => hmc(
                    &target,
                    &block,
                    &HmcConfig {
                        step: s.step,
                        n_leapfrog: s.n_leapfrog,
                        n_samples: s.n_samples,
                        burn_in: s.burn_in,
                        thin: s.thin,
                    },
                    streams,
                ),
            };
            out.map(|o| (st, o))
        })
        .collect::<tdde_core::Result<Vec<_>>>()?;
    collect_draws(parts, s.n_chains, dm.dim(), s.sampler == SamplerKind::Ula, s.steps)
}

/// Writes `samples.csv` (chain, draw, x_1..x_n) and `sampler_stats.json`.
pub fn cmd_sample(cfg: &ExperimentConfig) -> Result<Draws> {
    let out = context(cfg, Command::Sample);
    let dm = load_trained(cfg)?;
    let t = cfg.sample.t.unwrap_or(dm.grid().t_end());
    let start = Instant::now();
    let draws = run_sampler(cfg, &dm, t)?;
    let elapsed = start.elapsed().as_secs_f64();
    if !draws.failed.is_empty() {
        eprintln!("warning: {} chains diverged and were dropped", draws.failed.len());
    }
    let mut header = vec!["chain".to_owned(), "draw".to_owned()];
    header.extend(io::coord_header(dm.dim()));
    let rows = draws.x.iter_rows().enumerate().map(|(i, x)| {
        let mut r = vec![draws.chain[i] as f64, draws.draw[i] as f64];
        r.extend_from_slice(x);
        r
    });
    out.write(SAMPLES_FILE, &io::csv_string(&header, rows))?;
    out.write_json(
        "sampler_stats.json",
        &SamplerStats {
            sampler: cfg.sample.sampler,
            t,
            n_chains: cfg.sample.n_chains,
            failed_chains: draws.failed.clone(),
            acceptance_rate: draws.acceptance_rate,
            rows: draws.x.rows(),
            wall_time_secs: elapsed,
        },
    )?;
    Ok(draws)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub metric: Metric,
    pub value: f64,
    pub converged: bool,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsFile {
    pub metrics: Vec<MetricRecord>,
    pub config: serde_json::Value,
}

fn reference_samples(cfg: &ExperimentConfig, t: f64) -> Result<Matrix> {
    match &cfg.eval.reference {
        Some(p) => io::load_samples(p),
        None => build_data(cfg, tag::REFERENCE)?.0.at(t),
    }
}

fn scored_roc(cfg: &ExperimentConfig, dm: &DensityModel) -> Result<(Vec<f64>, Vec<bool>, RocCurve)> {
    let path = cfg
        .eval
        .labeled
        .as_ref()
        .ok_or_else(|| CliError::config("eval.labeled", "a labeled CSV is required"))?;
    let (x, labels) = io::load_labeled_csv(path, &cfg.eval.label_column, cfg.eval.normalize)?;
    let scores = par_rows(&x, |b| rarity_scores(dm, b))?;
    let roc = roc_auc(&scores, &labels)?;
    Ok((scores, labels, roc))
}

fn ecdf_csv(points: &[(f64, f64)]) -> Vec<u8> {
    io::csv_string(&["value".to_owned(), "cdf".to_owned()], points.iter().map(|&(v, c)| vec![v, c]))
}

fn roc_csv(roc: &RocCurve) -> Vec<u8> {
    io::csv_string(&["fpr".to_owned(), "tpr".to_owned()], roc.points.iter().map(|&(f, t)| vec![f, t]))
}

/// Computes the configured metrics and writes `metrics.json`.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
    let out = context(cfg, Command::Eval);
    let needs_model = cfg.eval.metrics.iter().any(|m| matches!(m, Metric::L2 | Metric::Auc));
    let dm = if needs_model { Some(load_trained(cfg)?) } else { None };
    let t_end = match &dm {
        Some(d) => d.grid().t_end(),
        None => cfg.time_grid()?.t_end(),
    };
    let t_sample = cfg.sample.t.unwrap_or(t_end);
    let samples_path = cfg.eval.samples.clone().unwrap_or_else(|| cfg.output.dir.join(SAMPLES_FILE));
    let mut records = Vec::new();
    for &metric in &cfg.eval.metrics {
        let rec = match metric {
            Metric::Ot => {
                let a = io::load_samples(&samples_path)?;
                let b = reference_samples(cfg, t_sample)?;
                let r: SinkhornResult = ot_distance(&a, &b, &cfg.eval.ot)?;
                MetricRecord {
                    metric,
                    value: r.cost,
                    converged: r.converged,
                    details: serde_json::to_value(r).expect("serializable"),
                }
            }
            Metric::Ks => {
                let a = io::load_samples(&samples_path)?;
                let b = reference_samples(cfg, t_sample)?;
                if a.cols() != b.cols() {
                    return Err(CliError::format(&samples_path, format!("{} columns, reference has {}", a.cols(), b.cols())));
                }
                let mut per_dim = Vec::with_capacity(a.cols());
                for d in 0..a.cols() {
                    let c = ecdf_distance(&a.column(d), &b.column(d))?;
                    out.write(&format!("ecdf_samples_x_{}.csv", d + 1), &ecdf_csv(&c.ecdf_a))?;
                    out.write(&format!("ecdf_reference_x_{}.csv", d + 1), &ecdf_csv(&c.ecdf_b))?;
                    per_dim.push(c.ks);
                }
                MetricRecord {
                    metric,
                    value: per_dim.iter().copied().fold(0.0, f64::max),
                    converged: true,
                    details: serde_json::json!({ "ks_per_dim": per_dim }),
                }
            }
            Metric::L2 => {
                let dm = dm.as_ref().expect("loaded above");
                let t = cfg.eval.l2_time.unwrap_or(t_end);
                let grid = space_grid(cfg, dm.dim())?;
                let points = grid.points_matrix();
                let model_log = par_rows(&points, |b| dm.log_density_batch(b, t))?;
                let kde = KdeModel::fit_silverman(&reference_samples(cfg, t)?)?;
                let ref_log = par_rows(&points, |b| kde.logpdf_batch(b))?;
                let value = grid_l2(&model_log, &ref_log, grid.cell_volume())?;
                MetricRecord {
                    metric,
                    value,
                    converged: true,
                    details: serde_json::json!({ "t": t, "bandwidth": kde.bandwidth(), "grid_points": points.rows() }),
                }
            }
            Metric::Auc => {
                let (_, labels, roc) = scored_roc(cfg, dm.as_ref().expect("loaded above"))?;
                out.write("roc.csv", &roc_csv(&roc))?;
                MetricRecord {
                    metric,
                    value: roc.auc,
                    converged: true,
                    details: serde_json::json!({ "n": labels.len(), "n_positive": labels.iter().filter(|&&l| l).count() }),
                }
            }
        };
        records.push(rec);
    }
    out.write_json(
        "metrics.json",
        &MetricsFile {
            metrics: records.clone(),
            config: cfg.to_json(),
        },
    )?;
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct RareSummary {
    pub auc: f64,
    pub n: usize,
    pub n_positive: usize,
}

/// Scores a labeled CSV by `-log rho_1`, ranked from rarest, plus its ROC.
pub fn cmd_rare_score(cfg: &ExperimentConfig) -> Result<RareSummary> {
    let out = context(cfg, Command::RareScore);
    let dm = load_trained(cfg)?;
    let (scores, labels, roc) = scored_roc(cfg, &dm)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let header = ["rank", "index", "score", "label"].map(str::to_owned);
    let rows = order
        .iter()
        .enumerate()
        .map(|(r, &i)| vec![(r + 1) as f64, i as f64, scores[i], f64::from(u8::from(labels[i]))]);
    out.write("rare_scores.csv", &io::csv_string(&header, rows))?;
    out.write("roc.csv", &roc_csv(&roc))?;
    let summary = RareSummary {
        auc: roc.auc,
        n: labels.len(),
        n_positive: labels.iter().filter(|&&l| l).count(),
    };
    out.write_json("rare_metrics.json", &summary)?;
    Ok(summary)
}
