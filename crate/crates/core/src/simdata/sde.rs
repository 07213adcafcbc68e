//! Second-order oscillators under additive white noise, and the
//! Ornstein-Uhlenbeck process with its closed-form transition.
//!
//! Oscillators use a splitting step: RK4 for the drift over `h`, then a
//! Gaussian kick of variance `2 pi s0 h` on the velocity.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::latent::LatentDensity;
use crate::linalg::Matrix;
use crate::math;
use crate::paths::PathDataset;
use crate::rng;

/// Any coordinate beyond this magnitude discards the path.
pub const BLOWUP_LIMIT: f64 = 1e6;

/// A system `dx = drift(x) dt + noise dW` with noise on one coordinate.
pub trait Sde {
    fn dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// Coordinate receiving the noise.
    fn noise_index(&self) -> usize;
    /// Per-step noise variance is `noise_intensity * h`.
    fn noise_intensity(&self) -> f64;
    fn initial(&self) -> &LatentDensity;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuffingParams {
    pub zeta: f64,
    pub omega0: f64,
    pub eps_nl: f64,
    pub s0: f64,
    pub initial: LatentDensity,
}

impl Default for DuffingParams {
    fn default() -> Self {
        Self {
            zeta: 0.25,
            omega0: 1.0,
            eps_nl: 1.0,
            s0: 0.5,
            initial: LatentDensity::equicorrelated(2, 1.0, 0.5).expect("valid covariance"),
        }
    }
}

impl Sde for DuffingParams {
    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let (y, v) = (x[0], x[1]);
        let w2 = self.omega0 * self.omega0;
        out[0] = v;
        out[1] = -2.0 * self.zeta * self.omega0 * v - w2 * (y + self.eps_nl * y * y * y);
    }

    fn noise_index(&self) -> usize {
        1
    }

    fn noise_intensity(&self) -> f64 {
        2.0 * math::PI * self.s0
    }

    fn initial(&self) -> &LatentDensity {
        &self.initial
    }
}

/// State `(y, z, ydot)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoucWenParams {
    pub zeta: f64,
    pub omega0: f64,
    pub alpha_e: f64,
    pub gamma: f64,
    pub beta: f64,
    pub nu_exp: f64,
    pub a_bw: f64,
    pub s0: f64,
    pub initial: LatentDensity,
}

impl Default for BoucWenParams {
    fn default() -> Self {
        Self {
            zeta: 0.05,
            omega0: 1.0,
            alpha_e: 0.01,
            gamma: 1.0,
            beta: 1.0,
            nu_exp: 1.0,
            a_bw: 1.0,
            s0: 0.5,
            initial: LatentDensity::equicorrelated(3, 1.0, 0.8).expect("valid covariance"),
        }
    }
}

impl DuffingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.omega0 > 0.0 && self.s0 >= 0.0 && self.eps_nl.is_finite()) {
            return Err(arg_err!("Duffing needs zeta, omega0 > 0 and s0 >= 0"));
        }
        if self.initial.dim() != 2 {
            return Err(shape_err!("Duffing initial density must be 2-dimensional"));
        }
        Ok(())
    }
}

impl BoucWenParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_e) || !(self.s0 >= 0.0) {
            return Err(arg_err!("Bouc-Wen needs alpha_e in [0, 1] and s0 >= 0"));
        }
        if !(self.zeta >= 0.0 && self.omega0 > 0.0 && self.nu_exp > 0.0) {
            return Err(arg_err!("Bouc-Wen needs zeta >= 0, omega0 > 0 and nu_exp > 0"));
        }
        if self.initial.dim() != 3 {
            return Err(shape_err!("Bouc-Wen initial density must be 3-dimensional"));
        }
        Ok(())
    }

    /// `|z|^(nu - 1) z`, exactly `z` when `nu == 1`.
    fn signed_pow(&self, z: f64) -> f64 {
        if self.nu_exp == 1.0 {
            z
        } else if z == 0.0 {
            0.0
        } else {
            z.signum() * math::powf(z.abs(), self.nu_exp)
        }
    }

    fn abs_pow(&self, z: f64) -> f64 {
        if self.nu_exp == 1.0 {
            z.abs()
        } else {
            math::powf(z.abs(), self.nu_exp)
        }
    }
}

impl Sde for BoucWenParams {
    fn dim(&self) -> usize {
        3
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let (y, z, v) = (x[0], x[1], x[2]);
        let w2 = self.omega0 * self.omega0;
        out[0] = v;
        out[1] = self.a_bw * v - self.gamma * v.abs() * self.signed_pow(z) - self.beta * v * self.abs_pow(z);
        out[2] = -2.0 * self.zeta * self.omega0 * v - w2 * (self.alpha_e * y + (1.0 - self.alpha_e) * z);
    }

    fn noise_index(&self) -> usize {
        2
    }

    fn noise_intensity(&self) -> f64 {
        2.0 * math::PI * self.s0
    }

    fn initial(&self) -> &LatentDensity {
        &self.initial
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub paths: PathDataset,
    /// Paths discarded and redrawn after crossing [`BLOWUP_LIMIT`].
    pub blowups: usize,
}

fn rk4<S: Sde + ?Sized>(sys: &S, x: &mut [f64], h: f64, k: &mut [Vec<f64>; 5]) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = k;
    sys.drift(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    sys.drift(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    sys.drift(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    sys.drift(tmp, k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Equal steps of at most `dt` covering `span` (tolerating round-off).
fn step_count(span: f64, dt: f64) -> usize {
    (libm::ceil(span / dt - 1e-9) as usize).max(1)
}

fn check_record(t_record: &[f64], dt_sim: f64) -> Result<()> {
    if t_record.is_empty() {
        return Err(arg_err!("no recording times given"));
    }
    if !(t_record[0] >= 0.0) || t_record.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(arg_err!("recording times must be non-negative and strictly increasing"));
    }
    if !(dt_sim > 0.0) || !dt_sim.is_finite() {
        return Err(arg_err!("simulation step must be positive, got {dt_sim}"));
    }
    Ok(())
}

/// Simulates paths `first_path .. first_path + n_paths`, path `i` drawing
/// from `rng::stream(seed, i)`. Each recording interval is split into equal
/// steps no longer than `dt_sim`, so records land exactly on `t_record`.
pub fn simulate<S: Sde + ?Sized>(
    sys: &S,
    n_paths: usize,
    dt_sim: f64,
    t_record: &[f64],
    seed: u64,
    first_path: u64,
) -> Result<SimOutput> {
    check_record(t_record, dt_sim)?;
    if n_paths == 0 {
        return Err(arg_err!("need at least one path"));
    }
    let n = sys.dim();
    let mut records: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths * n); t_record.len()];
    let noise_var = sys.noise_intensity();
    let noise_at = sys.noise_index();
    let mut scratch = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut x = vec![0.0; n];
    let mut kept: Vec<Vec<f64>> = vec![vec![0.0; n]; t_record.len()];
    let mut blowups = 0;
    for p in 0..n_paths as u64 {
        let mut r = rng::stream(seed, first_path + p);
        'attempt: loop {
            sys.initial().sample_into(&mut r, &mut x);
            let mut t = 0.0;
            for (slot, &tr) in t_record.iter().enumerate() {
                let span = tr - t;
                if span > 0.0 {
                    let steps = step_count(span, dt_sim);
                    let h = span / steps as f64;
                    let kick = math::sqrt(noise_var * h);
                    for _ in 0..steps {
                        rk4(sys, &mut x, h, &mut scratch);
                        if kick > 0.0 {
                            x[noise_at] += kick * rng::normal(&mut r);
                        }
                        if x.iter().any(|v| !(v.abs() <= BLOWUP_LIMIT)) {
                            blowups += 1;
                            continue 'attempt;
                        }
                    }
                }
                t = tr;
                kept[slot].copy_from_slice(&x);
            }
            break;
        }
        for (rec, k) in records.iter_mut().zip(&kept) {
            rec.extend_from_slice(k);
        }
    }
    let samples = records
        .into_iter()
        .map(|v| Matrix::from_vec_unchecked(n_paths, n, v))
        .collect();
    Ok(SimOutput {
        paths: PathDataset::new(t_record.to_vec(), samples, true)?,
        blowups,
    })
}

pub fn simulate_duffing(
    p: &DuffingParams,
    n_paths: usize,
    dt_sim: f64,
    t_record: &[f64],
    seed: u64,
) -> Result<SimOutput> {
    p.validate()?;
    simulate(p, n_paths, dt_sim, t_record, seed, 0)
}

pub fn simulate_bouc_wen(
    p: &BoucWenParams,
    n_paths: usize,
    dt_sim: f64,
    t_record: &[f64],
    seed: u64,
) -> Result<SimOutput> {
    p.validate()?;
    simulate(p, n_paths, dt_sim, t_record, seed, 0)
}

/// Scalar `dX = -theta X dt + sigma dW` with `X_0 ~ N(m0, v0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuParams {
    pub theta: f64,
    pub sigma: f64,
    pub m0: f64,
    pub v0: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self {
            theta: 1.0,
            sigma: 1.0,
            m0: 1.0,
            v0: 0.25,
        }
    }
}

/// Mean and variance of `X_t`.
pub fn ou_moments(p: &OuParams, t: f64) -> (f64, f64) {
    let e = math::exp(-p.theta * t);
    let s2 = p.sigma * p.sigma / (2.0 * p.theta);
    (p.m0 * e, p.v0 * e * e + s2 * (1.0 - e * e))
}

pub fn ou_log_density(p: &OuParams, x: f64, t: f64) -> f64 {
    let (m, v) = ou_moments(p, t);
    -0.5 * (x - m) * (x - m) / v - 0.5 * math::ln(v) - 0.5 * math::LN_2PI
}

/// `d/dt log rho_t(x)` of the Gaussian marginal.
pub fn ou_dt_log_density(p: &OuParams, x: f64, t: f64) -> f64 {
    let (m, v) = ou_moments(p, t);
    let e = math::exp(-p.theta * t);
    let dm = -p.theta * p.m0 * e;
    let dv = -2.0 * p.theta * (p.v0 - p.sigma * p.sigma / (2.0 * p.theta)) * e * e;
    let r = x - m;
    r * dm / v + 0.5 * dv * (r * r / (v * v) - 1.0 / v)
}

impl OuParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.sigma > 0.0 && self.v0 > 0.0) || !self.m0.is_finite() {
            return Err(arg_err!("OU needs theta, sigma, v0 > 0"));
        }
        Ok(())
    }
}

/// Paired OU paths through the exact Gaussian transition.
pub fn simulate_ou(p: &OuParams, n_paths: usize, t_record: &[f64], seed: u64) -> Result<SimOutput> {
    simulate_ou_from(p, n_paths, t_record, seed, 0)
}

/// Paths `first_path .. first_path + n_paths` of [`simulate_ou`].
pub fn simulate_ou_from(p: &OuParams, n_paths: usize, t_record: &[f64], seed: u64, first_path: u64) -> Result<SimOutput> {
    p.validate()?;
    check_record(t_record, 1.0)?;
    if n_paths == 0 {
        return Err(arg_err!("need at least one path"));
    }
    let mut records: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); t_record.len()];
    for i in first_path..first_path + n_paths as u64 {
        let mut r = rng::stream(seed, i);
        let mut x = p.m0 + math::sqrt(p.v0) * rng::normal(&mut r);
        let mut t = 0.0;
        for (slot, &tr) in t_record.iter().enumerate() {
            let h = tr - t;
            if h > 0.0 {
                let e = math::exp(-p.theta * h);
                let var = p.sigma * p.sigma / (2.0 * p.theta) * (1.0 - e * e);
                x = x * e + math::sqrt(var) * rng::normal(&mut r);
            }
            t = tr;
            records[slot].push(x);
        }
    }
    let samples = records
        .into_iter()
        .map(|v| Matrix::from_vec_unchecked(n_paths, 1, v))
        .collect();
    Ok(SimOutput {
        paths: PathDataset::new(t_record.to_vec(), samples, true)?,
        blowups: 0,
    })
}
