use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::density::DensityModel;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::math;

/// `sqrt(sum (exp p - exp q)^2 * cell_volume)` over matching grid cells.
pub fn grid_l2(p_log: &[f64], q_log: &[f64], cell_volume: f64) -> Result<f64> {
    if p_log.len() != q_log.len() {
        return Err(shape_err!("grids have {} and {} cells", p_log.len(), q_log.len()));
    }
    if !(cell_volume > 0.0) {
        return Err(arg_err!("cell volume must be positive"));
    }
    let sq: Vec<f64> = p_log
        .iter()
        .zip(q_log)
        .map(|(p, q)| {
            let d = math::exp(*p) - math::exp(*q);
            d * d
        })
        .collect();
    Ok(math::sqrt(math::pairwise_sum(&sq) * cell_volume))
}

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(arg_err!("empirical CDF needs samples"));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(arg_err!("samples contain NaN"));
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Step points `(x, F(x))` at each distinct sample value.
pub fn ecdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    let s = sorted(samples)?;
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in s.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = f,
            _ => out.push((x, f)),
        }
    }
    Ok(out)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let (sa, sb) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfComparison {
    pub ks: f64,
    pub ecdf_a: Vec<(f64, f64)>,
    pub ecdf_b: Vec<(f64, f64)>,
}

pub fn ecdf_distance(a: &[f64], b: &[f64]) -> Result<EcdfComparison> {
    Ok(EcdfComparison {
        ks: ks_statistic(a, b)?,
        ecdf_a: ecdf(a)?,
        ecdf_b: ecdf(b)?,
    })
}

/// `-log rho_1(x)` per row; larger is rarer.
pub fn rarity_scores(dm: &DensityModel, x: &Matrix) -> Result<Vec<f64>> {
    Ok(dm.log_density_data_batch(x)?.into_iter().map(|v| -v).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC of `scores` against `labels` (true = positive / rare). The AUC is the
/// Mann-Whitney statistic with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(shape_err!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(arg_err!("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(alloc::format!(
            "{n_pos} positive and {n_neg} negative labels"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut k = i;
        while k + 1 < order.len() && scores[order[k + 1]] == scores[order[i]] {
            k += 1;
        }
        let mid = (i + k + 2) as f64 / 2.0;
        rank_sum_pos += mid * order[i..=k].iter().filter(|&&o| labels[o]).count() as f64;
        i = k + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    let auc = (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);
    // Sweep thresholds from high to low scores.
    let mut points = alloc::vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = order.len();
    while i > 0 {
        let s = scores[order[i - 1]];
        while i > 0 && scores[order[i - 1]] == s {
            if labels[order[i - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i -= 1;
        }
        points.push((fp as f64 / q, tp as f64 / p));
    }
    Ok(RocCurve { points, auc })
}
