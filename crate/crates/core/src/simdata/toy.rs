//! Two-dimensional toy distributions and the perturbed semisphere.

use rand::Rng;

use crate::error::{arg_err, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::rng;

fn coin<R: Rng + ?Sized>(rng: &mut R) -> bool {
    rng.random::<bool>()
}

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(arg_err!("need at least one sample"));
    }
    Ok(())
}

/// Two rings of radii 1 and 0.5 with `N(0, 0.01^2)` jitter.
pub fn gen_circles<R: Rng + ?Sized>(n_data: usize, rng: &mut R) -> Result<Matrix> {
    check_count(n_data)?;
    let mut m = Matrix::zeros(n_data, 2);
    for i in 0..n_data {
        let theta = 2.0 * math::PI * rng::uniform(rng);
        let p = if coin(rng) { 1.0 } else { 0.0 };
        let r = 1.0 - p / 2.0;
        let row = m.row_mut(i);
        row[0] = r * math::cos(theta) + 0.01 * rng::normal(rng);
        row[1] = r * math::sin(theta) + 0.01 * rng::normal(rng);
    }
    Ok(m)
}

/// Two interleaved half circles with `N(0, 0.1^2)` jitter.
pub fn gen_moons<R: Rng + ?Sized>(n_data: usize, rng: &mut R) -> Result<Matrix> {
    gen_moons_with_noise(n_data, 0.1, rng)
}

pub fn gen_moons_with_noise<R: Rng + ?Sized>(n_data: usize, noise: f64, rng: &mut R) -> Result<Matrix> {
    check_count(n_data)?;
    if !(noise >= 0.0) {
        return Err(arg_err!("noise must be non-negative, got {noise}"));
    }
    let mut m = Matrix::zeros(n_data, 2);
    for i in 0..n_data {
        let theta = math::PI * rng::uniform(rng);
        let (c, s) = (math::cos(theta), math::sin(theta));
        let (a, b) = if coin(rng) { (1.0 - c, 0.5 - s) } else { (c, s) };
        let row = m.row_mut(i);
        row[0] = 2.0 * a + noise * rng::normal(rng) - 1.0;
        row[1] = 2.0 * b + noise * rng::normal(rng) - 1.0;
    }
    Ok(m)
}

/// `x1 = 2 u1 - 1`, `x2 = (p u2 + (floor(x1) mod 2)) / 2`.
pub fn gen_checkerboard<R: Rng + ?Sized>(n_data: usize, rng: &mut R) -> Result<Matrix> {
    check_count(n_data)?;
    let mut m = Matrix::zeros(n_data, 2);
    for i in 0..n_data {
        let x1 = 2.0 * rng::uniform(rng) - 1.0;
        let u2 = rng::uniform(rng);
        let p = if coin(rng) { 1.0 } else { 0.0 };
        let row = m.row_mut(i);
        row[0] = x1;
        row[1] = 0.5 * (p * u2 + math::rem_euclid(math::floor(x1), 2.0));
    }
    Ok(m)
}

/// Points near the upper unit half-sphere in `n_dim` dimensions:
/// `Y = [Z_1, .., Z_{n-1}, alpha |Z_n|]`, `X = (1 + b) Y / |Y|`, `b ~ U(0, 0.01)`.
pub fn gen_semisphere<R: Rng + ?Sized>(n_dim: usize, n_data: usize, alpha: f64, rng: &mut R) -> Result<Matrix> {
    check_count(n_data)?;
    if n_dim < 2 {
        return Err(arg_err!("semisphere needs at least 2 dimensions"));
    }
    if !(alpha > 0.0) {
        return Err(arg_err!("alpha must be positive, got {alpha}"));
    }
    let mut m = Matrix::zeros(n_data, n_dim);
    for i in 0..n_data {
        let row = m.row_mut(i);
        loop {
            row.iter_mut().for_each(|v| *v = rng::normal(rng));
            row[n_dim - 1] = alpha * row[n_dim - 1].abs();
            let norm = math::sqrt(row.iter().map(|v| v * v).sum());
            if norm > 0.0 {
                let scale = (1.0 + 0.01 * rng::uniform(rng)) / norm;
                row.iter_mut().for_each(|v| *v *= scale);
                break;
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ks_statistic;
    use alloc::vec::Vec;

    #[test]
    fn circle_radii() {
        let mut r = rng::seeded(0);
        let m = gen_circles(5000, &mut r).unwrap();
        let (mut inner, mut outer) = (0, 0);
        for row in m.iter_rows() {
            let rad = math::sqrt(row[0] * row[0] + row[1] * row[1]);
            if (rad - 1.0).abs() <= 0.09 {
                outer += 1;
            } else if (rad - 0.5).abs() <= 0.09 {
                inner += 1;
            } else {
                panic!("radius {rad}");
            }
        }
        assert!(inner > 2300 && outer > 2300);
    }

    #[test]
    fn checkerboard_range() {
        let mut r = rng::seeded(1);
        let m = gen_checkerboard(20_000, &mut r).unwrap();
        for row in m.iter_rows() {
            assert!((-1.0..=1.0).contains(&row[0]));
            assert!((0.0..=1.0).contains(&row[1]));
            // Left half sits in the upper band, right half in the lower.
            if row[0] < 0.0 {
                assert!(row[1] >= 0.5);
            } else {
                assert!(row[1] <= 0.5);
            }
        }
    }

    #[test]
    fn noiseless_moons_on_crescents() {
        let mut r = rng::seeded(2);
        let m = gen_moons_with_noise(2000, 0.0, &mut r).unwrap();
        for row in m.iter_rows() {
            let (a, b) = ((row[0] + 1.0) / 2.0, (row[1] + 1.0) / 2.0);
            let upper = (a * a + b * b - 1.0).abs() < 1e-12 && b >= -1e-12;
            let lower = ((1.0 - a).powi(2) + (0.5 - b).powi(2) - 1.0).abs() < 1e-12 && b <= 0.5 + 1e-12;
            assert!(upper || lower, "{row:?}");
        }
    }

    #[test]
    fn semisphere_shell() {
        let mut r = rng::seeded(3);
        let m = gen_semisphere(4, 5000, 5.0, &mut r).unwrap();
        for row in m.iter_rows() {
            let norm = math::sqrt(row.iter().map(|v| v * v).sum());
            assert!((1.0..=1.01 + 1e-12).contains(&norm));
            assert!(row[3] >= 0.0);
        }
        assert!(gen_semisphere(1, 5, 5.0, &mut r).is_err());
    }

    #[test]
    fn semisphere_last_coordinate_distribution() {
        let mut r = rng::seeded(4);
        let a = gen_semisphere(3, 20_000, 5.0, &mut r).unwrap().column(2);
        // Independent reference with its own draw order.
        let mut r2 = rng::seeded(99);
        let b: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let z: [f64; 3] = [rng::normal(&mut r2), rng::normal(&mut r2), rng::normal(&mut r2)];
                let y = [z[0], z[1], 5.0 * z[2].abs()];
                let n = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                (1.0 + 0.01 * rng::uniform(&mut r2)) * y[2] / n
            })
            .collect();
        let ks = ks_statistic(&a, &b).unwrap();
        assert!(ks < 0.02, "{ks}");
    }

    #[test]
    fn generators_are_seeded() {
        let a = gen_moons(100, &mut rng::seeded(7)).unwrap();
        let b = gen_moons(100, &mut rng::seeded(7)).unwrap();
        assert_eq!(a, b);
        assert!(gen_circles(0, &mut rng::seeded(7)).is_err());
    }
}
