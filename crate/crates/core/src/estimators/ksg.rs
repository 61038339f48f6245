//! Kraskov-Stoegbauer-Grassberger estimator (algorithm 1), brute force.
//!
//! For each point the distance `eps_i` to its k-th neighbor in the joint
//! space is taken under the max-norm; `n_x(i)` and `n_y(i)` count marginal
//! neighbors strictly closer than `eps_i`. Then
//! `I = psi(k) + psi(N) - <psi(n_x + 1) + psi(n_y + 1)>`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::digamma;

use super::{MiEstimate, MiMethod};
use crate::error::{Error, Result};

pub const DEFAULT_KSG_K: usize = 3;
const JITTER_SCALE: f64 = 1e-10;
const JITTER_SEED: u64 = 0x6b73_675f_6a69_7474;

/// KSG mutual information between paired samples `x[i]`, `y[i]` (nats).
pub fn ksg_mi(x: &[Vec<f64>], y: &[Vec<f64>], k: usize) -> Result<MiEstimate> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if k == 0 {
        return Err(Error::Domain("k must be >= 1".into()));
    }
    if n < k + 1 {
        return Err(Error::InsufficientData {
            needed: k + 1,
            got: n,
        });
    }
    let xs = flatten_jittered(x, 0)?;
    let ys = flatten_jittered(y, 1)?;
    let dx = x[0].len();
    let dy = y[0].len();

    let digamma_sum: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let (nx, ny) = neighbor_counts(&xs, &ys, dx, dy, n, i, k);
            digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();

    let value = digamma(k as f64) + digamma(n as f64) - digamma_sum / n as f64;
    let ceiling = digamma(n as f64) - digamma(k as f64);
    Ok(MiEstimate {
        value,
        method: MiMethod::Ksg,
        n_samples: Some(n),
        k: Some(k),
        saturated: value >= ceiling - 1.0,
    })
}

/// Row-major copy with deterministic uniform tie-breaking noise scaled to
/// each coordinate's spread.
fn flatten_jittered(rows: &[Vec<f64>], stream: u64) -> Result<Vec<f64>> {
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::InvalidDimension("samples must have dimension >= 1".into()));
    }
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * d);
    for row in rows {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite sample".into()));
        }
        flat.extend_from_slice(row);
    }
    let scales: Vec<f64> = (0..d)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            JITTER_SCALE * if sd > 0.0 { sd } else { 1.0 }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
    rng.set_stream(stream);
    for (idx, v) in flat.iter_mut().enumerate() {
        *v += scales[idx % d] * rng.random_range(-1.0..1.0);
    }
    Ok(flat)
}

#[inline]
fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

fn neighbor_counts(
    xs: &[f64],
    ys: &[f64],
    dx: usize,
    dy: usize,
    n: usize,
    i: usize,
    k: usize,
) -> (usize, usize) {
    let xi = &xs[i * dx..(i + 1) * dx];
    let yi = &ys[i * dy..(i + 1) * dy];
    let mut x_dist = vec![0.0; n];
    let mut y_dist = vec![0.0; n];
    // k smallest joint distances, kept sorted ascending.
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for j in 0..n {
        if j == i {
            continue;
        }
        let ddx = max_dist(xi, &xs[j * dx..(j + 1) * dx]);
        let ddy = max_dist(yi, &ys[j * dy..(j + 1) * dy]);
        x_dist[j] = ddx;
        y_dist[j] = ddy;
        let joint = ddx.max(ddy);
        if best.len() < k || joint < best[best.len() - 1] {
            let pos = best.partition_point(|&b| b <= joint);
            best.insert(pos, joint);
            if best.len() > k {
                best.pop();
            }
        }
    }
    let eps = best[k - 1];
    let mut nx = 0;
    let mut ny = 0;
    for j in 0..n {
        if j == i {
            continue;
        }
        if x_dist[j] < eps {
            nx += 1;
        }
        if y_dist[j] < eps {
            ny += 1;
        }
    }
    (nx, ny)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn bivariate(rho: f64, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (1.0 - rho * rho).sqrt();
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (vec![a], vec![rho * a + s * b])
            })
            .unzip()
    }

    #[test]
    fn independent_samples_near_zero() {
        let (x, y) = bivariate(0.0, 10_000, 1);
        let est = ksg_mi(&x, &y, 3).unwrap();
        assert!(est.value.abs() <= 0.02, "{}", est.value);
        assert!(!est.saturated);
    }

    #[test]
    fn recovers_gaussian_mi() {
        for (seed, rho) in [0.0, 0.3, 0.6, 0.9].into_iter().enumerate() {
            let (x, y) = bivariate(rho, 10_000, 10 + seed as u64);
            let est = ksg_mi(&x, &y, 3).unwrap().value;
            let truth = -0.5 * (1.0 - rho * rho).ln();
            assert!((est - truth).abs() <= 0.05, "rho {rho}: {est} vs {truth}");
        }
    }

    #[test]
    fn deterministic_dependence_saturates() {
        let (x, _) = bivariate(0.0, 10_000, 2);
        let est = ksg_mi(&x, &x, 3).unwrap();
        assert!(est.value > 3.0);
        assert!(est.saturated);
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let (x, y) = bivariate(0.6, 5_000, 3);
        let cubed: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0].powi(3)]).collect();
        let a = ksg_mi(&x, &y, 3).unwrap().value;
        let b = ksg_mi(&cubed, &y, 3).unwrap().value;
        assert!((a - b).abs() <= 0.03, "{a} vs {b}");
    }

    #[test]
    fn rejects_bad_input() {
        let x = vec![vec![0.0]; 3];
        assert!(ksg_mi(&x, &x, 3).is_err());
        assert!(ksg_mi(&x, &x[..2], 1).is_err());
        let nan = vec![vec![f64::NAN]; 5];
        assert!(ksg_mi(&nan, &nan, 1).is_err());
    }

    #[test]
    fn ties_are_broken() {
        // Discrete data would otherwise produce zero-radius neighborhoods.
        let x: Vec<Vec<f64>> = (0..400).map(|i| vec![(i % 4) as f64]).collect();
        let y: Vec<Vec<f64>> = (0..400).map(|i| vec![(i % 7) as f64]).collect();
        let est = ksg_mi(&x, &y, 3).unwrap();
        assert!(est.value.is_finite());
    }
}
