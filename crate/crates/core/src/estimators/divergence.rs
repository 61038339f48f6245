//! Total variation, Pinsker's bound, and discretized bivariate Gaussians.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;
const QUADRATURE_POINTS: usize = 24;
const GEOMETRIC_PANELS: usize = 48;

/// `sqrt(epsilon / 2)`: the largest total variation compatible with a KL
/// divergence (or mutual information) of `epsilon` nats.
pub fn pinsker_bound(epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!(
            "divergence must be finite and nonnegative, got {epsilon}"
        )));
    }
    Ok((epsilon / 2.0).sqrt())
}

/// `1/2 sum |p_i - q_i|` for two probability vectors.
pub fn tv_distance_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    for v in [p, q] {
        if v.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Domain("probabilities must be nonnegative".into()));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Domain(format!("probabilities sum to {s}, not 1")));
        }
    }
    let tv = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(tv.min(1.0))
}

/// Cell probabilities of a standard bivariate normal with correlation `rho`
/// on a `bins x bins` grid of equiprobable normal-quantile intervals,
/// row-major. Both marginals are uniform (`1/bins` per bin), so the product
/// of marginals is the constant `1/bins^2`.
pub fn discretized_gaussian_joint(rho: f64, bins: usize) -> Result<Vec<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")));
    }
    if bins < 2 {
        return Err(Error::InvalidDimension(format!("need >= 2 bins, got {bins}")));
    }
    let normal = Normal::standard();
    let edges: Vec<f64> = (0..=bins)
        .map(|i| match i {
            0 => f64::NEG_INFINITY,
            i if i == bins => f64::INFINITY,
            i => normal.inverse_cdf(i as f64 / bins as f64),
        })
        .collect();
    let s = (1.0 - rho * rho).sqrt();
    let (nodes, weights) = gauss_legendre(QUADRATURE_POINTS);

    let mut cells = vec![0.0; bins * bins];
    for i in 0..bins {
        // Integrate over u with x = Phi^-1(u) so each row carries mass 1/bins.
        for (a, b) in row_panels(i, bins) {
            let half = 0.5 * (b - a);
            for (t, w) in nodes.iter().zip(&weights) {
                let x = normal.inverse_cdf(a + half * (t + 1.0));
                let mut prev = 0.0;
                for j in 0..bins {
                    let upper = if j + 1 == bins {
                        1.0
                    } else {
                        normal.cdf((edges[j + 1] - rho * x) / s)
                    };
                    cells[i * bins + j] += half * w * (upper - prev).max(0.0);
                    prev = upper;
                }
            }
        }
    }
    let total: f64 = cells.iter().sum();
    cells.iter_mut().for_each(|c| *c /= total);
    Ok(cells)
}

/// Quadrature panels in u for row `i`. The outer rows are split
/// geometrically toward 0 or 1, where `Phi^-1` diverges.
fn row_panels(i: usize, bins: usize) -> Vec<(f64, f64)> {
    let width = 1.0 / bins as f64;
    let (lo, hi) = (i as f64 * width, (i + 1) as f64 * width);
    if i != 0 && i + 1 != bins {
        return vec![(lo, hi)];
    }
    let mut cuts: Vec<f64> = (0..GEOMETRIC_PANELS).map(|k| width * 0.5f64.powi(k as i32)).collect();
    cuts.push(0.0);
    cuts.reverse();
    let panels: Vec<(f64, f64)> = cuts.windows(2).map(|c| (c[0], c[1])).collect();
    if i == 0 {
        panels
    } else {
        panels.into_iter().rev().map(|(a, b)| (1.0 - b, 1.0 - a)).collect()
    }
}

/// Nodes and weights on [-1, 1] by Newton iteration on Legendre polynomials.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
