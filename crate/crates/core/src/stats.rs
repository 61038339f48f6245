//! Small descriptive and testing statistics shared by the suites.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor n - 1).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    sample_sd(xs) / (xs.len() as f64).sqrt()
}

/// Binomial standard error `sqrt(p (1 - p) / n)`.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Cluster-robust standard error of the mean of `values` when
/// observations sharing a cluster label may be correlated: the sandwich
/// variance `C/(C-1) sum_c (T_c - m n_c)^2 / n^2` over cluster totals
/// `T_c` and sizes `n_c`. Singleton clusters reduce it to the usual
/// standard error with divisor `n - 1`.
pub fn cluster_se(values: &[f64], clusters: &[usize]) -> Result<f64> {
    if values.len() != clusters.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            got: clusters.len(),
        });
    }
    let mut groups: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
    for (&v, &c) in values.iter().zip(clusters) {
        let g = groups.entry(c).or_default();
        g.0 += v;
        g.1 += 1.0;
    }
    let c = groups.len();
    if c < 2 {
        return Err(Error::InsufficientData { needed: 2, got: c });
    }
    let n = values.len() as f64;
    let m = mean(values);
    let ss: f64 = groups.values().map(|(t, k)| (t - m * k).powi(2)).sum();
    Ok((c as f64 / (c as f64 - 1.0) * ss).sqrt() / n)
}

/// Linear-interpolation quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q))
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// One-sided Mann-Whitney test that `greater` is stochastically larger than
/// `smaller`. Returns the normal-approximation p-value with tie correction.
pub fn mann_whitney_greater(greater: &[f64], smaller: &[f64]) -> f64 {
    let n1 = greater.len();
    let n2 = smaller.len();
    let mut pooled: Vec<(f64, bool)> = greater
        .iter()
        .map(|&x| (x, true))
        .chain(smaller.iter().map(|&x| (x, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = pooled.len();
    let mut rank_sum = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        for item in &pooled[i..=j] {
            if item.1 {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let u = rank_sum - n1f * (n1f + 1.0) / 2.0;
    let mu = n1f * n2f / 2.0;
    let sigma = (n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)))).sqrt();
    if sigma == 0.0 {
        return 0.5;
    }
    let z = (u - mu) / sigma;
    1.0 - Normal::standard().cdf(z)
}

/// Chi-square test of homogeneity for two count vectors over the same
/// categories. Categories empty in both samples are dropped.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let total = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&ca, &cb) in a.iter().zip(b) {
        let col = (ca + cb) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        let ea = col * na as f64 / total;
        let eb = col * nb as f64 / total;
        stat += (ca as f64 - ea).powi(2) / ea + (cb as f64 - eb).powi(2) / eb;
    }
    if cells < 2 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new((cells - 1) as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(1.0 - dist.cdf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_se_reduces_to_standard_error() {
        let xs = [0.3, 1.2, -0.5, 2.0, 0.7];
        let se = cluster_se(&xs, &[0, 1, 2, 3, 4]).unwrap();
        assert!((se - std_error(&xs)).abs() < 1e-15);
        // Perfectly correlated pairs carry half the information.
        let dup = [0.3, 0.3, 1.2, 1.2, -0.5, -0.5];
        let se2 = cluster_se(&dup, &[0, 0, 1, 1, 2, 2]).unwrap();
        assert!((se2 - std_error(&[0.3, 1.2, -0.5])).abs() < 1e-15);
        assert!(cluster_se(&xs, &[0; 5]).is_err());
        assert!(cluster_se(&xs, &[0, 1]).is_err());
    }

    #[test]
    fn sd_uses_n_minus_one() {
        assert!((sample_sd(&[0.1, 0.2, 0.3]) - 0.1).abs() < 1e-15);
        assert!((mean(&[0.1, 0.2, 0.3]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&xs, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&xs, 1.0).unwrap(), 4.0);
        assert!((quantile(&xs, 0.5).unwrap() - 2.5).abs() < 1e-15);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn mann_whitney_detects_shift() {
        let a: Vec<f64> = (0..50).map(|i| i as f64 + 10.0).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert!(mann_whitney_greater(&a, &b) < 0.01);
        assert!(mann_whitney_greater(&b, &a) > 0.99);
    }

    #[test]
    fn chi_square_identical_counts() {
        let p = chi_square_homogeneity(&[10, 20, 30], &[10, 20, 30]).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        let p = chi_square_homogeneity(&[100, 0], &[0, 100]).unwrap();
        assert!(p < 1e-10);
    }
}
