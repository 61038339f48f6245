//! Mutual information gap with plug-in histogram MI.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIG_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigScore {
    /// Mean normalized gap over the factors that were scored.
    pub score: f64,
    /// `None` for constant factors, which are skipped.
    pub per_factor: Vec<Option<f64>>,
}

impl MigScore {
    pub fn skipped_factors(&self) -> Vec<usize> {
        self.per_factor
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_none().then_some(i))
            .collect()
    }
}

/// `mean_k (I(v_k; z_(1)) - I(v_k; z_(2))) / H(v_k)` where `z_(1)`, `z_(2)`
/// are the two latent dimensions most informative about factor `v_k`.
///
/// `latents[i]` and `factors[i]` describe sample `i`.
pub fn mig_score(latents: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<MigScore> {
    let n = latents.len();
    if factors.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: factors.len(),
        });
    }
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let d = latents[0].len();
    if d < 2 {
        return Err(Error::InvalidDimension(format!(
            "MIG needs >= 2 latent dimensions, got {d}"
        )));
    }
    let n_factors = factors[0].len();
    if latents.iter().any(|r| r.len() != d) || factors.iter().any(|r| r.len() != n_factors) {
        return Err(Error::Domain("ragged sample matrix".into()));
    }

    let binned: Vec<Vec<usize>> = (0..d)
        .map(|j| quantile_bins(&latents.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();

    let mut per_factor = Vec::with_capacity(n_factors);
    for k in 0..n_factors {
        let levels = relabel(&factors.iter().map(|r| r[k]).collect::<Vec<_>>());
        let entropy = plugin_entropy(&levels);
        if entropy <= 0.0 {
            per_factor.push(None);
            continue;
        }
        let mut mis: Vec<f64> = binned
            .iter()
            .map(|bins| plugin_mi(&levels, bins))
            .collect();
        mis.sort_by(|a, b| b.total_cmp(a));
        let gap = ((mis[0] - mis[1]) / entropy).clamp(0.0, 1.0);
        per_factor.push(Some(gap));
    }
    let scored: Vec<f64> = per_factor.iter().flatten().cloned().collect();
    if scored.is_empty() {
        return Err(Error::Domain(
            "every factor is constant; MIG is undefined".into(),
        ));
    }
    Ok(MigScore {
        score: scored.iter().sum::<f64>() / scored.len() as f64,
        per_factor,
    })
}

/// Equal-frequency bins by rank; tied values share a bin.
fn quantile_bins(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| {
            let below = sorted.partition_point(|s| s < v);
            ((MIG_BINS * below) / n).min(MIG_BINS - 1)
        })
        .collect()
}

fn relabel(values: &[usize]) -> Vec<usize> {
    let mut ids = BTreeMap::new();
    values
        .iter()
        .map(|v| {
            let next = ids.len();
            *ids.entry(*v).or_insert(next)
        })
        .collect()
}

fn plugin_entropy(labels: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let n = labels.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn plugin_mi(a: &[usize], b: &[usize]) -> f64 {
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ma: BTreeMap<usize, usize> = BTreeMap::new();
    let mut mb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
        *ma.entry(x).or_insert(0) += 1;
        *mb.entry(y).or_insert(0) += 1;
    }
    let n = a.len() as f64;
    joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ma[&x] as f64 / n;
            let py = mb[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sample(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut latents = Vec::new();
        let mut factors = Vec::new();
        for _ in 0..n {
            let v0 = rng.random_range(0..4usize);
            let v1 = rng.random_range(0..3usize);
            let noise: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            // dim 0 encodes v0, dim 2 encodes v1, dims 1 and 3 are noise.
            latents.push(vec![
                v0 as f64 * 1.5 - 2.0,
                noise[0],
                (v1 as f64).exp(),
                noise[1],
            ]);
            factors.push(vec![v0, v1]);
        }
        (latents, factors)
    }

    #[test]
    fn perfect_disentanglement_scores_one() {
        let (latents, factors) = sample(10_000, 1);
        let mig = mig_score(&latents, &factors).unwrap();
        assert!(mig.score >= 0.95, "{}", mig.score);
    }

    #[test]
    fn independent_latents_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (latents, factors): (Vec<Vec<f64>>, Vec<Vec<usize>>) = (0..10_000)
            .map(|_| {
                let l: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
                (l, vec![rng.random_range(0..4usize), rng.random_range(0..3usize)])
            })
            .unzip();
        let mig = mig_score(&latents, &factors).unwrap();
        assert!(mig.score <= 0.05, "{}", mig.score);
    }

    #[test]
    fn duplicated_encoding_has_no_gap() {
        let (mut latents, factors) = sample(5_000, 3);
        for row in latents.iter_mut() {
            row[1] = row[0] * 2.0 + 1.0;
        }
        let mig = mig_score(&latents, &factors).unwrap();
        assert!(mig.per_factor[0].unwrap() < 0.01);
    }

    #[test]
    fn constant_factor_is_skipped() {
        let (latents, mut factors) = sample(2_000, 4);
        for f in factors.iter_mut() {
            f.push(7);
        }
        let mig = mig_score(&latents, &factors).unwrap();
        assert_eq!(mig.skipped_factors(), vec![2]);
        let only_constant: Vec<Vec<usize>> = factors.iter().map(|_| vec![1]).collect();
        assert!(mig_score(&latents, &only_constant).is_err());
        let one_dim: Vec<Vec<f64>> = latents.iter().map(|r| vec![r[0]]).collect();
        assert!(mig_score(&one_dim, &factors).is_err());
    }

    #[test]
    fn permutation_of_latents_is_exact() {
        let (latents, factors) = sample(3_000, 5);
        let permuted: Vec<Vec<f64>> = latents
            .iter()
            .map(|r| vec![r[3], r[2], r[0], r[1]])
            .collect();
        let a = mig_score(&latents, &factors).unwrap();
        let b = mig_score(&permuted, &factors).unwrap();
        assert_eq!(a.score, b.score);
    }
}
