//! DCI disentanglement from standardized ridge-regression importances.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DCI_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DciScore {
    pub score: f64,
    /// `importance[j][k]`: magnitude of latent `j`'s coefficient for factor `k`.
    pub importance: Vec<Vec<f64>>,
}

/// Importance-weighted mean over latents of `1 - H(P_j)`, where `P_j` is
/// latent `j`'s row of importances normalized to sum to one and the entropy
/// is taken in base K (the number of factors). With a single factor the
/// roles swap: the score is one minus the base-d entropy of the importance
/// column over the d latents.
pub fn dci_disentanglement(latents: &[Vec<f64>], factors: &[Vec<f64>]) -> Result<DciScore> {
    let n = latents.len();
    if factors.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: factors.len(),
        });
    }
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let d = latents[0].len();
    let n_factors = factors[0].len();
    if d == 0 || n_factors == 0 {
        return Err(Error::InvalidDimension(
            "latents and factors must be nonempty".into(),
        ));
    }
    if latents.iter().any(|r| r.len() != d) || factors.iter().any(|r| r.len() != n_factors) {
        return Err(Error::Domain("ragged sample matrix".into()));
    }
    if latents.iter().chain(factors).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite sample".into()));
    }

    // Canonical column order makes the result bit-identical under any
    // permutation of latent dimensions.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| compare_columns(latents, a, b));

    let z = standardized(n, d, |i, j| latents[i][order[j]]);
    let v = standardized(n, n_factors, |i, k| factors[i][k]);
    let nf = n as f64;
    let gram = z.transpose() * &z / nf + DMatrix::identity(d, d) * DCI_RIDGE;
    let rhs = z.transpose() * &v / nf;
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("ridge Gram matrix".into()))?
        .solve(&rhs);

    let mut importance = vec![vec![0.0; n_factors]; d];
    for (pos, &j) in order.iter().enumerate() {
        for k in 0..n_factors {
            importance[j][k] = beta[(pos, k)].abs();
        }
    }

    let score = if n_factors == 1 {
        let column: Vec<f64> = order.iter().map(|&j| importance[j][0]).collect();
        1.0 - normalized_entropy(&column, d)
    } else {
        let total: f64 = order.iter().map(|&j| importance[j].iter().sum::<f64>()).sum();
        if total <= 0.0 {
            0.0
        } else {
            order
                .iter()
                .map(|&j| {
                    let row = &importance[j];
                    let weight = row.iter().sum::<f64>() / total;
                    if weight > 0.0 {
                        weight * (1.0 - normalized_entropy(row, n_factors))
                    } else {
                        0.0
                    }
                })
                .sum()
        }
    };
    Ok(DciScore {
        score: score.clamp(0.0, 1.0),
        importance,
    })
}

fn compare_columns(rows: &[Vec<f64>], a: usize, b: usize) -> Ordering {
    rows.iter()
        .map(|r| r[a].total_cmp(&r[b]))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Column-standardized copy; constant columns become zero.
fn standardized(n: usize, cols: usize, value: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, cols, |i, j| value(i, j));
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n as f64).sqrt();
        if sd > 0.0 {
            col /= sd;
        } else {
            col.fill(0.0);
        }
    }
    m
}

/// Entropy of `weights / sum(weights)` in base `base`; 1 for an all-zero row.
fn normalized_entropy(weights: &[f64], base: usize) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || base < 2 {
        return if base < 2 { 0.0 } else { 1.0 };
    }
    let h: f64 = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum();
    h / (base as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    fn mix(rows: &[Vec<f64>], m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                m.iter()
                    .map(|w| w.iter().zip(r).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn block_diagonal_truth_scores_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let factors = gaussian_rows(5_000, 4, &mut rng);
        let latents: Vec<Vec<f64>> = factors
            .iter()
            .map(|f| {
                vec![
                    2.0 * f[2] + 0.05 * rng.sample::<f64, _>(StandardNormal),
                    -f[0],
                    0.5 * f[3],
                    f[1] + 0.05 * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        let dci = dci_disentanglement(&latents, &factors).unwrap();
        assert!(dci.score >= 0.95, "{}", dci.score);
    }

    #[test]
    fn equal_mixing_scores_low() {
        let h = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        let rot: Vec<Vec<f64>> = h.iter().map(|r| r.iter().map(|v| v / 2.0).collect()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let factors = gaussian_rows(5_000, 4, &mut rng);
        let latents = mix(&factors, &rot);
        let dci = dci_disentanglement(&latents, &factors).unwrap();
        assert!(dci.score <= 0.2, "{}", dci.score);
    }

    #[test]
    fn single_factor_is_one_minus_latent_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = gaussian_rows(4_000, 1, &mut rng);
        let noise = gaussian_rows(4_000, 3, &mut rng);
        let latents: Vec<Vec<f64>> = f
            .iter()
            .zip(&noise)
            .map(|(f, e)| vec![f[0] + e[0], f[0] + e[1], e[2]])
            .collect();
        let dci = dci_disentanglement(&latents, &f).unwrap();
        let col: Vec<f64> = dci.importance.iter().map(|r| r[0]).collect();
        let total: f64 = col.iter().sum();
        let h: f64 = col
            .iter()
            .map(|w| w / total)
            .filter(|p| *p > 0.0)
            .map(|p| -p * p.log(3.0))
            .sum();
        assert!((dci.score - (1.0 - h)).abs() < 1e-12);
        assert!(dci.score > 0.0 && dci.score < 0.5);
    }

    #[test]
    fn collinear_latents_use_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let factors = gaussian_rows(1_000, 2, &mut rng);
        let latents: Vec<Vec<f64>> = factors.iter().map(|f| vec![f[0], f[0], f[1]]).collect();
        let dci = dci_disentanglement(&latents, &factors).unwrap();
        assert!(dci.score.is_finite());
        assert!((dci.importance[0][0] - dci.importance[1][0]).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(dci_disentanglement(&[vec![1.0]], &[vec![1.0]]).is_err());
        let l = vec![vec![1.0, 2.0]; 3];
        assert!(dci_disentanglement(&l, &vec![vec![1.0]; 2]).is_err());
        assert!(dci_disentanglement(&l, &vec![vec![f64::NAN]; 3]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..100, perm in Just(vec![0usize, 1, 2, 3, 4]).prop_shuffle()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let factors = gaussian_rows(300, 3, &mut rng);
            let m = gaussian_rows(5, 3, &mut rng);
            let latents = mix(&factors, &m);
            let permuted: Vec<Vec<f64>> = latents.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
            let a = dci_disentanglement(&latents, &factors).unwrap();
            let b = dci_disentanglement(&permuted, &factors).unwrap();
            prop_assert_eq!(a.score, b.score);
            for (pos, &j) in perm.iter().enumerate() {
                prop_assert_eq!(&a.importance[j], &b.importance[pos]);
            }
        }
    }
}
