//! Simulated attackers of increasing strength against anonymized images:
//! black-box verification with each oracle, a linear identity probe on
//! attribute codes, and an adaptive linear map from anonymized to raw
//! embeddings.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::anonymize;
use crate::error::{Error, Result};
use crate::gallery::RejectionSampler;
use crate::geometry::cosine_sim;
use crate::linalg::gaussian_vector;
use crate::objectives::LinearEncoder;
use crate::stats::{cluster_se, mean, quantile};
use crate::world::{Oracle, WorldModel};

pub const DEFAULT_FAR: f64 = 0.01;
pub const MIN_PAIRS: usize = 100;
/// Tail samples required above the decision threshold for a stable quantile.
pub const MIN_TAIL_SAMPLES: f64 = 10.0;
pub const DEFAULT_PROBE_RIDGE: f64 = 1e-3;
pub const ADAPTIVE_RIDGE: f64 = 1e-6;

/// `(1 - far)` quantile of each oracle's impostor similarities.
pub fn decision_thresholds(impostor_sims: &[Vec<f64>], far: f64) -> Result<Vec<f64>> {
    if !(far > 0.0 && far < 1.0) {
        return Err(Error::Domain(format!("far_target must lie in (0, 1), got {far}")));
    }
    impostor_sims
        .iter()
        .map(|sims| {
            let needed = (MIN_TAIL_SAMPLES / far).ceil() as usize;
            if sims.len() < needed {
                return Err(Error::InsufficientData {
                    needed,
                    got: sims.len(),
                });
            }
            quantile(sims, 1.0 - far)
        })
        .collect()
}

/// Per-oracle rates of pairs whose similarity exceeds the decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarResult {
    pub rates: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub n_pairs: usize,
    /// False accept rate the thresholds were calibrated to.
    pub far: f64,
    /// Impostor similarities behind each threshold.
    pub n_impostors: Vec<usize>,
    /// Per-oracle standard errors; see [`dar_from_hits`].
    pub se: Vec<f64>,
    /// Standard error of the ensemble mean rate.
    pub mean_se: f64,
}

impl DarResult {
    pub fn mean(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len() as f64
    }
}

/// Rates from per-oracle hit indicators. Each standard error adds the
/// cluster-robust sampling variance over the pairs (pairs sharing an
/// identity are correlated) to the variance the threshold inherits from
/// estimating a `1 - far` quantile from `n_impostors` samples,
/// `far (1 - far) / n_impostors`.
fn dar_from_hits(
    hits: &[Vec<f64>],
    thresholds: Vec<f64>,
    clusters: &[usize],
    far: f64,
    n_impostors: Vec<usize>,
) -> Result<DarResult> {
    let quantile_var = |n: usize| far * (1.0 - far) / n as f64;
    let rates: Vec<f64> = hits.iter().map(|h| mean(h)).collect();
    let se = hits
        .iter()
        .zip(&n_impostors)
        .map(|(h, &n)| Ok((cluster_se(h, clusters)?.powi(2) + quantile_var(n)).sqrt()))
        .collect::<Result<Vec<_>>>()?;
    let k = hits.len() as f64;
    let pooled: Vec<f64> = (0..clusters.len())
        .map(|i| hits.iter().map(|h| h[i]).sum::<f64>() / k)
        .collect();
    let threshold_var = n_impostors.iter().map(|&n| quantile_var(n)).sum::<f64>() / (k * k);
    let mean_se = (cluster_se(&pooled, clusters)?.powi(2) + threshold_var).sqrt();
    Ok(DarResult {
        rates,
        thresholds,
        n_pairs: clusters.len(),
        far,
        n_impostors,
        se,
        mean_se,
    })
}

fn check_pairs(raw: &[DVector<f64>], safe: &[DVector<f64>]) -> Result<()> {
    if raw.len() != safe.len() {
        return Err(Error::DimensionMismatch {
            expected: raw.len(),
            got: safe.len(),
        });
    }
    if raw.len() < MIN_PAIRS {
        return Err(Error::InsufficientData {
            needed: MIN_PAIRS,
            got: raw.len(),
        });
    }
    Ok(())
}

/// Black-box verification: each oracle accepts a (raw, safe) pair when its
/// similarity exceeds the threshold calibrated on that oracle's impostors.
/// `clusters` labels the identity behind each pair.
pub fn tier1_dar(
    oracles: &[Oracle],
    raw: &[DVector<f64>],
    safe: &[DVector<f64>],
    clusters: &[usize],
    impostor_sims: &[Vec<f64>],
    far: f64,
) -> Result<DarResult> {
    if oracles.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if impostor_sims.len() != oracles.len() {
        return Err(Error::DimensionMismatch {
            expected: oracles.len(),
            got: impostor_sims.len(),
        });
    }
    check_pairs(raw, safe)?;
    check_clusters(raw, clusters)?;
    let thresholds = decision_thresholds(impostor_sims, far)?;
    let hits = oracles
        .iter()
        .zip(&thresholds)
        .map(|(o, &theta)| {
            raw.iter()
                .zip(safe)
                .map(|(r, s)| Ok(indicator(o.similarity(r, s)? > theta)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n_impostors = impostor_sims.iter().map(Vec::len).collect();
    dar_from_hits(&hits, thresholds, clusters, far, n_impostors)
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn check_clusters<T>(items: &[T], clusters: &[usize]) -> Result<()> {
    if items.len() != clusters.len() {
        return Err(Error::DimensionMismatch {
            expected: items.len(),
            got: clusters.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1: f64,
    pub top5: f64,
    /// Cluster-robust standard errors, clustered by identity.
    pub top1_se: f64,
    pub top5_se: f64,
    pub n_test: usize,
    pub n_classes: usize,
}

/// Splits each label's samples: the first `train_fraction` (at least one,
/// at most all but one) go to training.
fn split_by_label(labels: &[usize], train_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for idx in groups.values() {
        if idx.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: idx.len(),
            });
        }
        let k = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    Ok((train, test))
}

/// Ridge regression with an unpenalized intercept column.
fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let mut design = DMatrix::from_element(x.nrows(), d + 1, 1.0);
    design.columns_mut(0, d).copy_from(x);
    let mut gram = design.transpose() * &design / n;
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let rhs = design.transpose() * y / n;
    let chol = gram
        .clone()
        .cholesky()
        .or_else(|| {
            let mut g = gram;
            g[(d, d)] += ridge;
            g.cholesky()
        })
        .ok_or_else(|| Error::NotPositiveDefinite("probe design is singular after ridge".into()))?;
    Ok(chol.solve(&rhs))
}

/// Plain least squares `min ||X M - Y||`, falling back to a small ridge
/// when `X^T X` is rank deficient.
fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows() as f64;
    let gram = x.transpose() * x / n;
    let rhs = x.transpose() * y / n;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let chol = match gram.clone().cholesky() {
        Some(c) if c.l().diagonal().min() > 1e-7 * scale.sqrt() => c,
        _ => {
            let d = gram.nrows();
            (gram + DMatrix::identity(d, d) * ADAPTIVE_RIDGE)
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("adaptive attacker design".into()))?
        }
    };
    Ok(chol.solve(&rhs))
}

fn with_intercept(x: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::from_element(x.len() + 1, 1.0);
    v.rows_mut(0, x.len()).copy_from(x);
    v
}

/// Linear identity probe trained on attribute codes with one-hot targets;
/// argmax prediction with ties going to the lowest label index.
pub fn tier2_probe(
    attr_codes: &[DVector<f64>],
    identity_labels: &[usize],
    train_fraction: f64,
    ridge: f64,
) -> Result<ProbeResult> {
    if attr_codes.len() != identity_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: attr_codes.len(),
            got: identity_labels.len(),
        });
    }
    if !(ridge > 0.0) || !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain("need ridge > 0 and train_fraction in (0, 1)".into()));
    }
    let mut classes: Vec<usize> = identity_labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let (train, test) = split_by_label(identity_labels, train_fraction)?;
    if classes.len() == 1 {
        return Ok(ProbeResult {
            top1: 1.0,
            top5: 1.0,
            top1_se: 0.0,
            top5_se: 0.0,
            n_test: test.len(),
            n_classes: 1,
        });
    }
    let class_of = |l: usize| classes.binary_search(&l).expect("label from the same list");
    let d = attr_codes[0].len();
    let x = DMatrix::from_fn(train.len(), d, |i, j| attr_codes[train[i]][j]);
    let y = DMatrix::from_fn(train.len(), classes.len(), |i, c| {
        if class_of(identity_labels[train[i]]) == c { 1.0 } else { 0.0 }
    });
    let coef = ridge_fit(&x, &y, ridge)?;
    let (mut hit1, mut hit5) = (Vec::with_capacity(test.len()), Vec::with_capacity(test.len()));
    for &i in &test {
        let scores = coef.transpose() * with_intercept(&attr_codes[i]);
        let truth = class_of(identity_labels[i]);
        // Rank of the true class: number of classes scoring strictly higher,
        // plus lower-indexed classes tying with it.
        let st = scores[truth];
        let rank = (0..classes.len())
            .filter(|&c| scores[c] > st || (scores[c] == st && c < truth))
            .count();
        hit1.push(indicator(rank == 0));
        hit5.push(indicator(rank < 5));
    }
    let clusters: Vec<usize> = test.iter().map(|&i| identity_labels[i]).collect();
    Ok(ProbeResult {
        top1: mean(&hit1),
        top5: mean(&hit5),
        top1_se: cluster_se(&hit1, &clusters)?,
        top5_se: cluster_se(&hit5, &clusters)?,
        n_test: test.len(),
        n_classes: classes.len(),
    })
}

/// Adaptive attacker: per oracle, a least-squares map from anonymized to raw
/// embeddings fitted on auxiliary training pairs, then scored on the
/// evaluation pairs with the Tier-1 thresholds. The least-squares map
/// minimizes squared error rather than threshold exceedances, so the
/// attacker keeps the map fitted on all training pairs only if its
/// two-fold cross-fitted exceedance count beats the identity map's.
/// Thresholds and standard-error bookkeeping come from `tier1`; `clusters`
/// labels the identity behind each evaluation pair.
pub fn tier3_adaptive(
    oracles: &[Oracle],
    train: (&[DVector<f64>], &[DVector<f64>]),
    eval: (&[DVector<f64>], &[DVector<f64>]),
    clusters: &[usize],
    tier1: &DarResult,
) -> Result<DarResult> {
    let thresholds = &tier1.thresholds;
    if oracles.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if thresholds.len() != oracles.len() {
        return Err(Error::DimensionMismatch {
            expected: oracles.len(),
            got: thresholds.len(),
        });
    }
    check_pairs(train.0, train.1)?;
    check_pairs(eval.0, eval.1)?;
    check_clusters(eval.0, clusters)?;
    let mut hits = Vec::with_capacity(oracles.len());
    for (o, &theta) in oracles.iter().zip(thresholds) {
        let d = o.embed_dim();
        let embed = |xs: &[DVector<f64>]| xs.iter().map(|x| o.embed(x)).collect::<Vec<_>>();
        let (tr_raw, tr_safe) = (embed(train.0), embed(train.1));
        let (ev_raw, ev_safe) = (embed(eval.0), embed(eval.1));
        let fit = |raw: &[DVector<f64>], safe: &[DVector<f64>]| -> Result<DMatrix<f64>> {
            let x = DMatrix::from_fn(safe.len(), d, |i, j| safe[i][j]);
            let y = DMatrix::from_fn(raw.len(), d, |i, j| raw[i][j]);
            Ok(least_squares(&x, &y)?.transpose())
        };
        let exceed = |map: &DMatrix<f64>, raw: &[DVector<f64>], safe: &[DVector<f64>]| -> Result<Vec<f64>> {
            raw.iter()
                .zip(safe)
                .map(|(r, s)| Ok(indicator(cosine_sim(r.as_slice(), (map * s).as_slice())? > theta)))
                .collect()
        };
        let count = |h: Vec<f64>| h.iter().sum::<f64>();
        // Two-fold cross-fitting: each half is scored by the map fitted on
        // the other, so every training pair serves once for validation.
        let half = tr_raw.len() / 2;
        let (raw_a, raw_b) = tr_raw.split_at(half);
        let (safe_a, safe_b) = tr_safe.split_at(half);
        let cross = count(exceed(&fit(raw_a, safe_a)?, raw_b, safe_b)?) + count(exceed(&fit(raw_b, safe_b)?, raw_a, safe_a)?);
        let identity = DMatrix::identity(d, d);
        let chosen = if cross > count(exceed(&identity, &tr_raw, &tr_safe)?) {
            fit(&tr_raw, &tr_safe)?
        } else {
            identity
        };
        hits.push(exceed(&chosen, &ev_raw, &ev_safe)?);
    }
    dar_from_hits(&hits, thresholds.clone(), clusters, tier1.far, tier1.n_impostors.clone())
}

/// Population and attacker settings for [`run_threat_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreatSizes {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub impostor_pairs: usize,
    pub train_fraction: f64,
    /// Auxiliary (raw, anonymized) pairs of fresh identities available to
    /// the adaptive attacker.
    pub adaptive_pairs: usize,
    pub far_target: f64,
    pub probe_ridge: f64,
}

impl Default for ThreatSizes {
    fn default() -> Self {
        Self {
            identities: 100,
            samples_per_identity: 50,
            impostor_pairs: 10_000,
            train_fraction: 0.5,
            adaptive_pairs: 5_000,
            far_target: DEFAULT_FAR,
            probe_ridge: DEFAULT_PROBE_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatReport {
    pub tier1: DarResult,
    pub tier2: ProbeResult,
    pub tier3: DarResult,
    pub chance: f64,
    pub far_target: f64,
    pub config_digest: Option<String>,
}

impl ThreatReport {
    pub fn tier1_se(&self) -> f64 {
        self.tier1.mean_se
    }

    pub fn tier3_se(&self) -> f64 {
        self.tier3.mean_se
    }

    pub fn tier2_se(&self) -> f64 {
        self.tier2.top1_se
    }

    /// `(tier, metric, value, se)` records. DAR standard errors are
    /// cluster-robust plus the threshold-quantile term; probe standard
    /// errors are cluster-robust.
    pub fn rows(&self) -> Vec<(String, String, f64, f64)> {
        let mut rows = Vec::new();
        for (tier, dar) in [("tier1", &self.tier1), ("tier3", &self.tier3)] {
            for (j, (r, se)) in dar.rates.iter().zip(&dar.se).enumerate() {
                rows.push((tier.into(), format!("dar_oracle{j}"), *r, *se));
            }
            rows.push((tier.into(), "dar_mean".into(), dar.mean(), dar.mean_se));
            if tier == "tier1" {
                let t2 = &self.tier2;
                rows.push(("tier2".into(), "top1".into(), t2.top1, t2.top1_se));
                rows.push(("tier2".into(), "top5".into(), t2.top5, t2.top5_se));
                rows.push(("tier2".into(), "chance".into(), self.chance, 0.0));
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tier", "metric", "value", "se"])?;
        for (tier, metric, value, se) in self.rows() {
            w.write_record([tier, metric, value.to_string(), se.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A raw image of `z_id` with fresh attributes, its anonymized version and
/// the attribute code used.
fn anonymized_pair<R: Rng + ?Sized>(
    world: &WorldModel,
    z_id: &DVector<f64>,
    encoder: Option<&LinearEncoder>,
    sampler: Option<&RejectionSampler>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let z_attr = world.sample_attr_given_id(z_id, rng);
    let x = world.generate(z_id, &z_attr, rng)?;
    let code = match encoder {
        Some(e) => e.encode_attributes(&x),
        None => z_attr,
    };
    let safe = anonymize(world, z_id, &code, sampler, rng)?;
    Ok((x, safe, code))
}

/// Generates one population of `identities x samples_per_identity` images,
/// anonymizes each with a replacement identity (through `sampler` when
/// given) and the attribute code read by `encoder` (the true code when
/// `None`), and runs all three attackers on it. The adaptive attacker trains
/// on a separate set of pairs with one fresh identity each.
pub fn run_threat_suite<R: Rng + ?Sized>(
    world: &WorldModel,
    oracles: &[Oracle],
    encoder: Option<&LinearEncoder>,
    sampler: Option<&RejectionSampler>,
    sizes: &ThreatSizes,
    rng: &mut R,
) -> Result<ThreatReport> {
    if oracles.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if let Some(e) = encoder {
        if e.input_dim() != world.m() || e.attribute_head().nrows() != world.q() {
            return Err(Error::DimensionMismatch {
                expected: world.q() * world.m(),
                got: e.attribute_head().nrows() * e.input_dim(),
            });
        }
    }
    if sizes.identities == 0 || sizes.samples_per_identity < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: sizes.samples_per_identity,
        });
    }
    let impostors = oracles
        .iter()
        .map(|o| o.impostor_sims(world, sizes.impostor_pairs, rng))
        .collect::<Result<Vec<_>>>()?;

    let total = sizes.identities * sizes.samples_per_identity;
    let mut raw = Vec::with_capacity(total);
    let mut safe = Vec::with_capacity(total);
    let mut codes = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for n in 0..sizes.identities {
        let z_id = gaussian_vector(world.p(), rng);
        for _ in 0..sizes.samples_per_identity {
            let (x, s, code) = anonymized_pair(world, &z_id, encoder, sampler, rng)?;
            safe.push(s);
            raw.push(x);
            codes.push(code);
            labels.push(n);
        }
    }
    let tier1 = tier1_dar(oracles, &raw, &safe, &labels, &impostors, sizes.far_target)?;
    let tier2 = tier2_probe(&codes, &labels, sizes.train_fraction, sizes.probe_ridge)?;
    let mut aux_raw = Vec::with_capacity(sizes.adaptive_pairs);
    let mut aux_safe = Vec::with_capacity(sizes.adaptive_pairs);
    for _ in 0..sizes.adaptive_pairs {
        let (x, s, _) = anonymized_pair(world, &gaussian_vector(world.p(), rng), encoder, sampler, rng)?;
        aux_raw.push(x);
        aux_safe.push(s);
    }
    let tier3 = tier3_adaptive(oracles, (&aux_raw, &aux_safe), (&raw, &safe), &labels, &tier1)?;
    Ok(ThreatReport {
        tier1,
        tier2,
        tier3,
        chance: 1.0 / sizes.identities as f64,
        far_target: sizes.far_target,
        config_digest: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{make_oracle_with, make_world_seeded};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn coupled_world(rho: f64, sigma_g: f64, seed: u64) -> WorldModel {
        make_world_seeded(16, 16, 40, &[rho; 16], sigma_g, seed).unwrap()
    }

    fn ensemble(world: &WorldModel, seed: u64) -> Vec<Oracle> {
        let mut r = rng(seed);
        (0..3).map(|_| make_oracle_with(world, 16, 0, &mut r).unwrap()).collect()
    }

    #[test]
    fn thresholds_need_enough_tail() {
        let sims: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        assert!(decision_thresholds(&[sims.clone()], 0.01).is_err());
        let t = decision_thresholds(&[sims], 0.1).unwrap();
        assert!((t[0] - 0.8982).abs() < 1e-3);
        assert!(decision_thresholds(&[], 1.5).is_err());
    }

    #[test]
    fn unanonymized_pairs_are_always_matched() {
        let w = coupled_world(0.5, 0.05, 1);
        let ens = ensemble(&w, 2);
        let mut r = rng(3);
        let raw: Vec<DVector<f64>> = (0..400).map(|_| w.sample_raw(&mut r)).collect();
        let imp: Vec<Vec<f64>> = ens.iter().map(|o| o.impostor_sims(&w, 2_000, &mut r).unwrap()).collect();
        let ids: Vec<usize> = (0..raw.len()).collect();
        let t1 = tier1_dar(&ens, &raw, &raw, &ids, &imp, 0.01).unwrap();
        assert!(t1.rates.iter().all(|&d| d > 0.99));
        let t3 = tier3_adaptive(&ens, (&raw, &raw), (&raw, &raw), &ids, &t1).unwrap();
        assert!(t3.rates.iter().all(|&d| d > 0.99));
        assert!(tier1_dar(&ens, &raw[..50], &raw[..50], &ids[..50], &imp, 0.01).is_err());
        assert!(tier1_dar(&ens, &raw, &raw, &ids[..10], &imp, 0.01).is_err());
        // Perfect matches leave only the threshold term in the error.
        let floor = (0.01f64 * 0.99 / 2_000.0).sqrt();
        assert!(t1.se.iter().all(|&s| (s - floor).abs() < 1e-12));
    }

    #[test]
    fn probe_edge_cases() {
        let codes: Vec<DVector<f64>> = (0..6).map(|i| DVector::from_element(2, i as f64)).collect();
        let one = tier2_probe(&codes, &[4; 6], 0.5, 1e-3).unwrap();
        assert_eq!((one.top1, one.top5), (1.0, 1.0));
        assert!(tier2_probe(&codes, &[0, 0, 0, 0, 0, 1], 0.5, 1e-3).is_err());
        // Constant codes: every score ties, so the lowest label wins.
        let flat = vec![DVector::from_element(2, 1.0); 6];
        let r = tier2_probe(&flat, &[0, 0, 1, 1, 2, 2], 0.5, 1e-3).unwrap();
        assert!((r.top1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.top5, 1.0);
    }

    #[test]
    fn uncoupled_world_sits_at_floors() {
        let w = coupled_world(0.0, 0.05, 4);
        let ens = ensemble(&w, 5);
        let report = run_threat_suite(&w, &ens, None, None, &ThreatSizes::default(), &mut rng(6)).unwrap();
        for &d in &report.tier1.rates {
            assert!((d - 0.01).abs() <= 3.0 * report.tier1_se(), "tier1 {d}");
        }
        for &d in &report.tier3.rates {
            assert!((d - 0.01).abs() <= 3.0 * report.tier3_se(), "tier3 {d}");
        }
        assert!(report.tier2.top1 <= 0.02, "top1 {}", report.tier2.top1);
        assert!(report.tier2.top5 >= report.tier2.top1);
    }

    #[test]
    fn strong_coupling_is_probed() {
        let w = coupled_world(0.95, 1.0, 7);
        let ens = ensemble(&w, 8);
        let report = run_threat_suite(&w, &ens, None, None, &ThreatSizes::default(), &mut rng(9)).unwrap();
        assert!(report.tier2.top1 >= 0.5, "{}", report.tier2.top1);
        assert!(report.tier1.mean() > 0.02);
        let se = report.tier1_se();
        assert!(report.tier3.mean() + 3.0 * se >= report.tier1.mean());
        assert!(report.tier2_se() > 0.0);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + report.rows().len());
    }

    #[test]
    fn tiers_rise_with_coupling() {
        let mut prev: Option<ThreatReport> = None;
        for rho in [0.0, 0.3, 0.6, 0.9] {
            let w = coupled_world(rho, 1.0, 10);
            let ens = ensemble(&w, 11);
            let r = run_threat_suite(&w, &ens, None, None, &ThreatSizes::default(), &mut rng(12)).unwrap();
            eprintln!("rho {rho}: t1 {:?} t2 {} t3 {:?}", r.tier1.rates, r.tier2.top1, r.tier3.rates);
            if let Some(p) = &prev {
                assert!(r.tier1.mean() >= p.tier1.mean());
                assert!(r.tier2.top1 >= p.tier2.top1);
                assert!(r.tier3.mean() >= p.tier3.mean());
            }
            prev = Some(r);
        }
    }
}
