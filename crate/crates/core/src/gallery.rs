//! Replacement-identity gallery and the manifold-aware rejection sampler.
//!
//! A candidate `z'` is drawn uniformly from the gallery codes and accepted
//! when it is distinct from the original code (`sim(z, z') < tau`) and lies
//! close to the gallery support (mean distance to its `k_nn` nearest gallery
//! codes at most `delta`). Only the accept/reject decisions depend on the
//! original code; it is never stored in the outcome.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclidean_distance, UnitVector};
use crate::io::{read_matrix, write_matrix};
use crate::stats;

pub const DEFAULT_K_NN: usize = 5;
pub const DEFAULT_MAX_ATTEMPTS: usize = 64;
pub const DEFAULT_DELTA_PERCENTILE: f64 = 0.99;

/// Empirical replacement-identity distribution with identity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    codes: Vec<UnitVector>,
    labels: Vec<usize>,
    disjoint_from_evaluation: bool,
}

impl Gallery {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.codes[0].dim()
    }

    pub fn codes(&self) -> &[UnitVector] {
        &self.codes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_disjoint_from_evaluation(&self) -> bool {
        self.disjoint_from_evaluation
    }

    /// Records that the gallery identities do not overlap any evaluation set.
    pub fn mark_disjoint(mut self) -> Self {
        self.disjoint_from_evaluation = true;
        self
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = self.codes.iter().map(|c| c.as_slice().to_vec()).collect();
        write_matrix(out, &rows, Some(&self.labels))
    }

    /// Reads a gallery; unlabeled files get labels `0..N`.
    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let parsed = read_matrix(input)?;
        let labels = parsed
            .labels
            .unwrap_or_else(|| (0..parsed.rows.len()).collect());
        build_gallery(parsed.rows, labels)
    }
}

/// Normalizes `codes` and pairs them with `labels`. Duplicates are allowed.
pub fn build_gallery(codes: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Gallery> {
    if codes.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if labels.len() != codes.len() {
        return Err(Error::DimensionMismatch {
            expected: codes.len(),
            got: labels.len(),
        });
    }
    let dim = codes[0].len();
    let codes = codes
        .into_iter()
        .map(|c| {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
            UnitVector::new(c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Gallery {
        codes,
        labels,
        disjoint_from_evaluation: false,
    })
}

/// Distinctness threshold two sample standard deviations below the impostor
/// mean.
pub fn calibrate_tau(impostor_sims: &[f64]) -> Result<f64> {
    if impostor_sims.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: impostor_sims.len(),
        });
    }
    Ok(stats::mean(impostor_sims) - 2.0 * stats::sample_sd(impostor_sims))
}

/// Mean Euclidean distance from `z` to its `k_nn` nearest gallery codes.
pub fn manifold_distance(z: &UnitVector, gallery: &Gallery, k_nn: usize) -> Result<f64> {
    if k_nn == 0 || k_nn > gallery.len() {
        return Err(Error::Domain(format!(
            "k_nn = {k_nn} must lie in [1, {}]",
            gallery.len()
        )));
    }
    if z.dim() != gallery.dim() {
        return Err(Error::DimensionMismatch {
            expected: gallery.dim(),
            got: z.dim(),
        });
    }
    let mut dists: Vec<f64> = gallery
        .codes
        .iter()
        .map(|c| euclidean_distance(z.as_slice(), c.as_slice()))
        .collect();
    Ok(mean_of_smallest(&mut dists, k_nn))
}

fn mean_of_smallest(dists: &mut [f64], k: usize) -> f64 {
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let mut smallest = dists[..k].to_vec();
    // Summation order fixed by sorting so results do not depend on selection.
    smallest.sort_by(f64::total_cmp);
    smallest.iter().sum::<f64>() / k as f64
}

/// The `percentile` quantile of gallery-internal manifold distances.
pub fn calibrate_delta(gallery: &Gallery, k_nn: usize, percentile: f64) -> Result<f64> {
    let internal = internal_distances(gallery, k_nn)?;
    stats::quantile(&internal, percentile)
}

fn internal_distances(gallery: &Gallery, k_nn: usize) -> Result<Vec<f64>> {
    gallery
        .codes
        .iter()
        .map(|c| manifold_distance(c, gallery, k_nn))
        .collect()
}

/// Thresholds of the rejection sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub tau: f64,
    pub delta: f64,
    pub k_nn: usize,
    pub max_attempts: usize,
}

impl SamplerConfig {
    pub fn new(tau: f64, delta: f64) -> Self {
        Self {
            tau,
            delta,
            k_nn: DEFAULT_K_NN,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    /// Uses the default `k_nn` and sets `delta` to the 99th percentile of the
    /// gallery's own manifold distances.
    pub fn calibrated(gallery: &Gallery, tau: f64) -> Result<Self> {
        let k_nn = DEFAULT_K_NN.min(gallery.len());
        let delta = calibrate_delta(gallery, k_nn, DEFAULT_DELTA_PERCENTILE)?;
        Ok(Self {
            tau,
            delta,
            k_nn,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        })
    }

    fn validate(&self, gallery: &Gallery) -> Result<()> {
        if !(self.tau > -1.0 && self.tau < 1.0) {
            return Err(Error::Domain(format!("tau {} outside (-1, 1)", self.tau)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Domain(format!("delta {} must be positive", self.delta)));
        }
        if self.max_attempts == 0 {
            return Err(Error::Domain("max_attempts must be >= 1".into()));
        }
        if self.k_nn == 0 || self.k_nn > gallery.len() {
            return Err(Error::Domain(format!(
                "k_nn = {} must lie in [1, {}]",
                self.k_nn,
                gallery.len()
            )));
        }
        Ok(())
    }
}

/// An accepted replacement identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub replacement: UnitVector,
    pub gallery_index: usize,
    pub attempts: usize,
    pub accepted_sim: f64,
}

/// Rejection sampler with the manifold distance of every gallery code
/// precomputed. Candidates are gallery codes, so adherence is a fixed
/// property of each index.
#[derive(Debug, Clone)]
pub struct RejectionSampler<'g> {
    gallery: &'g Gallery,
    cfg: SamplerConfig,
    adherence: Vec<f64>,
}

impl<'g> RejectionSampler<'g> {
    pub fn new(gallery: &'g Gallery, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate(gallery)?;
        let adherence = internal_distances(gallery, cfg.k_nn)?;
        Ok(Self {
            gallery,
            cfg,
            adherence,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn gallery(&self) -> &Gallery {
        self.gallery
    }

    /// Manifold distance of gallery code `index`.
    pub fn adherence(&self, index: usize) -> f64 {
        self.adherence[index]
    }

    fn accepts(&self, z_id: &UnitVector, index: usize) -> (bool, f64) {
        let sim = z_id.dot(&self.gallery.codes[index]);
        (sim < self.cfg.tau && self.adherence[index] <= self.cfg.delta, sim)
    }

    pub fn sample<R: Rng + ?Sized>(&self, z_id: &UnitVector, rng: &mut R) -> Result<SampleOutcome> {
        check_dim(z_id, self.gallery)?;
        for attempt in 1..=self.cfg.max_attempts {
            let index = rng.random_range(0..self.gallery.len());
            let (ok, sim) = self.accepts(z_id, index);
            if ok {
                return Ok(SampleOutcome {
                    replacement: self.gallery.codes[index].clone(),
                    gallery_index: index,
                    attempts: attempt,
                    accepted_sim: sim,
                });
            }
        }
        Err(Error::SamplingExhausted {
            attempts: self.cfg.max_attempts,
        })
    }

    /// Exact acceptance probability under the empirical gallery measure.
    pub fn acceptance_mass(&self, z_id: &UnitVector) -> Result<f64> {
        check_dim(z_id, self.gallery)?;
        let hits = (0..self.gallery.len())
            .filter(|&i| self.accepts(z_id, i).0)
            .count();
        Ok(hits as f64 / self.gallery.len() as f64)
    }

    /// Monte Carlo estimate of the acceptance probability and its binomial
    /// standard error.
    pub fn acceptance_mass_mc<R: Rng + ?Sized>(
        &self,
        z_id: &UnitVector,
        draws: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        check_dim(z_id, self.gallery)?;
        if draws == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let hits = (0..draws)
            .filter(|_| {
                let index = rng.random_range(0..self.gallery.len());
                self.accepts(z_id, index).0
            })
            .count();
        let p = hits as f64 / draws as f64;
        Ok((p, stats::binomial_se(p, draws)))
    }
}

fn check_dim(z: &UnitVector, gallery: &Gallery) -> Result<()> {
    if z.dim() != gallery.dim() {
        return Err(Error::DimensionMismatch {
            expected: gallery.dim(),
            got: z.dim(),
        });
    }
    Ok(())
}

/// Draws one replacement for `z_id`, computing manifold distances only for
/// the candidates actually drawn.
pub fn reject_sample<R: Rng + ?Sized>(
    z_id: &UnitVector,
    gallery: &Gallery,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampleOutcome> {
    cfg.validate(gallery)?;
    check_dim(z_id, gallery)?;
    for attempt in 1..=cfg.max_attempts {
        let index = rng.random_range(0..gallery.len());
        let candidate = &gallery.codes[index];
        let sim = z_id.dot(candidate);
        if sim < cfg.tau && manifold_distance(candidate, gallery, cfg.k_nn)? <= cfg.delta {
            return Ok(SampleOutcome {
                replacement: candidate.clone(),
                gallery_index: index,
                attempts: attempt,
                accepted_sim: sim,
            });
        }
    }
    Err(Error::SamplingExhausted {
        attempts: cfg.max_attempts,
    })
}

/// Upper bound `1 / (p_min * vol)` on the expected number of draws.
pub fn expected_steps_bound(p_min: f64, acceptance_volume: f64) -> Result<f64> {
    if !(p_min > 0.0 && acceptance_volume > 0.0) {
        return Err(Error::Domain(format!(
            "p_min ({p_min}) and acceptance volume ({acceptance_volume}) must be positive"
        )));
    }
    let mass = p_min * acceptance_volume;
    if mass > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("acceptance mass {mass} exceeds 1")));
    }
    Ok(1.0 / mass)
}

/// Distribution of attempts over repeated sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptSummary {
    pub trials: usize,
    pub mean: f64,
    pub std_error: f64,
    pub max: usize,
    /// attempts -> number of trials
    pub histogram: BTreeMap<usize, usize>,
}

pub fn empirical_attempts<R: Rng + ?Sized>(
    z_id: &UnitVector,
    sampler: &RejectionSampler<'_>,
    trials: usize,
    rng: &mut R,
) -> Result<AttemptSummary> {
    if trials == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut counts = Vec::with_capacity(trials);
    let mut histogram = BTreeMap::new();
    for _ in 0..trials {
        let outcome = sampler.sample(z_id, rng)?;
        counts.push(outcome.attempts as f64);
        *histogram.entry(outcome.attempts).or_insert(0) += 1;
    }
    let std_error = if trials > 1 { stats::std_error(&counts) } else { 0.0 };
    Ok(AttemptSummary {
        trials,
        mean: stats::mean(&counts),
        std_error,
        max: counts.iter().cloned().fold(0.0, f64::max) as usize,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_unit_vector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gallery(n: usize, d: usize, seed: u64) -> Gallery {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = (0..n)
            .map(|_| sample_unit_vector(d, &mut rng).unwrap().into_inner())
            .collect();
        build_gallery(codes, (0..n).collect()).unwrap()
    }

    fn basis3() -> Gallery {
        build_gallery(
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            vec![0, 1, 2],
        )
        .unwrap()
    }

    #[test]
    fn build_validates_input() {
        assert_eq!(basis3().len(), 3);
        assert!(build_gallery(vec![], vec![]).is_err());
        assert!(build_gallery(vec![vec![1.0, 0.0], vec![1.0]], vec![0, 1]).is_err());
        assert!(build_gallery(vec![vec![1.0, 0.0]], vec![]).is_err());
        let g = build_gallery(vec![vec![3.0, 4.0], vec![3.0, 4.0]], vec![0, 0]).unwrap();
        assert_eq!(g.codes()[0].as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn random_gallery_is_nearly_orthogonal() {
        let g = random_gallery(1000, 512, 4);
        let mut sims = Vec::new();
        for i in 0..g.len() {
            for j in (i + 1)..g.len() {
                sims.push(g.codes()[i].dot(&g.codes()[j]).abs());
            }
        }
        let p95 = stats::quantile(&sims, 0.95).unwrap();
        assert!(p95 < 0.09, "95th percentile |sim| = {p95}");
    }

    #[test]
    fn tau_calibration() {
        assert!((calibrate_tau(&[0.25; 5]).unwrap() - 0.25).abs() < 1e-15);
        assert!(calibrate_tau(&[0.1, 0.2, 0.3]).unwrap().abs() < 1e-15);
        assert!(calibrate_tau(&[0.1]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = sample_unit_vector(512, &mut rng).unwrap();
        let sims: Vec<f64> = (0..100_000)
            .map(|_| u.dot(&sample_unit_vector(512, &mut rng).unwrap()))
            .collect();
        let tau = calibrate_tau(&sims).unwrap();
        // mean 0, sd 1/sqrt(512): tau = -2/sqrt(512) = -0.0884.
        assert!((tau + 0.0884).abs() < 0.002, "tau = {tau}");
    }

    #[test]
    fn manifold_distance_examples() {
        let g = basis3();
        let e1 = g.codes()[0].clone();
        assert_eq!(manifold_distance(&e1, &g, 1).unwrap(), 0.0);
        let d2 = manifold_distance(&e1, &g, 2).unwrap();
        assert!((d2 - std::f64::consts::SQRT_2 / 2.0).abs() < 1e-15);
        assert!(manifold_distance(&e1, &g, 4).is_err());

        let big = random_gallery(1000, 512, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = sample_unit_vector(512, &mut rng).unwrap();
        let d = manifold_distance(&z, &big, 5).unwrap();
        // Nearest codes are the most similar ones, so the distance sits a few
        // percent under sqrt(2): compare against the top-5 order statistics
        // of 1000 cosines drawn as N(0, 1/512).
        let mut orng = ChaCha8Rng::seed_from_u64(70);
        let reps = 2000;
        let mut expected = 0.0;
        for _ in 0..reps {
            let mut c: Vec<f64> = (0..1000)
                .map(|_| orng.sample::<f64, _>(rand_distr::StandardNormal) / 512f64.sqrt())
                .collect();
            c.sort_by(|a, b| b.total_cmp(a));
            expected += c[..5].iter().map(|x| (2.0 - 2.0 * x).sqrt()).sum::<f64>() / 5.0;
        }
        expected /= reps as f64;
        assert!((d - expected).abs() < 0.01 * expected, "d = {d}, expected {expected}");
        assert!(d < std::f64::consts::SQRT_2);
    }

    #[test]
    fn operating_point_accepts_on_first_draw() {
        let g = random_gallery(1000, 512, 8);
        let cfg = SamplerConfig::new(0.3, 2.0);
        let sampler = RejectionSampler::new(&g, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = sample_unit_vector(512, &mut rng).unwrap();
        let first = (0..10_000)
            .filter(|_| sampler.sample(&z, &mut rng).unwrap().attempts == 1)
            .count();
        assert!(first as f64 / 10_000.0 >= 0.98);
    }

    #[test]
    fn sole_candidate_equal_to_original_exhausts() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = sample_unit_vector(16, &mut rng).unwrap();
        let g = build_gallery(vec![z.as_slice().to_vec()], vec![0]).unwrap();
        let mut cfg = SamplerConfig::new(0.3, 2.0);
        cfg.k_nn = 1;
        assert!(matches!(
            reject_sample(&z, &g, &cfg, &mut rng),
            Err(Error::SamplingExhausted { attempts: 64 })
        ));
    }

    #[test]
    fn near_impossible_tau_exhausts() {
        let g = random_gallery(200, 64, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = sample_unit_vector(64, &mut rng).unwrap();
        let cfg = SamplerConfig::new(-0.999, 2.0);
        assert!(matches!(
            reject_sample(&z, &g, &cfg, &mut rng),
            Err(Error::SamplingExhausted { .. })
        ));
    }

    #[test]
    fn free_function_and_cached_sampler_agree() {
        let g = random_gallery(100, 8, 13);
        let cfg = SamplerConfig::calibrated(&g, 0.2).unwrap();
        let sampler = RejectionSampler::new(&g, cfg).unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(14);
        let mut rng_b = ChaCha8Rng::seed_from_u64(14);
        let z = sample_unit_vector(8, &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
        for _ in 0..200 {
            let a = reject_sample(&z, &g, &cfg, &mut rng_a).unwrap();
            let b = sampler.sample(&z, &mut rng_b).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn every_outcome_meets_both_conditions() {
        let g = random_gallery(300, 6, 16);
        let cfg = SamplerConfig::calibrated(&g, 0.1).unwrap();
        let sampler = RejectionSampler::new(&g, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let z = sample_unit_vector(6, &mut rng).unwrap();
            let out = sampler.sample(&z, &mut rng).unwrap();
            assert!(out.accepted_sim < cfg.tau);
            assert!((z.dot(&out.replacement) - out.accepted_sim).abs() < 1e-15);
            assert!(manifold_distance(&out.replacement, &g, cfg.k_nn).unwrap() <= cfg.delta);
            assert!(out.attempts <= cfg.max_attempts);
        }
    }

    #[test]
    fn steps_bound() {
        assert_eq!(expected_steps_bound(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(expected_steps_bound(0.5, 1.0).unwrap(), 2.0);
        assert!(expected_steps_bound(0.0, 1.0).is_err());
        assert!(expected_steps_bound(1.0, -1.0).is_err());
    }

    #[test]
    fn attempts_follow_geometric_law() {
        // Small d so that tau can place acceptance near 1/2.
        let g = random_gallery(2000, 4, 18);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let z = sample_unit_vector(4, &mut rng).unwrap();
        let cfg = SamplerConfig {
            tau: 0.0,
            delta: 10.0,
            k_nn: 5,
            max_attempts: 64,
        };
        let sampler = RejectionSampler::new(&g, cfg).unwrap();
        let p = sampler.acceptance_mass(&z).unwrap();
        assert!((p - 0.5).abs() < 0.05);
        let summary = empirical_attempts(&z, &sampler, 10_000, &mut rng).unwrap();
        let expected = 1.0 / p;
        assert!((summary.mean - 2.0).abs() < 0.1);
        assert!((summary.mean - expected).abs() < 3.0 * summary.std_error);
        assert_eq!(summary.histogram.values().sum::<usize>(), 10_000);

        let single = empirical_attempts(&z, &sampler, 1, &mut rng).unwrap();
        assert_eq!(single.histogram.len(), 1);
    }

    #[test]
    fn operating_point_attempt_summary() {
        let g = random_gallery(1000, 512, 20);
        let sampler = RejectionSampler::new(&g, SamplerConfig::new(0.3, 2.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z = sample_unit_vector(512, &mut rng).unwrap();
        let summary = empirical_attempts(&z, &sampler, 10_000, &mut rng).unwrap();
        assert!(summary.mean < 1.01);
        assert!(summary.max <= 3);
        let (p, _) = sampler.acceptance_mass_mc(&z, 10_000, &mut rng).unwrap();
        let bound = expected_steps_bound(p, 1.0).unwrap();
        assert!((bound - 1.0).abs() < 0.02);
    }

    #[test]
    fn accepted_identity_is_independent_of_original() {
        let g = random_gallery(40, 64, 22);
        let cfg = SamplerConfig {
            tau: 0.6,
            delta: 10.0,
            k_nn: 1,
            max_attempts: 64,
        };
        let sampler = RejectionSampler::new(&g, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let za = sample_unit_vector(64, &mut rng).unwrap();
        let zb = sample_unit_vector(64, &mut rng).unwrap();
        assert_eq!(sampler.acceptance_mass(&za).unwrap(), 1.0);
        assert_eq!(sampler.acceptance_mass(&zb).unwrap(), 1.0);
        let mut ca = vec![0u64; g.len()];
        let mut cb = vec![0u64; g.len()];
        for _ in 0..20_000 {
            ca[sampler.sample(&za, &mut rng).unwrap().gallery_index] += 1;
            cb[sampler.sample(&zb, &mut rng).unwrap().gallery_index] += 1;
        }
        let p = stats::chi_square_homogeneity(&ca, &cb).unwrap();
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn io_round_trip() {
        let g = random_gallery(10, 5, 24);
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let back = Gallery::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.labels(), g.labels());
        for (a, b) in back.codes().iter().zip(g.codes()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn tau_calibration_is_translation_equivariant(
            sims in proptest::collection::vec(-1.0f64..1.0, 2..50),
            shift in -0.5f64..0.5,
        ) {
            let shifted: Vec<f64> = sims.iter().map(|s| s + shift).collect();
            let a = calibrate_tau(&sims).unwrap();
            let b = calibrate_tau(&shifted).unwrap();
            prop_assert!((b - a - shift).abs() < 1e-9);
        }

        #[test]
        fn manifold_distance_ignores_gallery_order(seed in 0u64..100, k in 1usize..6) {
            let g = random_gallery(12, 4, seed);
            let mut rows: Vec<Vec<f64>> = g.codes().iter().map(|c| c.as_slice().to_vec()).collect();
            rows.reverse();
            let rev = build_gallery(rows, (0..12).collect()).unwrap();
            let z = sample_unit_vector(4, &mut ChaCha8Rng::seed_from_u64(seed + 1000)).unwrap();
            let a = manifold_distance(&z, &g, k).unwrap();
            let b = manifold_distance(&z, &rev, k).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
