//! Numeric checks of the privacy, utility and consistency inequalities.
//!
//! Every check produces a [`BoundReport`] comparing an observed left-hand
//! side against the bound on the right. Closed-form comparisons use an
//! absolute tolerance of `1e-9`; Monte Carlo comparisons allow three
//! standard errors.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ksg_mi;
use crate::estimators::DEFAULT_KSG_K;
use crate::gallery::{empirical_attempts, Gallery, RejectionSampler, SamplerConfig};
use crate::geometry::{
    binary_entropy, exact_cos_tail, sample_unit_vector, subgaussian_tail_bound, LogBase, Probability,
};
use crate::linalg::{gaussian_matrix, gaussian_vector, psd_pinv, range_whitener};
use crate::objectives::{util_loss, LinearEncoder, TradeoffParams};
use crate::stats::{binomial_se, mean, std_error};
use crate::world::{closed_form_leakage, epsilon_dis, make_oracle_with, make_world, Oracle, WorldModel};

pub const EXACT_TOL: f64 = 1e-9;
pub const MC_SIGMAS: f64 = 3.0;
pub const KSG_AGREEMENT_NATS: f64 = 0.05;
/// Entropy (bits) of the rejection event claimed for `d = 512, tau = 0.3`.
pub const CLAIMED_REJECTION_ENTROPY_BITS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub n_trials: usize,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
    pub note: String,
    pub sub_reports: Vec<BoundReport>,
}

impl BoundReport {
    /// A report that passes iff `rhs - lhs >= -tolerance`.
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64, n_trials: usize) -> Self {
        let margin = rhs - lhs;
        Self {
            name: name.into(),
            lhs,
            rhs,
            margin,
            tolerance,
            passed: margin >= -tolerance,
            n_trials,
            seed: None,
            config_digest: None,
            note: String::new(),
            sub_reports: Vec::new(),
        }
    }

    /// Aggregates sub-reports: the headline numbers come from the sub-report
    /// with the smallest slack, and the aggregate passes iff all do.
    pub fn aggregate(name: impl Into<String>, subs: Vec<BoundReport>) -> Result<Self> {
        let worst = subs
            .iter()
            .min_by(|a, b| (a.margin + a.tolerance).total_cmp(&(b.margin + b.tolerance)))
            .ok_or_else(|| Error::InsufficientData { needed: 1, got: 0 })?;
        let mut report = BoundReport::new(name, worst.lhs, worst.rhs, worst.tolerance, subs.len());
        report.passed = subs.iter().all(|s| s.passed);
        report.sub_reports = subs;
        Ok(report)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    fn failed(name: impl Into<String>, n_trials: usize, note: impl Into<String>) -> Self {
        let mut r = BoundReport::new(name, f64::NAN, f64::NAN, 0.0, n_trials);
        r.margin = f64::NAN;
        r.passed = false;
        r.note = note.into();
        r
    }
}

/// Writes one row per report, sorted by name, with columns
/// `name, lhs, rhs, margin, passed, n_trials, seed`.
pub fn write_reports_csv<W: Write>(reports: &[BoundReport], out: W) -> Result<()> {
    let mut sorted: Vec<&BoundReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "lhs", "rhs", "margin", "passed", "n_trials", "seed"])?;
    for r in sorted {
        w.write_record([
            r.name.clone(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.margin.to_string(),
            r.passed.to_string(),
            r.n_trials.to_string(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cosine between a fixed unit vector and a uniform point on `S^{d-1}`,
/// drawn as `g / sqrt(g^2 + chi^2_{d-1})`.
fn uniform_cosine<R: Rng + ?Sized>(chi: &ChiSquared<f64>, rng: &mut R) -> f64 {
    let g: f64 = StandardNormal.sample(rng);
    let rest = chi.sample(rng);
    g / (g * g + rest).sqrt()
}

/// Empirical rejection rate `P[sim >= tau]` of a uniform replacement against
/// the sub-Gaussian tail bound.
pub fn verify_lemma1<R: Rng + ?Sized>(d: usize, tau: f64, n_trials: usize, rng: &mut R) -> Result<BoundReport> {
    let bound = subgaussian_tail_bound(d, tau)?.value();
    if n_trials < 1000 {
        return Err(Error::InsufficientData {
            needed: 1000,
            got: n_trials,
        });
    }
    let chi = ChiSquared::new((d - 1) as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let rejections = (0..n_trials).filter(|_| uniform_cosine(&chi, rng) >= tau).count();
    let rate = rejections as f64 / n_trials as f64;
    let exact = exact_cos_tail(d, tau)?.value();
    Ok(
        BoundReport::new("lemma1", rate, bound, MC_SIGMAS * binomial_se(bound, n_trials), n_trials)
            .with_note(format!("{rejections} rejections; exact rejection probability {exact:e}")),
    )
}

/// Mean number of draws of the rejection sampler for a random query against
/// `1 / (acceptance mass)`, the expected count for geometric sampling under
/// the gallery's uniform measure.
pub fn verify_prop1<R: Rng + ?Sized>(
    gallery: &Gallery,
    cfg: &SamplerConfig,
    trials: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    let sampler = RejectionSampler::new(gallery, *cfg)?;
    let z_id = sample_unit_vector(gallery.dim(), rng)?;
    let mass = sampler.acceptance_mass(&z_id)?;
    if mass == 0.0 {
        return Ok(BoundReport::failed("prop1", trials, "exhausted: no gallery code is acceptable"));
    }
    let summary = match empirical_attempts(&z_id, &sampler, trials, rng) {
        Ok(s) => s,
        Err(Error::SamplingExhausted { attempts }) => {
            return Ok(BoundReport::failed(
                "prop1",
                trials,
                format!("exhausted after {attempts} attempts"),
            ))
        }
        Err(e) => return Err(e),
    };
    let bound = 1.0 / mass;
    Ok(BoundReport::new("prop1", summary.mean, bound, MC_SIGMAS * summary.std_error, trials)
        .with_note(format!("acceptance mass {mass}")))
}

/// Projections of `z_id` and of the anonymized output onto their canonical
/// coordinates with nonzero correlation. For jointly Gaussian variables the
/// mutual information is carried entirely by these coordinates.
fn canonical_projections(world: &WorldModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let whitener = range_whitener(&world.safe_cov(), 1e-12);
    let m = world.id_safe_cross_cov() * &whitener;
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-8)
        .collect();
    let id_proj = DMatrix::from_fn(keep.len(), world.p(), |r, c| u[(c, keep[r])]);
    let out_dir = DMatrix::from_fn(keep.len(), vt.ncols(), |r, c| vt[(keep[r], c)]);
    (id_proj, out_dir * whitener.transpose())
}

/// KSG estimate of `I(z_id; G(z', z_attr))` from `n` simulated draws.
pub fn ksg_leakage<R: Rng + ?Sized>(world: &WorldModel, n: usize, rng: &mut R) -> Result<f64> {
    let (id_proj, out_proj) = canonical_projections(world);
    if id_proj.nrows() == 0 {
        return Ok(0.0);
    }
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let pair = world.sample_pair(rng);
        let replacement = gaussian_vector(world.p(), rng);
        let safe = world.generate(&replacement, &pair.z_attr, rng)?;
        xs.push((&id_proj * &pair.z_id).as_slice().to_vec());
        ys.push((&out_proj * safe).as_slice().to_vec());
    }
    Ok(ksg_mi(&xs, &ys, DEFAULT_KSG_K)?.value)
}

/// Exact leakage through the generator against the code-level mutual
/// information, optionally cross-checked by KSG on `n_samples` draws.
pub fn verify_theorem1<R: Rng + ?Sized>(world: &WorldModel, n_samples: usize, rng: &mut R) -> Result<BoundReport> {
    let leak = closed_form_leakage(world)?;
    let eps = epsilon_dis(world);
    let mut report = BoundReport::new("theorem1", leak, eps, EXACT_TOL, 1);
    if n_samples > 0 {
        let est = ksg_leakage(world, n_samples, rng)?;
        let check = BoundReport::new("theorem1_ksg", (est - leak).abs(), KSG_AGREEMENT_NATS, 0.0, n_samples)
            .with_note(format!("ksg {est} vs closed form {leak}"));
        report.passed &= check.passed;
        report.sub_reports.push(check);
    }
    Ok(report)
}

/// A random world for sweeps: `p, q` in `1..=4`, `m` anywhere from below
/// `p + q` to well above it, and canonical correlations in `[0, rho_max]`
/// with the largest equal to `rho_max`.
pub fn random_sweep_world<R: Rng + ?Sized>(rho_max: f64, separable: bool, rng: &mut R) -> Result<WorldModel> {
    let p = rng.random_range(1..=4usize);
    let q = rng.random_range(1..=4usize);
    let m = if separable {
        rng.random_range(p + q..=p + q + 4)
    } else {
        rng.random_range(p.max(q)..=p + q + 4)
    };
    let r = rng.random_range(1..=p.min(q));
    let mut rho: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..=rho_max)).collect();
    rho[0] = rho_max;
    let sigma_g = rng.random_range(0.05..0.5);
    make_world(p, q, m, &rho, sigma_g, rng)
}

/// `n_worlds` random worlds with the correlation cycling through
/// `0, 0.1, ..., 0.9`; the first `n_spot` are also cross-checked by KSG.
pub fn verify_theorem1_sweep<R: Rng + ?Sized>(
    n_worlds: usize,
    n_spot: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    let subs = (0..n_worlds)
        .map(|i| {
            let world = random_sweep_world((i % 10) as f64 / 10.0, false, rng)?;
            let n = if i < n_spot { n_samples } else { 0 };
            verify_theorem1(&world, n, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let ksg_failures = subs
        .iter()
        .flat_map(|s| &s.sub_reports)
        .filter(|s| !s.passed)
        .count();
    let mut report = BoundReport::aggregate("theorem1", subs)?;
    report.note = format!("{ksg_failures} KSG disagreements over {n_spot} spot checks");
    Ok(report)
}

/// Entropy of the rejection event. The exact rejection entropy must not
/// exceed the entropy at the sub-Gaussian bound (capped at one half, where
/// binary entropy peaks); the bound's entropy is compared against the
/// claimed constant in the note.
pub fn verify_remark1(d: usize, tau: f64) -> Result<BoundReport> {
    let bound = subgaussian_tail_bound(d, tau)?.value();
    let exact = exact_cos_tail(d, tau)?.value();
    let h_bound = binary_entropy(Probability::new(bound)?, LogBase::Two);
    let h_exact = binary_entropy(Probability::new(exact)?, LogBase::Two);
    let h_cap = binary_entropy(Probability::new(bound.min(0.5))?, LogBase::Two);
    let flag = if h_bound > CLAIMED_REJECTION_ENTROPY_BITS {
        "exceeds"
    } else {
        "within"
    };
    Ok(BoundReport::new("remark1", h_exact, h_cap, 1e-15, 1).with_note(format!(
        "entropy at bound {h_bound:e} bits {flag} the claimed {CLAIMED_REJECTION_ENTROPY_BITS:e} bits"
    )))
}

fn pinv_encoder(world: &WorldModel) -> Result<LinearEncoder> {
    let g = world.generator_matrix();
    let pinv = psd_pinv(&(g.transpose() * &g), 1e-12) * g.transpose();
    LinearEncoder::from_stacked(&pinv, world.p())
}

struct UtilityTrials {
    lhs: f64,
    kappa: f64,
    kappa_rec: f64,
    triangle_failures: usize,
}

/// Per trial: raw image, its reconstruction from the encoded codes, and the
/// anonymized image with the identity code swapped.
fn utility_trials<R: Rng + ?Sized>(
    world: &WorldModel,
    encoder: &LinearEncoder,
    n_trials: usize,
    rng: &mut R,
) -> Result<UtilityTrials> {
    let mut out = UtilityTrials {
        lhs: 0.0,
        kappa: 0.0,
        kappa_rec: 0.0,
        triangle_failures: 0,
    };
    for _ in 0..n_trials {
        let x = world.sample_raw(rng);
        let id_code = encoder.encode_identity(&x);
        let attr_code = encoder.encode_attributes(&x);
        let recon = world.generate(&id_code, &attr_code, rng)?;
        let safe = world.generate(&gaussian_vector(world.p(), rng), &attr_code, rng)?;
        let d_safe = util_loss(&x, &safe, world)?;
        let d_rec = util_loss(&x, &recon, world)?;
        let d_swap = util_loss(&recon, &safe, world)?;
        if d_safe > d_rec + d_swap + EXACT_TOL {
            out.triangle_failures += 1;
        }
        out.lhs = out.lhs.max(d_safe);
        out.kappa = out.kappa.max(d_swap);
        out.kappa_rec = out.kappa_rec.max(d_rec);
    }
    Ok(out)
}

/// Worst attribute-space distortion of anonymization against the identity
/// swap distortion plus the worst reconstruction distortion. Without an
/// encoder the generator's pseudo-inverse is used.
pub fn verify_theorem2<R: Rng + ?Sized>(
    world: &WorldModel,
    encoder: Option<&LinearEncoder>,
    n_trials: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    if n_trials == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let owned;
    let encoder = match encoder {
        Some(e) => e,
        None => {
            owned = pinv_encoder(world)?;
            &owned
        }
    };
    let t = utility_trials(world, encoder, n_trials, rng)?;
    let mut report = BoundReport::new("theorem2", t.lhs, t.kappa + t.kappa_rec, EXACT_TOL, n_trials).with_note(
        format!("kappa {} kappa_rec {} triangle failures {}", t.kappa, t.kappa_rec, t.triangle_failures),
    );
    report.passed &= t.triangle_failures == 0;
    Ok(report)
}

/// Leakage plus distortion weighted by `1 / lambda` against the matching
/// combination of the two bounds above.
pub fn verify_theorem3<R: Rng + ?Sized>(
    world: &WorldModel,
    encoder: Option<&LinearEncoder>,
    params: &TradeoffParams,
    n_trials: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    if !(params.lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be > 0, got {}", params.lambda)));
    }
    let t1 = verify_theorem1(world, 0, rng)?;
    let t2 = verify_theorem2(world, encoder, n_trials, rng)?;
    let w = 1.0 / params.lambda;
    let mut report = BoundReport::new("theorem3", t1.lhs + w * t2.lhs, t1.rhs + w * t2.rhs, EXACT_TOL, n_trials);
    report.passed &= t1.passed && t2.passed;
    report.sub_reports = vec![t1, t2];
    Ok(report)
}

/// Per oracle: mean similarity of (raw, anonymized) pairs against the
/// impostor mean plus `L_f sqrt(2 eps)`.
pub fn verify_prop2<R: Rng + ?Sized>(
    world: &WorldModel,
    oracles: &[Oracle],
    n_trials: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    if oracles.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if n_trials < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n_trials });
    }
    let slack = (2.0 * epsilon_dis(world)).sqrt();
    let mut genuine = vec![Vec::with_capacity(n_trials); oracles.len()];
    for _ in 0..n_trials {
        let pair = world.sample_pair(rng);
        let x = world.generate(&pair.z_id, &pair.z_attr, rng)?;
        let safe = world.generate(&gaussian_vector(world.p(), rng), &pair.z_attr, rng)?;
        for (sims, o) in genuine.iter_mut().zip(oracles) {
            sims.push(o.similarity(&x, &safe)?);
        }
    }
    let subs = oracles
        .iter()
        .zip(&genuine)
        .enumerate()
        .map(|(j, (o, sims))| {
            let impostors = o.impostor_sims(world, n_trials, rng)?;
            let se = std_error(sims).hypot(std_error(&impostors));
            let rhs = mean(&impostors) + o.lipschitz() * slack;
            Ok(BoundReport::new(format!("prop2_oracle{j}"), mean(sims), rhs, MC_SIGMAS * se, n_trials))
        })
        .collect::<Result<Vec<_>>>()?;
    BoundReport::aggregate("prop2", subs)
}

/// [`verify_prop2`] on `n_worlds` random separable worlds (coupling
/// cycling through 0, 0.1, ..., 0.9), each with its own ensemble of
/// `oracle_count` oracles of width `embed_dim`.
pub fn verify_prop2_sweep<R: Rng + ?Sized>(
    n_worlds: usize,
    oracle_count: usize,
    embed_dim: usize,
    impostor_pairs: usize,
    n_trials: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    let subs = (0..n_worlds)
        .map(|i| {
            let world = random_sweep_world((i % 10) as f64 / 10.0, true, rng)?;
            let oracles = (0..oracle_count)
                .map(|_| make_oracle_with(&world, embed_dim, impostor_pairs, rng))
                .collect::<Result<Vec<_>>>()?;
            let mut rep = verify_prop2(&world, &oracles, n_trials, rng)?;
            rep.name = format!("prop2_world{i}");
            Ok(rep)
        })
        .collect::<Result<Vec<_>>>()?;
    BoundReport::aggregate("prop2", subs)
}

/// For every world whose code-level information is at most `epsilon_star`,
/// the leakage stays below `epsilon_star` under `generators` random
/// generator matrices (of random output dimension, possibly overlapping).
pub fn verify_corollary1<R: Rng + ?Sized>(
    worlds: &[WorldModel],
    epsilon_star: f64,
    generators: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    if worlds.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !(epsilon_star >= 0.0) {
        return Err(Error::Domain(format!("epsilon_star must be >= 0, got {epsilon_star}")));
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for w in worlds.iter().filter(|w| epsilon_dis(w) <= epsilon_star) {
        for _ in 0..generators {
            let m = rng.random_range(1..=w.p() + w.q() + 4);
            let variant = w.with_generator(gaussian_matrix(m, w.p(), rng), gaussian_matrix(m, w.q(), rng))?;
            worst = worst.max(closed_form_leakage(&variant)?);
            checked += 1;
        }
    }
    Ok(BoundReport::new("corollary1", worst, epsilon_star, EXACT_TOL, checked)
        .with_note(format!("{checked} world/generator pairs under the threshold")))
}
