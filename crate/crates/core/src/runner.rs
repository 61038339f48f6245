//! Experiment orchestration: runs the selected suites into private
//! subdirectories of the output directory and renders a plain-text summary
//! from the stored CSVs alone.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    random_sweep_world, verify_corollary1, EXACT_TOL, verify_lemma1, verify_prop1, verify_prop2_sweep, verify_remark1,
    verify_theorem1_sweep, verify_theorem2, verify_theorem3, write_reports_csv, BoundReport,
};
use crate::config::{derive_seed, ExperimentConfig, SamplerSpec, OUTPUT_DIR_ENV};
use crate::encoder::{mean_safe_similarity, optimize_encoder, OptimizeConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    discretized_gaussian_joint, ksg_mi, pinsker_bound, tv_distance_discrete,
};
use crate::gallery::{build_gallery, calibrate_delta, calibrate_tau, Gallery, RejectionSampler, SamplerConfig};
use crate::geometry::sample_unit_vector;
use crate::linalg::gaussian_vector;
use crate::mine::train_mine;
use crate::objectives::{LinearEncoder, TradeoffParams};
use crate::stats::mean;
use crate::threat::{run_threat_suite, tier2_probe, ThreatReport};
use crate::world::{make_oracle_with, make_world_seeded, Oracle, WorldModel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CHECKS_FILE: &str = "checks.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const TIMINGS_FILE: &str = "timings.txt";

/// Names of the verify-suite bounds, in report order.
pub const VERIFY_CHECKS: [&str; 8] = [
    "lemma1",
    "prop1",
    "theorem1",
    "remark1",
    "theorem2",
    "theorem3",
    "prop2",
    "corollary1",
];

/// Impostor pairs drawn from a gallery when calibrating `tau`.
const TAU_CALIBRATION_PAIRS: usize = 10_000;
/// Oracle embedding width and impostor sample of the ablation worlds.
const ABLATION_EMBED_DIM: usize = 4;
const ABLATION_IMPOSTOR_PAIRS: usize = 2_000;
const ABLATION_DIMS: (usize, usize, usize) = (8, 8, 16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Verify,
    Threat,
    Optimize,
    Estimate,
    Calibrate,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Verify, Suite::Threat, Suite::Optimize, Suite::Estimate, Suite::Calibrate];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Verify => "verify",
            Suite::Threat => "threat",
            Suite::Optimize => "optimize",
            Suite::Estimate => "estimate",
            Suite::Calibrate => "calibrate",
        }
    }

    pub fn from_name(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// One pass/fail line of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, threshold: f64, passed: bool) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed,
        }
    }

    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, value <= threshold)
    }

    fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, value >= threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub suite: Suite,
    /// Files written, relative to the output directory.
    pub files: Vec<PathBuf>,
    pub seconds: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub error: Option<String>,
    /// The error came from the filesystem rather than the computation.
    pub io_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub digest: String,
    pub version: String,
    pub output_dir: PathBuf,
    pub suites: Vec<SuiteOutcome>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    /// 0 when every check passed, 2 when a suite hit an I/O error, 1
    /// otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.suites.iter().any(|s| s.io_error) {
            2
        } else if self.passed() {
            0
        } else {
            1
        }
    }
}

/// The output directory: the environment override when set, else the
/// configured one.
pub fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.output_dir.clone(),
    }
}

/// Suites enabled by the configuration flags.
pub fn selected_suites(cfg: &ExperimentConfig) -> Vec<Suite> {
    let f = &cfg.suites;
    [
        (f.verify, Suite::Verify),
        (f.threat, Suite::Threat),
        (f.optimize, Suite::Optimize),
        (f.estimators, Suite::Estimate),
    ]
    .into_iter()
    .filter_map(|(on, s)| on.then_some(s))
    .collect()
}

/// Runs every suite enabled in `cfg` into its output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_suites(cfg, &selected_suites(cfg), &resolve_output_dir(cfg))
}

/// Runs `suites` in parallel, each into `out/<suite>`, then writes the
/// resolved config, manifest, timings and summary. A failing suite is
/// recorded and does not stop the others.
pub fn run_suites(cfg: &ExperimentConfig, suites: &[Suite], out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    validate_injection(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG_FILE), cfg.to_toml()?)?;
    let digest = cfg.digest();

    let mut order: Vec<Suite> = suites.to_vec();
    order.sort_by_key(|s| Suite::ALL.iter().position(|a| a == s));
    order.dedup();
    write_manifest(out, &digest, &order)?;

    let outcomes: Vec<SuiteOutcome> = order.par_iter().map(|&s| run_one(cfg, s, out)).collect();

    let mut timings = String::new();
    for o in &outcomes {
        let _ = writeln!(timings, "{} {:.3}", o.suite.name(), o.seconds);
    }
    fs::write(out.join(TIMINGS_FILE), timings)?;
    fs::write(out.join(SUMMARY_FILE), render_summary(out)?)?;
    Ok(RunReport {
        digest,
        version: VERSION.to_string(),
        output_dir: out.to_path_buf(),
        suites: outcomes,
    })
}

fn validate_injection(cfg: &ExperimentConfig) -> Result<()> {
    match &cfg.verify.inject_failure {
        Some(name) if !VERIFY_CHECKS.contains(&name.as_str()) => Err(Error::Config(format!(
            "verify.inject_failure `{name}` is not one of {}",
            VERIFY_CHECKS.join(", ")
        ))),
        _ => Ok(()),
    }
}

fn write_manifest(out: &Path, digest: &str, suites: &[Suite]) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join(MANIFEST_FILE))?;
    w.write_record(["key", "value"])?;
    w.write_record(["version", VERSION])?;
    w.write_record(["config_digest", digest])?;
    let names: Vec<&str> = suites.iter().map(|s| s.name()).collect();
    w.write_record(["suites", &names.join(";")])?;
    w.flush()?;
    Ok(())
}

fn run_one(cfg: &ExperimentConfig, suite: Suite, out: &Path) -> SuiteOutcome {
    let start = Instant::now();
    let dir = out.join(suite.name());
    let result = fs::create_dir_all(&dir).map_err(Error::from).and_then(|_| match suite {
        Suite::Verify => verify_suite(cfg, &dir),
        Suite::Threat => threat_suite(cfg, &dir),
        Suite::Optimize => optimize_suite(cfg, &dir),
        Suite::Estimate => estimate_suite(cfg, &dir),
        Suite::Calibrate => calibrate_suite(cfg, &dir),
    });
    let (checks, mut files, error, io_error) = match result {
        Ok((checks, files)) => (checks, files, None, false),
        Err(e) => {
            let io = matches!(e, Error::Io(_) | Error::Csv(_));
            let msg = e.to_string();
            let _ = fs::write(dir.join("error.txt"), format!("{msg}\n"));
            let row = Check::new("suite_error", f64::NAN, f64::NAN, false);
            (vec![row], Vec::new(), Some(msg), io)
        }
    };
    let checks_written = write_checks(&dir.join(CHECKS_FILE), &checks);
    let io_error = io_error || checks_written.is_err();
    files.push(PathBuf::from(CHECKS_FILE));
    let files = files.into_iter().map(|f| PathBuf::from(suite.name()).join(f)).collect();
    let passed = error.is_none() && !io_error && checks.iter().all(|c| c.passed);
    SuiteOutcome {
        suite,
        files,
        seconds: start.elapsed().as_secs_f64(),
        checks,
        passed,
        error: error.or_else(|| checks_written.err().map(|e| e.to_string())),
        io_error,
    }
}

fn write_checks(path: &Path, checks: &[Check]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["check", "value", "threshold", "passed"])?;
    for c in checks {
        w.write_record([c.name.clone(), c.value.to_string(), c.threshold.to_string(), c.passed.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

type SuiteResult = Result<(Vec<Check>, Vec<PathBuf>)>;

fn suite_rng(cfg: &ExperimentConfig, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, label, index))
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `count` uniform unit codes of dimension `dim`, labeled by index.
pub fn random_gallery<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Result<Gallery> {
    let codes = (0..count)
        .map(|_| sample_unit_vector(dim, rng).map(|u| u.into_inner()))
        .collect::<Result<Vec<_>>>()?;
    Ok(build_gallery(codes, (0..count).collect())?.mark_disjoint())
}

/// Fixed thresholds as given; calibrated ones from impostor pairs of
/// gallery codes (`tau`) or gallery-internal distances (`delta`).
pub fn resolve_sampler<R: Rng + ?Sized>(spec: &SamplerSpec, gallery: &Gallery, rng: &mut R) -> Result<SamplerConfig> {
    let n = gallery.len();
    let tau = match spec.tau.fixed() {
        Some(t) => t,
        None => {
            if n < 2 {
                return Err(Error::InsufficientData { needed: 2, got: n });
            }
            let codes = gallery.codes();
            let sims: Vec<f64> = (0..TAU_CALIBRATION_PAIRS)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    let j = (i + rng.random_range(1..n)) % n;
                    codes[i].dot(&codes[j])
                })
                .collect();
            calibrate_tau(&sims)?
        }
    };
    let k_nn = spec.k_nn.min(n);
    let delta = match spec.delta.fixed() {
        Some(d) => d,
        None => calibrate_delta(gallery, k_nn, spec.delta_percentile)?,
    };
    Ok(SamplerConfig {
        tau,
        delta,
        k_nn,
        max_attempts: spec.max_attempts,
    })
}

/// The world described by the `[world]` section.
pub fn config_world(cfg: &ExperimentConfig) -> Result<WorldModel> {
    let w = &cfg.world;
    make_world_seeded(w.p, w.q, w.m, &w.rho_vector(w.rho), w.sigma_g, derive_seed(cfg.master_seed, "world", 0))
}

fn oracle_ensemble<R: Rng + ?Sized>(
    world: &WorldModel,
    count: usize,
    d_f: usize,
    impostor_pairs: usize,
    rng: &mut R,
) -> Result<Vec<Oracle>> {
    (0..count)
        .map(|_| make_oracle_with(world, d_f, impostor_pairs, rng))
        .collect()
}

/// Every bound of the verify suite, in [`VERIFY_CHECKS`] order, stamped
/// with its seed and the config digest.
pub fn verify_reports(cfg: &ExperimentConfig) -> Result<Vec<BoundReport>> {
    let v = &cfg.verify;
    let seed = |label: &str| derive_seed(cfg.master_seed, &format!("verify/{label}"), 0);
    let rng = |label: &str| ChaCha8Rng::seed_from_u64(seed(label));
    let world = config_world(cfg)?;

    let mut reports = Vec::with_capacity(VERIFY_CHECKS.len());
    reports.push(verify_lemma1(v.lemma1_d, v.lemma1_tau, v.lemma1_trials, &mut rng("lemma1"))?);

    let mut r = rng("prop1");
    let gallery = random_gallery(cfg.sampler.gallery_size, cfg.sampler.gallery_dim, &mut r)?;
    let scfg = resolve_sampler(&cfg.sampler, &gallery, &mut r)?;
    reports.push(verify_prop1(&gallery, &scfg, v.prop1_trials, &mut r)?);

    reports.push(verify_theorem1_sweep(v.theorem1_worlds, v.ksg_spot_checks, v.ksg_samples, &mut rng("theorem1"))?);
    reports.push(verify_remark1(v.lemma1_d, v.lemma1_tau)?);
    reports.push(verify_theorem2(&world, None, v.utility_trials, &mut rng("theorem2"))?);
    reports.push(verify_theorem3(&world, None, &cfg.tradeoff, v.utility_trials, &mut rng("theorem3"))?);

    reports.push(verify_prop2_sweep(
        v.prop2_worlds,
        cfg.oracles.count,
        cfg.oracles.embed_dim,
        cfg.oracles.impostor_pairs,
        v.prop2_trials,
        &mut rng("prop2"),
    )?);

    let mut r = rng("corollary1");
    let worlds = (0..v.theorem1_worlds)
        .map(|i| random_sweep_world((i % 10) as f64 / 10.0, false, &mut r))
        .collect::<Result<Vec<_>>>()?;
    reports.push(verify_corollary1(&worlds, v.corollary1_epsilon, v.corollary1_generators, &mut r)?);

    let digest = cfg.digest();
    for rep in &mut reports {
        rep.seed = Some(seed(&rep.name));
        rep.config_digest = Some(digest.clone());
        if v.inject_failure.as_deref() == Some(rep.name.as_str()) {
            rep.passed = false;
            rep.note = format!("failure injected; {}", rep.note);
        }
    }
    Ok(reports)
}

/// Depth-first flattening with `/`-joined names.
fn flatten_reports(reports: &[BoundReport], prefix: &str, out: &mut Vec<BoundReport>) {
    for r in reports {
        let name = if prefix.is_empty() {
            r.name.clone()
        } else {
            format!("{prefix}/{}", r.name)
        };
        let mut flat = r.clone();
        flat.name = name.clone();
        flat.sub_reports.clear();
        out.push(flat);
        flatten_reports(&r.sub_reports, &name, out);
    }
}

fn verify_suite(cfg: &ExperimentConfig, dir: &Path) -> SuiteResult {
    let reports = verify_reports(cfg)?;
    write_reports_csv(&reports, csv_writer(&dir.join("bounds.csv"))?)?;
    let mut detail = Vec::new();
    flatten_reports(&reports, "", &mut detail);
    write_reports_csv(&detail, csv_writer(&dir.join("bounds_detail.csv"))?)?;
    let checks = reports
        .iter()
        .map(|r| Check::new(r.name.clone(), r.lhs, r.rhs, r.passed))
        .collect();
    Ok((checks, vec!["bounds.csv".into(), "bounds_detail.csv".into()]))
}

/// One threat report per value of the rho grid. World frames, oracles and
/// sampling streams share seeds across the grid so only the coupling
/// changes.
pub fn threat_sweep(cfg: &ExperimentConfig) -> Result<Vec<(f64, ThreatReport)>> {
    let t = &cfg.threat;
    let world_seed = derive_seed(cfg.master_seed, "threat/world", 0);
    let digest = cfg.digest();
    t.rho_grid
        .iter()
        .map(|&rho| {
            let world = make_world_seeded(t.p, t.q, t.m, &vec![rho; t.p.min(t.q)], t.sigma_g, world_seed)?;
            let mut r = suite_rng(cfg, "threat/oracles", 0);
            let oracles = oracle_ensemble(&world, cfg.oracles.count, t.embed_dim, 0, &mut r)?;
            let mut r = suite_rng(cfg, "threat/run", 0);
            let gallery;
            let sampler = if t.use_sampler {
                gallery = random_gallery(cfg.sampler.gallery_size, world.p(), &mut r)?;
                let scfg = resolve_sampler(&cfg.sampler, &gallery, &mut r)?;
                Some(RejectionSampler::new(&gallery, scfg)?)
            } else {
                None
            };
            let mut report = run_threat_suite(&world, &oracles, None, sampler.as_ref(), &t.sizes(), &mut r)?;
            report.config_digest = Some(digest.clone());
            Ok((rho, report))
        })
        .collect()
}

fn threat_suite(cfg: &ExperimentConfig, dir: &Path) -> SuiteResult {
    let sweep = threat_sweep(cfg)?;
    let mut w = csv::Writer::from_writer(csv_writer(&dir.join("threat.csv"))?);
    w.write_record(["rho", "tier", "metric", "value", "se"])?;
    for (rho, report) in &sweep {
        for (tier, metric, value, se) in report.rows() {
            w.write_record([rho.to_string(), tier, metric, value.to_string(), se.to_string()])?;
        }
    }
    w.flush()?;
    Ok((threat_checks(&sweep), vec!["threat.csv".into()]))
}

/// Floors at zero coupling (within three standard errors of the false
/// accept target and of chance) and monotonicity along the grid.
pub fn threat_checks(sweep: &[(f64, ThreatReport)]) -> Vec<Check> {
    let mut checks = Vec::new();
    for (rho, r) in sweep.iter().filter(|(rho, _)| *rho == 0.0) {
        let floor = |name: &str, value: f64, target: f64, se: f64| {
            let dev = (value - target).abs();
            Check::at_most(format!("{name}_floor_rho{rho}"), dev, 3.0 * se)
        };
        checks.push(floor("tier1", r.tier1.mean(), r.far_target, r.tier1_se()));
        checks.push(floor("tier2", r.tier2.top1, r.chance, r.tier2_se()));
        checks.push(floor("tier3", r.tier3.mean(), r.far_target, r.tier3_se()));
    }
    let metrics: [(&str, fn(&ThreatReport) -> f64); 3] = [
        ("tier1", |r| r.tier1.mean()),
        ("tier2", |r| r.tier2.top1),
        ("tier3", |r| r.tier3.mean()),
    ];
    let mut ordered: Vec<&(f64, ThreatReport)> = sweep.iter().collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
    for pair in ordered.windows(2) {
        let ((lo, a), (hi, b)) = (&pair[0], &pair[1]);
        for (name, metric) in metrics {
            let (va, vb) = (metric(a), metric(b));
            checks.push(Check::at_least(format!("{name}_nondecreasing_rho{lo}_to_{hi}"), vb, va));
        }
    }
    checks
}

/// Per-seed outcome of the two ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub eps_with_mu: f64,
    pub eps_without_mu: f64,
    pub top1_with_mu: f64,
    pub top1_without_mu: f64,
    pub heldout_sim_multi: f64,
    pub heldout_sim_single: f64,
}

/// Tier-2 top-1 accuracy of a probe reading identity labels from the
/// attribute codes produced by `encoder`.
fn probe_top1<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    world: &WorldModel,
    encoder: &LinearEncoder,
    rng: &mut R,
) -> Result<f64> {
    let t = &cfg.threat;
    let mut codes = Vec::with_capacity(t.identities * t.samples_per_identity);
    let mut labels = Vec::with_capacity(codes.capacity());
    for n in 0..t.identities {
        let z_id = gaussian_vector(world.p(), rng);
        for _ in 0..t.samples_per_identity {
            let z_attr = world.sample_attr_given_id(&z_id, rng);
            let x = world.generate(&z_id, &z_attr, rng)?;
            codes.push(encoder.encode_attributes(&x));
            labels.push(n);
        }
    }
    Ok(tier2_probe(&codes, &labels, t.train_fraction, t.probe_ridge)?.top1)
}

/// For seed `s`: the disentanglement ablation (default weights against
/// `mu = 0`) and the oracle ablation (`mu = 0`, privacy weight
/// `oracle_lambda`, all training oracles against the first only), both on a
/// strongly coupled world. Streams are shared between the arms of each
/// comparison.
pub fn ablation_row(cfg: &ExperimentConfig, s: u64) -> Result<AblationRow> {
    let a = &cfg.ablation;
    let (p, q, m) = ABLATION_DIMS;
    let world = make_world_seeded(p, q, m, &vec![a.rho; p.min(q)], a.sigma_g, derive_seed(cfg.master_seed, "ablation/world", s))?;
    let mut r = suite_rng(cfg, "ablation/oracles", s);
    let oracles = oracle_ensemble(&world, cfg.oracles.count, ABLATION_EMBED_DIM, ABLATION_IMPOSTOR_PAIRS, &mut r)?;
    let unseen = oracle_ensemble(&world, a.unseen_oracles, ABLATION_EMBED_DIM, ABLATION_IMPOSTOR_PAIRS, &mut r)?;
    let opt = OptimizeConfig {
        checkpoint_every: None,
        ..cfg.optimize.clone()
    };
    let optimize = |params: TradeoffParams, ens: &[Oracle]| {
        optimize_encoder(&world, ens, params, &opt, None, &mut suite_rng(cfg, "ablation/optimize", s))
    };

    let with_mu = optimize(cfg.tradeoff.clone(), &oracles)?;
    let without_mu = optimize(TradeoffParams { mu: 0.0, ..cfg.tradeoff.clone() }, &oracles)?;
    let probe = |enc: &LinearEncoder| probe_top1(cfg, &world, enc, &mut suite_rng(cfg, "ablation/probe", s));
    let top1_with_mu = probe(&with_mu.encoder)?;
    let top1_without_mu = probe(&without_mu.encoder)?;

    let oracle_params = TradeoffParams {
        mu: 0.0,
        lambda: a.oracle_lambda,
        ..cfg.tradeoff.clone()
    };
    let multi = optimize(oracle_params.clone(), &oracles)?;
    let single = optimize(oracle_params, &oracles[..1])?;
    let heldout = |enc: &LinearEncoder| -> Result<f64> {
        let mut r = suite_rng(cfg, "ablation/heldout", s);
        Ok(mean(&mean_safe_similarity(&world, Some(enc), &unseen, a.heldout_pairs, None, &mut r)?))
    };
    Ok(AblationRow {
        seed: s,
        eps_with_mu: with_mu.final_eps(),
        eps_without_mu: without_mu.final_eps(),
        top1_with_mu,
        top1_without_mu,
        heldout_sim_multi: heldout(&multi.encoder)?,
        heldout_sim_single: heldout(&single.encoder)?,
    })
}

pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    (0..cfg.ablation.seeds as u64)
        .into_par_iter()
        .map(|s| ablation_row(cfg, s))
        .collect()
}

/// Strict per-seed orderings of the ablation table.
pub fn ablation_checks(rows: &[AblationRow]) -> Vec<Check> {
    let mut checks = Vec::new();
    for r in rows {
        let s = r.seed;
        checks.push(Check::new(format!("mu_lowers_eps_seed{s}"), r.eps_with_mu, r.eps_without_mu, r.eps_with_mu < r.eps_without_mu));
        checks.push(Check::new(format!("mu_lowers_top1_seed{s}"), r.top1_with_mu, r.top1_without_mu, r.top1_with_mu < r.top1_without_mu));
        checks.push(Check::new(
            format!("multi_oracle_lowers_heldout_sim_seed{s}"),
            r.heldout_sim_multi,
            r.heldout_sim_single,
            r.heldout_sim_multi < r.heldout_sim_single,
        ));
    }
    checks
}

fn optimize_suite(cfg: &ExperimentConfig, dir: &Path) -> SuiteResult {
    let world = config_world(cfg)?;
    let mut r = suite_rng(cfg, "optimize/oracles", 0);
    let oracles = oracle_ensemble(&world, cfg.oracles.count, cfg.oracles.embed_dim, cfg.oracles.impostor_pairs, &mut r)?;
    let outcome = optimize_encoder(&world, &oracles, cfg.tradeoff.clone(), &cfg.optimize, None, &mut suite_rng(cfg, "optimize/run", 0))?;
    outcome.write_csv(csv_writer(&dir.join("trace.csv"))?)?;
    let mut checks = vec![Check::at_most("eps_dis_not_increased", outcome.final_eps(), outcome.initial_eps())];

    let rows = run_ablation(cfg)?;
    let mut w = csv::Writer::from_writer(csv_writer(&dir.join("ablation.csv"))?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    checks.extend(ablation_checks(&rows));
    Ok((checks, vec!["trace.csv".into(), "ablation.csv".into()]))
}

fn bivariate_gaussian<R: Rng + ?Sized>(rho: f64, n: usize, rng: &mut R) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let s = (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let g = gaussian_vector(2, rng);
            (vec![g[0]], vec![rho * g[0] + s * g[1]])
        })
        .unzip()
}

fn gaussian_mi_nats(rho: f64) -> f64 {
    0.5 * (1.0 / (1.0 - rho * rho)).ln()
}

fn estimate_suite(cfg: &ExperimentConfig, dir: &Path) -> SuiteResult {
    let e = &cfg.estimators;
    let mut checks = Vec::new();

    let mut w = csv::Writer::from_writer(csv_writer(&dir.join("ksg.csv"))?);
    w.write_record(["rho", "estimate", "truth", "abs_error"])?;
    for (i, &rho) in e.ksg_rho_grid.iter().enumerate() {
        let (x, y) = bivariate_gaussian(rho, e.samples, &mut suite_rng(cfg, "estimate/ksg", i as u64));
        let est = ksg_mi(&x, &y, e.ksg_k)?.value;
        let truth = gaussian_mi_nats(rho);
        let err = (est - truth).abs();
        w.write_record([rho.to_string(), est.to_string(), truth.to_string(), err.to_string()])?;
        checks.push(Check::at_most(format!("ksg_rho{rho}"), err, 0.05));
    }
    w.flush()?;

    let mut r = suite_rng(cfg, "estimate/mine", 0);
    let (x, y) = bivariate_gaussian(e.mine_rho, e.samples, &mut r);
    let trace = train_mine(&x, &y, &e.mine, &mut r)?;
    trace.write_csv(csv_writer(&dir.join("mine_trace.csv"))?)?;
    let truth = gaussian_mi_nats(e.mine_rho);
    let rel = (trace.estimate - truth).abs() / truth;
    let mut w = csv::Writer::from_writer(csv_writer(&dir.join("mine.csv"))?);
    w.write_record(["rho", "estimate", "truth", "rel_error"])?;
    w.write_record([e.mine_rho.to_string(), trace.estimate.to_string(), truth.to_string(), rel.to_string()])?;
    w.flush()?;
    checks.push(Check::at_most(format!("mine_rho{}", e.mine_rho), rel, 0.15));

    let mut w = csv::Writer::from_writer(csv_writer(&dir.join("pinsker.csv"))?);
    w.write_record(["rho", "tv", "discrete_mi", "pinsker"])?;
    let cells = e.tv_bins * e.tv_bins;
    let product = vec![1.0 / cells as f64; cells];
    for &rho in &e.ksg_rho_grid {
        let joint = discretized_gaussian_joint(rho, e.tv_bins)?;
        let tv = tv_distance_discrete(&joint, &product)?;
        let mi: f64 = joint
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * (p * cells as f64).ln())
            .sum::<f64>()
            .max(0.0);
        let bound = pinsker_bound(mi)?;
        w.write_record([rho.to_string(), tv.to_string(), mi.to_string(), bound.to_string()])?;
        checks.push(Check::at_most(format!("pinsker_rho{rho}"), tv, bound + EXACT_TOL));
    }
    w.flush()?;
    Ok((checks, vec!["ksg.csv".into(), "mine.csv".into(), "mine_trace.csv".into(), "pinsker.csv".into()]))
}

/// First-draw acceptance rate of the configured sampler over fresh
/// identities, each drawn against the same gallery.
pub fn first_draw_acceptance(cfg: &ExperimentConfig) -> Result<(SamplerConfig, f64, usize)> {
    let mut r = suite_rng(cfg, "calibrate", 0);
    let gallery = random_gallery(cfg.sampler.gallery_size, cfg.sampler.gallery_dim, &mut r)?;
    let scfg = resolve_sampler(&cfg.sampler, &gallery, &mut r)?;
    let sampler = RejectionSampler::new(&gallery, scfg)?;
    let trials = cfg.verify.prop1_trials;
    let mut first = 0usize;
    for _ in 0..trials {
        let z = sample_unit_vector(gallery.dim(), &mut r)?;
        match sampler.sample(&z, &mut r) {
            Ok(o) if o.attempts == 1 => first += 1,
            Ok(_) | Err(Error::SamplingExhausted { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((scfg, first as f64 / trials as f64, trials))
}

/// First-draw acceptance the sampler must reach at its operating point.
pub const MIN_FIRST_DRAW_ACCEPTANCE: f64 = 0.98;

fn calibrate_suite(cfg: &ExperimentConfig, dir: &Path) -> SuiteResult {
    let (scfg, rate, trials) = first_draw_acceptance(cfg)?;
    let mut w = csv::Writer::from_writer(csv_writer(&dir.join("calibration.csv"))?);
    w.write_record(["key", "value"])?;
    for (k, v) in [
        ("gallery_size", cfg.sampler.gallery_size.to_string()),
        ("gallery_dim", cfg.sampler.gallery_dim.to_string()),
        ("tau", scfg.tau.to_string()),
        ("delta", scfg.delta.to_string()),
        ("k_nn", scfg.k_nn.to_string()),
        ("max_attempts", scfg.max_attempts.to_string()),
        ("trials", trials.to_string()),
        ("first_draw_acceptance", rate.to_string()),
    ] {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    let check = Check::at_least("first_draw_acceptance", rate, MIN_FIRST_DRAW_ACCEPTANCE);
    Ok((vec![check], vec!["calibration.csv".into()]))
}

fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((rec.get(0).unwrap_or("").to_string(), rec.get(1).unwrap_or("").to_string()))
        })
        .collect()
}

fn read_checks(path: &Path) -> Result<Vec<Check>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| {
                field(i)
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
            };
            Ok(Check {
                name: field(0).to_string(),
                value: num(1)?,
                threshold: num(2)?,
                passed: field(3) == "true",
            })
        })
        .collect()
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Summary text rebuilt from the manifest and each suite's checks file;
/// nothing is recomputed.
pub fn render_summary(dir: &Path) -> Result<String> {
    let manifest = read_key_values(&dir.join(MANIFEST_FILE))?;
    let get = |key: &str| {
        manifest
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Parse(format!("manifest lacks `{key}`")))
    };
    let mut text = String::new();
    let _ = writeln!(text, "anonsim {}", get("version")?);
    let _ = writeln!(text, "config digest {}", get("config_digest")?);
    let mut all = true;
    for name in get("suites")?.split(';').filter(|s| !s.is_empty()) {
        let checks = read_checks(&dir.join(name).join(CHECKS_FILE))?;
        let passed = checks.iter().filter(|c| c.passed).count();
        let ok = passed == checks.len();
        all &= ok;
        let _ = writeln!(text, "\n[{name}] {} ({passed}/{} checks)", verdict(ok), checks.len());
        for c in &checks {
            let _ = writeln!(text, "  {} {} value={} threshold={}", verdict(c.passed), c.name, c.value, c.threshold);
        }
    }
    let _ = writeln!(text, "\noverall {}", verdict(all));
    Ok(text)
}

/// Rewrites `summary.txt` in `dir` from its CSVs and returns the text and
/// whether every stored check passed.
pub fn regenerate_summary(dir: &Path) -> Result<(String, bool)> {
    let text = render_summary(dir)?;
    fs::write(dir.join(SUMMARY_FILE), &text)?;
    let passed = text.trim_end().ends_with(verdict(true));
    Ok((text, passed))
}
