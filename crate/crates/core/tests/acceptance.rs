//! Acceptance suite. Each test prints one `PASS`/`FAIL` line before
//! asserting, so `cargo test --test acceptance -- --nocapture` gives a
//! one-line-per-criterion report.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use anonsim::bounds::{verify_lemma1, verify_prop2_sweep, verify_theorem1_sweep, EXACT_TOL, KSG_AGREEMENT_NATS};
use anonsim::config::ExperimentConfig;
use anonsim::encoder::EncoderProblem;
use anonsim::estimators::{discretized_gaussian_joint, ksg_mi, pinsker_bound, tv_distance_discrete};
use anonsim::geometry::subgaussian_tail_bound;
use anonsim::linalg::gaussian_vector;
use anonsim::mine::{gradient_check, train_mine, CriticNet, MineConfig};
use anonsim::objectives::TradeoffParams;
use anonsim::runner::{
    ablation_checks, first_draw_acceptance, run_ablation, run_suites, threat_checks, threat_sweep, Suite,
    MIN_FIRST_DRAW_ACCEPTANCE,
};
use anonsim::world::{make_oracle_with, make_world_seeded};

const SEED: u64 = 0;
const RHO_GRID: [f64; 4] = [0.0, 0.3, 0.6, 0.9];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn report(id: u32, passed: bool, detail: impl AsRef<str>) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("criterion {id}: {verdict} {}", detail.as_ref());
}

fn within(start: Instant, limit: Duration) -> bool {
    start.elapsed() <= limit
}

fn gaussian_pairs(rho: f64, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut r = rng(seed);
    let s = (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let g = gaussian_vector(2, &mut r);
            (vec![g[0]], vec![rho * g[0] + s * g[1]])
        })
        .unzip()
}

fn gaussian_mi(rho: f64) -> f64 {
    0.5 * (1.0 / (1.0 - rho * rho)).ln()
}

#[test]
fn criterion1_tail_bound_constant() {
    let start = Instant::now();
    let bound = subgaussian_tail_bound(512, 0.3).unwrap().value();
    let rep = verify_lemma1(512, 0.3, 1_000_000, &mut rng(SEED)).unwrap();
    let in_range = (1.0e-10..=1.1e-10).contains(&bound);
    let ok = in_range && rep.lhs == 0.0 && rep.passed && within(start, Duration::from_secs(30));
    report(1, ok, format!("bound {bound:.4e}, rejections {} of 1e6, {:.1?}", rep.lhs, start.elapsed()));
    assert!(ok);
}

#[test]
fn criterion2_first_draw_acceptance() {
    let start = Instant::now();
    let cfg = ExperimentConfig::with_seed(SEED);
    let (scfg, rate, trials) = first_draw_acceptance(&cfg).unwrap();
    let ok = rate >= MIN_FIRST_DRAW_ACCEPTANCE && trials == 10_000 && within(start, Duration::from_secs(60));
    report(
        2,
        ok,
        format!("first-draw acceptance {rate} over {trials} (tau {}, delta {:.4}), {:.1?}", scfg.tau, scfg.delta, start.elapsed()),
    );
    assert!(ok);
}

#[test]
fn criterion3_leakage_sweep() {
    let start = Instant::now();
    let rep = verify_theorem1_sweep(100, 10, 10_000, &mut rng(SEED)).unwrap();
    let worlds = &rep.sub_reports;
    let bounded = worlds.iter().filter(|w| w.margin >= -EXACT_TOL).count();
    let ksg: Vec<f64> = worlds.iter().flat_map(|w| w.sub_reports.iter().map(|k| k.lhs)).collect();
    let worst_ksg = ksg.iter().cloned().fold(0.0, f64::max);
    let ok = worlds.len() == 100
        && bounded == 100
        && ksg.len() == 10
        && worst_ksg <= KSG_AGREEMENT_NATS
        && rep.passed
        && within(start, Duration::from_secs(180));
    report(
        3,
        ok,
        format!("{bounded}/100 bounded, worst KSG gap {worst_ksg:.4} nats over {} spots, {:.1?}", ksg.len(), start.elapsed()),
    );
    assert!(ok);
}

#[test]
fn criterion4_estimator_oracles() {
    let mut detail = Vec::new();
    let mut ok = true;
    for (i, rho) in RHO_GRID.into_iter().enumerate() {
        let (x, y) = gaussian_pairs(rho, 10_000, 40 + i as u64);
        let err = (ksg_mi(&x, &y, 3).unwrap().value - gaussian_mi(rho)).abs();
        ok &= err <= 0.05;
        detail.push(format!("ksg rho {rho}: err {err:.4}"));
    }
    let (x, y) = gaussian_pairs(0.8, 10_000, 50);
    let mine = train_mine(&x, &y, &MineConfig::default(), &mut rng(51)).unwrap().estimate;
    let rel = (mine - 0.5108).abs() / 0.5108;
    ok &= rel <= 0.15;
    detail.push(format!("mine {mine:.4} (rel err {rel:.3})"));
    report(4, ok, detail.join(", "));
    assert!(ok);
}

#[test]
fn criterion5_gradient_checks() {
    let mut r = rng(60);
    let critic = CriticNet::glorot(2, 4, &mut r).unwrap();
    let batch = |r: &mut ChaCha8Rng| (0..64).map(|_| gaussian_vector(2, r).as_slice().to_vec()).collect::<Vec<_>>();
    let (joint, marginal) = (batch(&mut r), batch(&mut r));
    let dv = gradient_check(&critic, &joint, &marginal, 1e-4).unwrap();

    let world = make_world_seeded(4, 4, 8, &[0.8, 0.5], 0.05, 61).unwrap();
    let oracles: Vec<_> = (0..3).map(|_| make_oracle_with(&world, 3, 2_000, &mut r).unwrap()).collect();
    let problem = EncoderProblem::new(&world, &oracles, TradeoffParams::default(), 256, None, &mut r).unwrap();
    let enc = problem.initial_encoder(0.1, &mut r).unwrap();
    let shape = enc.stacked().shape();
    let total = problem.gradient_check(&enc, 1e-5).unwrap();
    let ok = dv <= 1e-5 && total <= 1e-5 && shape == (8, 8) && critic.hidden() == 4;
    report(5, ok, format!("critic width 4 max rel err {dv:.2e}; encoder {shape:?} max rel err {total:.2e}"));
    assert!(ok);
}

#[test]
fn criterion6_pinsker_and_oracle_similarity() {
    let mut ok = true;
    let mut detail = Vec::new();
    let bins = 32;
    let cells = bins * bins;
    let product = vec![1.0 / cells as f64; cells];
    for rho in RHO_GRID {
        let joint = discretized_gaussian_joint(rho, bins).unwrap();
        let tv = tv_distance_discrete(&joint, &product).unwrap();
        let bound = pinsker_bound(gaussian_mi(rho)).unwrap();
        ok &= tv <= bound + EXACT_TOL;
        detail.push(format!("rho {rho}: tv {tv:.4} <= {bound:.4}"));
    }
    let cfg = ExperimentConfig::with_seed(SEED);
    let rep = verify_prop2_sweep(20, 3, cfg.oracles.embed_dim, cfg.oracles.impostor_pairs, 2_000, &mut rng(70)).unwrap();
    let passed = rep.sub_reports.iter().filter(|w| w.passed).count();
    ok &= rep.sub_reports.len() == 20 && rep.passed;
    detail.push(format!("oracle similarity bound held on {passed}/20 worlds"));
    report(6, ok, detail.join(", "));
    assert!(ok);
}

#[test]
fn criterion7_threat_floors_and_monotonicity() {
    let cfg = ExperimentConfig::with_seed(SEED);
    let sweep = threat_sweep(&cfg).unwrap();
    let checks = threat_checks(&sweep);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let ok = failed.is_empty() && checks.len() == 12;
    let levels: Vec<String> = sweep
        .iter()
        .map(|(rho, r)| format!("rho {rho}: {:.4}/{:.4}/{:.4}", r.tier1.mean(), r.tier2.top1, r.tier3.mean()))
        .collect();
    report(7, ok, format!("tiers 1/2/3 {}; failed {failed:?}", levels.join(", ")));
    assert!(ok);
}

#[test]
fn criterion8_ablation_orderings() {
    let cfg = ExperimentConfig::with_seed(SEED);
    let rows = run_ablation(&cfg).unwrap();
    let checks = ablation_checks(&rows);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let ok = rows.len() == 10 && failed.is_empty();
    let mean = |f: fn(&anonsim::runner::AblationRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    report(
        8,
        ok,
        format!(
            "mean eps {:.3} vs {:.3}, top-1 {:.3} vs {:.3}, held-out sim multi {:.3} vs single {:.3}; failed {failed:?}",
            mean(|r| r.eps_with_mu),
            mean(|r| r.eps_without_mu),
            mean(|r| r.top1_with_mu),
            mean(|r| r.top1_without_mu),
            mean(|r| r.heldout_sim_multi),
            mean(|r| r.heldout_sim_single),
        ),
    );
    assert!(ok);
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let verify = dir.join("verify");
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&verify)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion9_deterministic_verify_suite() {
    let cfg = ExperimentConfig::with_seed(SEED);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let start = Instant::now();
    let first = run_suites(&cfg, &[Suite::Verify], a.path()).unwrap();
    let one_run = start.elapsed();
    run_suites(&cfg, &[Suite::Verify], b.path()).unwrap();
    let (fa, fb) = (csv_bytes(a.path()), csv_bytes(b.path()));
    let identical = fa == fb && fa.len() == 3;
    let ok = identical && first.passed() && one_run <= Duration::from_secs(600);
    report(
        9,
        ok,
        format!("{} CSVs byte-identical: {identical}; all bounds passed: {}; one run {:.1?}", fa.len(), first.passed(), one_run),
    );
    assert!(ok);
}
