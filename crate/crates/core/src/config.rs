//! Experiment configuration: a TOML document with every default resolved,
//! unknown keys rejected, and a content digest for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::OptimizeConfig;
use crate::error::{Error, Result};
use crate::estimators::DEFAULT_KSG_K;
use crate::gallery::{DEFAULT_DELTA_PERCENTILE, DEFAULT_K_NN, DEFAULT_MAX_ATTEMPTS};
use crate::mine::MineConfig;
use crate::objectives::TradeoffParams;
use crate::threat::{ThreatSizes, DEFAULT_FAR, DEFAULT_PROBE_RIDGE};
use crate::world::DEFAULT_SIGMA_G;

pub const DEFAULT_OUTPUT_DIR: &str = "anonsim-out";
/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "ANONSIM_OUT_DIR";

/// Either a fixed value or `"calibrated"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Fixed(f64),
    Mode(Calibrated),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calibrated {
    Calibrated,
}

impl Threshold {
    pub fn fixed(&self) -> Option<f64> {
        match self {
            Threshold::Fixed(v) => Some(*v),
            Threshold::Mode(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub p: usize,
    pub q: usize,
    pub m: usize,
    /// Canonical correlation shared by the coupled dimensions.
    pub rho: f64,
    /// Number of coupled canonical pairs; `min(p, q)` when absent.
    pub coupled_dims: Option<usize>,
    pub sigma_g: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            p: 8,
            q: 8,
            m: 16,
            rho: 0.6,
            coupled_dims: None,
            sigma_g: DEFAULT_SIGMA_G,
        }
    }
}

impl WorldSpec {
    pub fn rho_vector(&self, rho: f64) -> Vec<f64> {
        vec![rho; self.coupled_dims.unwrap_or(self.p.min(self.q))]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    /// Distinctness threshold, or `"calibrated"` for two impostor standard
    /// deviations below the impostor mean.
    pub tau: Threshold,
    /// Manifold threshold, or `"calibrated"` for the `delta_percentile`
    /// quantile of gallery-internal distances.
    pub delta: Threshold,
    pub delta_percentile: f64,
    pub k_nn: usize,
    pub max_attempts: usize,
    pub gallery_size: usize,
    /// Code dimension of the standalone sampler checks.
    pub gallery_dim: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            tau: Threshold::Fixed(0.3),
            delta: Threshold::Mode(Calibrated::Calibrated),
            delta_percentile: DEFAULT_DELTA_PERCENTILE,
            k_nn: DEFAULT_K_NN,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            gallery_size: 1000,
            gallery_dim: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub count: usize,
    pub embed_dim: usize,
    pub impostor_pairs: usize,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            count: 3,
            embed_dim: 4,
            impostor_pairs: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteFlags {
    pub verify: bool,
    pub threat: bool,
    pub optimize: bool,
    pub estimators: bool,
}

impl Default for SuiteFlags {
    fn default() -> Self {
        Self {
            verify: true,
            threat: true,
            optimize: true,
            estimators: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub lemma1_d: usize,
    pub lemma1_tau: f64,
    pub lemma1_trials: usize,
    pub prop1_trials: usize,
    pub theorem1_worlds: usize,
    pub ksg_spot_checks: usize,
    pub ksg_samples: usize,
    pub utility_trials: usize,
    pub prop2_worlds: usize,
    pub prop2_trials: usize,
    pub corollary1_epsilon: f64,
    pub corollary1_generators: usize,
    /// Name of a check forced to fail; exercises the failure path.
    pub inject_failure: Option<String>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            lemma1_d: 512,
            lemma1_tau: 0.3,
            lemma1_trials: 1_000_000,
            prop1_trials: 10_000,
            theorem1_worlds: 100,
            ksg_spot_checks: 10,
            ksg_samples: 10_000,
            utility_trials: 1_000,
            prop2_worlds: 20,
            prop2_trials: 2_000,
            corollary1_epsilon: 0.1,
            corollary1_generators: 10,
            inject_failure: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThreatSpec {
    pub rho_grid: Vec<f64>,
    /// Generator noise of the threat worlds; large enough that recognizers
    /// lean on attribute content once it carries identity.
    pub sigma_g: f64,
    pub p: usize,
    pub q: usize,
    pub m: usize,
    pub embed_dim: usize,
    pub use_sampler: bool,
    pub identities: usize,
    pub samples_per_identity: usize,
    pub impostor_pairs: usize,
    pub train_fraction: f64,
    pub adaptive_pairs: usize,
    pub far_target: f64,
    pub probe_ridge: f64,
}

impl Default for ThreatSpec {
    fn default() -> Self {
        let sizes = ThreatSizes::default();
        Self {
            rho_grid: vec![0.0, 0.3, 0.6, 0.9],
            sigma_g: 1.0,
            p: 16,
            q: 16,
            m: 40,
            embed_dim: 16,
            use_sampler: false,
            identities: sizes.identities,
            samples_per_identity: sizes.samples_per_identity,
            impostor_pairs: sizes.impostor_pairs,
            train_fraction: sizes.train_fraction,
            adaptive_pairs: sizes.adaptive_pairs,
            far_target: DEFAULT_FAR,
            probe_ridge: DEFAULT_PROBE_RIDGE,
        }
    }
}

impl ThreatSpec {
    pub fn sizes(&self) -> ThreatSizes {
        ThreatSizes {
            identities: self.identities,
            samples_per_identity: self.samples_per_identity,
            impostor_pairs: self.impostor_pairs,
            train_fraction: self.train_fraction,
            adaptive_pairs: self.adaptive_pairs,
            far_target: self.far_target,
            probe_ridge: self.probe_ridge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSpec {
    pub seeds: usize,
    pub rho: f64,
    pub sigma_g: f64,
    /// Privacy weight of the single- versus multi-oracle comparison.
    pub oracle_lambda: f64,
    pub unseen_oracles: usize,
    pub heldout_pairs: usize,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            seeds: 10,
            rho: 0.9,
            sigma_g: 1.0,
            oracle_lambda: 5.0,
            unseen_oracles: 5,
            heldout_pairs: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSpec {
    pub ksg_k: usize,
    pub ksg_rho_grid: Vec<f64>,
    pub samples: usize,
    pub mine_rho: f64,
    pub mine: MineConfig,
    pub tv_bins: usize,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            ksg_k: DEFAULT_KSG_K,
            ksg_rho_grid: vec![0.0, 0.3, 0.6, 0.9],
            samples: 10_000,
            mine_rho: 0.8,
            mine: MineConfig::default(),
            tv_bins: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub tradeoff: TradeoffParams,
    #[serde(default)]
    pub oracles: OracleSpec,
    #[serde(default)]
    pub suites: SuiteFlags,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub threat: ThreatSpec,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub ablation: AblationSpec,
    #[serde(default)]
    pub estimators: EstimatorSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(DEFAULT_OUTPUT_DIR)
}

impl ExperimentConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(master_seed: u64) -> Self {
        Self {
            master_seed,
            output_dir: default_output_dir(),
            world: WorldSpec::default(),
            sampler: SamplerSpec::default(),
            tradeoff: TradeoffParams::default(),
            oracles: OracleSpec::default(),
            suites: SuiteFlags::default(),
            verify: VerifySpec::default(),
            threat: ThreatSpec::default(),
            optimize: OptimizeConfig::default(),
            ablation: AblationSpec::default(),
            estimators: EstimatorSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if !table.contains_key("master_seed") {
            return Err(Error::Config("master_seed required".into()));
        }
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON rendering of the resolved config.
    /// Output locations are excluded, so the digest names the experiment
    /// rather than where it was written.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        if w.p == 0 || w.q == 0 || w.m == 0 {
            return Err(Error::Config("world.p, world.q and world.m must be >= 1".into()));
        }
        if w.coupled_dims.is_some_and(|c| c > w.p.min(w.q)) {
            return Err(Error::Config("world.coupled_dims exceeds min(p, q)".into()));
        }
        if !(0.0..1.0).contains(&w.rho) {
            return Err(Error::Config(format!("world.rho must lie in [0, 1), got {}", w.rho)));
        }
        if let Some(t) = self.sampler.tau.fixed() {
            if !(t > -1.0 && t < 1.0) {
                return Err(Error::Config(format!("sampler.tau must lie in (-1, 1), got {t}")));
            }
        }
        self.tradeoff.validate().map_err(|e| Error::Config(format!("tradeoff: {e}")))?;
        if self.oracles.count == 0 || self.oracles.embed_dim == 0 {
            return Err(Error::Config("oracles.count and oracles.embed_dim must be >= 1".into()));
        }
        let v = &self.verify;
        let minimums = [
            ("verify.lemma1_trials", v.lemma1_trials, 1000),
            ("verify.prop1_trials", v.prop1_trials, 10),
            ("verify.theorem1_worlds", v.theorem1_worlds, 1),
            ("verify.utility_trials", v.utility_trials, 1),
            ("verify.prop2_worlds", v.prop2_worlds, 1),
            ("verify.prop2_trials", v.prop2_trials, 2),
            ("threat.identities", self.threat.identities, 2),
            ("threat.samples_per_identity", self.threat.samples_per_identity, 2),
            ("ablation.seeds", self.ablation.seeds, 1),
            ("estimators.samples", self.estimators.samples, 256),
        ];
        for (name, value, min) in minimums {
            if value < min {
                return Err(Error::Config(format!("{name} must be >= {min}, got {value}")));
            }
        }
        if v.ksg_spot_checks > v.theorem1_worlds {
            return Err(Error::Config("verify.ksg_spot_checks exceeds verify.theorem1_worlds".into()));
        }
        if self.threat.rho_grid.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("threat.rho_grid values must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml(&text)
}

/// 64-bit seed from `SHA-256(master_seed || label || index)`, so every suite
/// and trial draws from its own stream regardless of execution order.
pub fn derive_seed(master_seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
