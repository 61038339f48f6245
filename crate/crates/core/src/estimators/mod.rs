//! Empirical and closed-form mutual-information estimators plus
//! disentanglement diagnostics.

mod dci;
mod divergence;
mod gaussian;
mod ksg;
mod mig;

use serde::{Deserialize, Serialize};

pub use dci::{dci_disentanglement, DciScore, DCI_RIDGE};
pub use divergence::{discretized_gaussian_joint, pinsker_bound, tv_distance_discrete};
pub use gaussian::{gaussian_mi, gaussian_mi_joint};
pub use ksg::{ksg_mi, DEFAULT_KSG_K};
pub use mig::{mig_score, MigScore, MIG_BINS};

/// How a mutual-information value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiMethod {
    GaussianClosedForm,
    Ksg,
    Mine,
}

/// A mutual-information value in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub value: f64,
    pub method: MiMethod,
    /// `None` for closed forms.
    pub n_samples: Option<usize>,
    /// Neighbor count for KSG.
    pub k: Option<usize>,
    /// Set when a KSG estimate sits within a nat of its attainable maximum,
    /// which happens for (near-)deterministic dependence.
    pub saturated: bool,
}

/// MIG and DCI disentanglement together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementScores {
    pub mig: f64,
    pub dci_disentanglement: f64,
    pub mig_per_factor: Vec<Option<f64>>,
}

/// Computes both diagnostics on the same latent sample. `discrete_factors`
/// feed MIG, `continuous_factors` feed DCI.
pub fn disentanglement_scores(
    latents: &[Vec<f64>],
    discrete_factors: &[Vec<usize>],
    continuous_factors: &[Vec<f64>],
) -> crate::Result<DisentanglementScores> {
    let mig = mig_score(latents, discrete_factors)?;
    let dci = dci_disentanglement(latents, continuous_factors)?;
    Ok(DisentanglementScores {
        mig: mig.score,
        dci_disentanglement: dci.score,
        mig_per_factor: mig.per_factor,
    })
}
