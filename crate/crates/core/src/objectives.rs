//! Privacy, disentanglement and utility losses and their weighted sum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gaussian_vector;
use crate::world::{Oracle, WorldModel};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_MU: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_HINGE_TAU: f64 = 0.0;

/// Weights of the combined objective and the privacy hinge threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TradeoffParams {
    pub lambda: f64,
    pub mu: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Default for TradeoffParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            mu: DEFAULT_MU,
            beta: DEFAULT_BETA,
            tau: DEFAULT_HINGE_TAU,
        }
    }
}

impl TradeoffParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.tau.abs() <= 1.0) {
            return Err(Error::Domain(format!("hinge tau must lie in [-1, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

/// Identity and attribute heads applied to generator outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    e_id: DMatrix<f64>,
    e_attr: DMatrix<f64>,
}

impl LinearEncoder {
    pub fn new(e_id: DMatrix<f64>, e_attr: DMatrix<f64>) -> Result<Self> {
        if e_id.ncols() != e_attr.ncols() {
            return Err(Error::DimensionMismatch {
                expected: e_id.ncols(),
                got: e_attr.ncols(),
            });
        }
        if e_id.nrows() == 0 || e_attr.nrows() == 0 || e_id.ncols() == 0 {
            return Err(Error::InvalidDimension("encoder heads must be nonempty".into()));
        }
        if e_id.iter().chain(e_attr.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("encoder entries must be finite".into()));
        }
        Ok(Self { e_id, e_attr })
    }

    /// Splits a stacked `(p_out + q_out) x m` matrix after row `p_out`.
    pub fn from_stacked(stacked: &DMatrix<f64>, p_out: usize) -> Result<Self> {
        if p_out == 0 || p_out >= stacked.nrows() {
            return Err(Error::InvalidDimension(format!(
                "split {p_out} must leave both heads nonempty"
            )));
        }
        Self::new(
            stacked.rows(0, p_out).into_owned(),
            stacked.rows(p_out, stacked.nrows() - p_out).into_owned(),
        )
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        let (p, q, m) = (self.e_id.nrows(), self.e_attr.nrows(), self.e_id.ncols());
        let mut out = DMatrix::zeros(p + q, m);
        out.rows_mut(0, p).copy_from(&self.e_id);
        out.rows_mut(p, q).copy_from(&self.e_attr);
        out
    }

    pub fn identity_head(&self) -> &DMatrix<f64> {
        &self.e_id
    }

    pub fn attribute_head(&self) -> &DMatrix<f64> {
        &self.e_attr
    }

    pub fn input_dim(&self) -> usize {
        self.e_id.ncols()
    }

    pub fn encode_identity(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.e_id * x
    }

    pub fn encode_attributes(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.e_attr * x
    }
}

/// The three loss components, their weights and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub util: f64,
    pub privacy: f64,
    pub disentangle: f64,
    pub total: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// Mean over `sims` of `max(0, sim - tau)`.
pub fn hinge_mean(sims: &[f64], tau: f64) -> Result<f64> {
    if sims.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(sims.iter().map(|s| (s - tau).max(0.0)).sum::<f64>() / sims.len() as f64)
}

/// Ensemble hinge: average over oracles of `max(0, sim(f(raw), f(safe)) - tau)`.
pub fn priv_loss(raw: &DVector<f64>, safe: &DVector<f64>, oracles: &[Oracle], tau: f64) -> Result<f64> {
    if oracles.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if raw.len() != safe.len() {
        return Err(Error::DimensionMismatch {
            expected: raw.len(),
            got: safe.len(),
        });
    }
    let sims = oracles
        .iter()
        .map(|o| o.similarity(raw, safe))
        .collect::<Result<Vec<_>>>()?;
    hinge_mean(&sims, tau)
}

/// `mi + beta * ||J||_F^2`.
pub fn disentangle_loss(mi_value: f64, jacobian: &DMatrix<f64>, beta: f64) -> Result<f64> {
    if !(mi_value >= 0.0) {
        return Err(Error::Domain(format!("mutual information must be >= 0, got {mi_value}")));
    }
    if !(beta >= 0.0) {
        return Err(Error::Domain(format!("beta must be >= 0, got {beta}")));
    }
    Ok(mi_value + beta * jacobian.norm_squared())
}

/// Distance between the attribute-subspace projections of two images.
pub fn util_loss(raw: &DVector<f64>, safe: &DVector<f64>, world: &WorldModel) -> Result<f64> {
    if raw.len() != world.m() || safe.len() != world.m() {
        return Err(Error::DimensionMismatch {
            expected: world.m(),
            got: if raw.len() != world.m() { raw.len() } else { safe.len() },
        });
    }
    Ok((world.attribute_projector() * (raw - safe)).norm())
}

pub fn total_objective(util: f64, privacy: f64, disentangle: f64, params: &TradeoffParams) -> Result<ObjectiveBreakdown> {
    if ![util, privacy, disentangle].iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("objective components must be finite".into()));
    }
    params.validate()?;
    Ok(ObjectiveBreakdown {
        util,
        privacy,
        disentangle,
        total: util + params.lambda * privacy + params.mu * disentangle,
        lambda: params.lambda,
        mu: params.mu,
    })
}

/// Largest attribute-space distortion observed when the identity code is
/// swapped for an independent one while the attribute code is held fixed.
pub fn kappa_measure<R: Rng + ?Sized>(world: &WorldModel, n_trials: usize, rng: &mut R) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::Domain("n_trials must be >= 1".into()));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..n_trials {
        let pair = world.sample_pair(rng);
        let other = gaussian_vector(world.p(), rng);
        let x = world.generate(&pair.z_id, &pair.z_attr, rng)?;
        let y = world.generate(&other, &pair.z_attr, rng)?;
        worst = worst.max(util_loss(&x, &y, world)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{make_oracle_with, make_world};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_mean(&[0.2, 0.25, 0.1], 0.3).unwrap(), 0.0);
        assert!((hinge_mean(&[0.5], 0.3).unwrap() - 0.2).abs() < 1e-15);
        assert!((hinge_mean(&[0.4, 0.2], 0.3).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(hinge_mean(&[], 0.3), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn priv_loss_on_oracles() {
        let w = make_world(4, 4, 10, &[0.5], 0.05, &mut rng(1)).unwrap();
        let oracles: Vec<Oracle> = (0..3)
            .map(|i| make_oracle_with(&w, 3, 0, &mut rng(2 + i)).unwrap())
            .collect();
        let x = w.sample_raw(&mut rng(3));
        let same = priv_loss(&x, &x, &oracles, 0.3).unwrap();
        assert!((same - 0.7).abs() < 1e-12);
        let neg = -x.clone();
        assert_eq!(priv_loss(&x, &neg, &oracles, 0.3).unwrap(), 0.0);
        assert!(matches!(priv_loss(&x, &x, &[], 0.3), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn disentangle_examples() {
        let j = DMatrix::from_row_slice(2, 2, &[0.3, 0.4, 0.1, 0.2]);
        assert_eq!(disentangle_loss(0.7, &j, 0.0).unwrap(), 0.7);
        assert_eq!(disentangle_loss(0.1, &DMatrix::zeros(2, 3), 2.0).unwrap(), 0.1);
        let j = DMatrix::from_row_slice(1, 2, &[0.4f64.sqrt(), 0.0]);
        assert!((disentangle_loss(0.2, &j, 0.5).unwrap() - 0.4).abs() < 1e-15);
        assert!(disentangle_loss(-0.1, &j, 0.5).is_err());
    }

    #[test]
    fn util_examples() {
        let w = make_world(3, 3, 8, &[0.5], 0.05, &mut rng(4)).unwrap();
        let x = w.sample_raw(&mut rng(5));
        assert_eq!(util_loss(&x, &x, &w).unwrap(), 0.0);
        let v = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let moved = &x + w.identity_mixing() * &v;
        assert!(util_loss(&x, &moved, &w).unwrap() < 1e-12);
        let dir = w.attribute_mixing() * DVector::from_vec(vec![1.0, 2.0, -2.0]);
        let shifted = &x + &dir * (0.3 / dir.norm());
        assert!((util_loss(&x, &shifted, &w).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let p = TradeoffParams::default();
        assert_eq!(total_objective(0.0, 0.0, 0.0, &p).unwrap().total, 0.0);
        let b = total_objective(1.0, 0.5, 0.2, &p).unwrap();
        assert!((b.total - 1.52).abs() < 1e-15);
        let no_priv = TradeoffParams { lambda: 0.0, ..p };
        assert_eq!(
            total_objective(1.0, 0.5, 0.2, &no_priv).unwrap().total,
            total_objective(1.0, 9.0, 0.2, &no_priv).unwrap().total
        );
        assert!(total_objective(f64::NAN, 0.0, 0.0, &p).is_err());
        assert!(TradeoffParams { mu: -1.0, ..p }.validate().is_err());
    }

    #[test]
    fn kappa_examples() {
        let w = make_world(4, 4, 12, &[0.7], 0.0, &mut rng(6)).unwrap();
        assert!(kappa_measure(&w, 200, &mut rng(7)).unwrap() < 1e-12);
        let noisy = w.with_sigma_g(0.05);
        let k = kappa_measure(&noisy, 500, &mut rng(8)).unwrap();
        assert!(k > 0.0 && k <= 3.0 * 0.05 * 12f64.sqrt(), "{k}");

        let single = kappa_measure(&noisy, 1, &mut rng(9)).unwrap();
        let mut r = rng(9);
        let pair = noisy.sample_pair(&mut r);
        let other = gaussian_vector(4, &mut r);
        let x = noisy.generate(&pair.z_id, &pair.z_attr, &mut r).unwrap();
        let y = noisy.generate(&other, &pair.z_attr, &mut r).unwrap();
        assert_eq!(single, util_loss(&x, &y, &noisy).unwrap());
        assert!(kappa_measure(&noisy, 0, &mut r).is_err());
    }

    #[test]
    fn encoder_stacking_round_trip() {
        let e = LinearEncoder::new(DMatrix::from_element(2, 5, 1.0), DMatrix::from_element(3, 5, 2.0)).unwrap();
        let back = LinearEncoder::from_stacked(&e.stacked(), 2).unwrap();
        assert_eq!(back, e);
        assert!(LinearEncoder::new(DMatrix::zeros(2, 5), DMatrix::zeros(3, 4)).is_err());
    }

    proptest! {
        #[test]
        fn breakdown_identity_and_lambda_monotone(
            u in 0.0f64..10.0, pr in 0.0f64..1.0, d in 0.0f64..5.0,
            l1 in 0.0f64..5.0, dl in 0.0f64..5.0, mu in 0.0f64..2.0,
        ) {
            let p1 = TradeoffParams { lambda: l1, mu, ..TradeoffParams::default() };
            let p2 = TradeoffParams { lambda: l1 + dl, ..p1 };
            let b1 = total_objective(u, pr, d, &p1).unwrap();
            let b2 = total_objective(u, pr, d, &p2).unwrap();
            prop_assert!((b1.total - (b1.util + b1.lambda * b1.privacy + b1.mu * b1.disentangle)).abs() <= 1e-12);
            prop_assert!(b2.total >= b1.total);
        }

        #[test]
        fn hinge_zero_iff_all_below(sims in prop::collection::vec(-1.0f64..1.0, 1..6), tau in -0.5f64..0.5) {
            let loss = hinge_mean(&sims, tau).unwrap();
            let all_below = sims.iter().all(|s| *s <= tau);
            prop_assert_eq!(loss == 0.0, all_below);
            prop_assert!(loss <= 1.0 - tau);
        }
    }
}
