//! Sphere geometry, concentration bounds and entropy primitives.
//!
//! Cosine similarity between a fixed unit vector and a uniform point on
//! `S^{d-1}` is distributed as the first coordinate of that point, whose
//! density is proportional to `(1 - t^2)^{(d-3)/2}`. The exact tail is a
//! regularized incomplete beta function, which serves as the tightness oracle
//! for the sub-Gaussian acceptance bound.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-9;

/// A vector on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Normalizes `components` onto the sphere.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidDimension("unit vector needs d >= 1".into()));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite component".into()));
        }
        let norm = l2_norm(&components);
        if norm == 0.0 {
            return Err(Error::UndefinedSimilarity);
        }
        Ok(Self(components.into_iter().map(|c| c / norm).collect()))
    }

    /// Wraps components that are already unit norm (checked to 1e-9).
    pub fn from_normalized(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidDimension("unit vector needs d >= 1".into()));
        }
        let norm = l2_norm(&components);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Domain(format!("norm {norm} is not 1")));
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Inner product, which equals the cosine similarity for unit vectors.
    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0).clamp(-1.0, 1.0)
    }
}

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("probability {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Logarithm base for entropies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    /// Bits.
    Two,
    /// Nats.
    E,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Draws a point uniformly from `S^{d-1}` by normalizing an isotropic
/// Gaussian draw.
pub fn sample_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitVector> {
    if d == 0 {
        return Err(Error::InvalidDimension("sphere dimension must be >= 1".into()));
    }
    loop {
        let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if l2_norm(&raw) > 0.0 {
            return UnitVector::new(raw);
        }
    }
}

/// `u.v / (|u| |v|)`, clamped to `[-1, 1]`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Sub-Gaussian upper bound `exp(-(d-1) tau^2 / 2)` on the probability that
/// a uniform point on `S^{d-1}` has cosine at least `tau` with a fixed vector.
pub fn subgaussian_tail_bound(d: usize, tau: f64) -> Result<Probability> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("need d >= 2, got {d}")));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau {tau} outside (0, 1)")));
    }
    Probability::new((-((d - 1) as f64) * tau * tau / 2.0).exp())
}

/// Exact `P[cos < t]` between a fixed unit vector and a uniform point on
/// `S^{d-1}`.
pub fn exact_cos_cdf(d: usize, t: f64) -> Result<Probability> {
    let upper = exact_cos_tail(d, t)?;
    Probability::new((1.0 - upper.value()).clamp(0.0, 1.0))
}

/// Exact `P[cos >= t]`; accurate in the far tail where `1 - cdf` would
/// cancel.
pub fn exact_cos_tail(d: usize, t: f64) -> Result<Probability> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("need d >= 2, got {d}")));
    }
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("cosine {t} outside [-1, 1]")));
    }
    // P[|X| >= |t|] = I_{1-t^2}((d-1)/2, 1/2) for the first coordinate X.
    let a = (d as f64 - 1.0) / 2.0;
    let both_tails = regularized_incomplete_beta(a, 0.5, 1.0 - t * t);
    let upper = if t >= 0.0 {
        0.5 * both_tails
    } else {
        1.0 - 0.5 * both_tails
    };
    Probability::new(upper.clamp(0.0, 1.0))
}

/// Shannon entropy of `Bernoulli(p)` with `0 log 0 = 0`.
pub fn binary_entropy(p: Probability, base: LogBase) -> f64 {
    let p = p.value();
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    // ln_1p keeps the (1-p) term accurate for tiny p.
    let q_term = if p < 1.0 { -(1.0 - p) * (-p).ln_1p() } else { 0.0 };
    let nats = term(p) + q_term;
    match base {
        LogBase::E => nats,
        LogBase::Two => nats / std::f64::consts::LN_2,
    }
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    const MAX_ITER: usize = 10_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
