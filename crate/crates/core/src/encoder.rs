//! Full-batch optimization of a linear encoder against the combined
//! objective, plus the anonymization pipeline that consumes it.
//!
//! The utility and disentanglement terms are exact expectations under the
//! world's raw covariance; the privacy hinge is averaged over a cached batch
//! of raw images and their anonymized counterparts. Gradients flow into the
//! attribute head through the generator, never through the identity
//! replacement.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{ksg_mi, DEFAULT_KSG_K};
use crate::gallery::RejectionSampler;
use crate::geometry::{cosine_sim, UnitVector};
use crate::linalg::{gaussian_matrix, gaussian_vector, log_det_spd, psd_pinv, spd_inverse};
use crate::objectives::{total_objective, LinearEncoder, ObjectiveBreakdown, TradeoffParams};
use crate::world::{Oracle, WorldModel};

pub const DEFAULT_BATCH: usize = 4096;
pub const DEFAULT_STEPS: usize = 300;
pub const DEFAULT_STEP_SIZE: f64 = 0.05;
pub const DEFAULT_INIT_NOISE: f64 = 0.01;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub step_size: f64,
    pub batch: usize,
    pub init_noise: f64,
    /// Steps between KSG cross-checks of the closed-form leakage; `None`
    /// disables them.
    pub checkpoint_every: Option<usize>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            step_size: DEFAULT_STEP_SIZE,
            batch: DEFAULT_BATCH,
            init_noise: DEFAULT_INIT_NOISE,
            checkpoint_every: Some(DEFAULT_CHECKPOINT_EVERY),
        }
    }
}

/// Identity code used in place of `z_id`: a gallery code accepted by the
/// sampler (scaled by `sqrt(p)` to match the prior's typical norm), or a
/// fresh prior draw when no sampler is supplied.
pub fn replacement_identity<R: Rng + ?Sized>(
    world: &WorldModel,
    z_id: &DVector<f64>,
    sampler: Option<&RejectionSampler>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    match sampler {
        None => Ok(gaussian_vector(world.p(), rng)),
        Some(s) => {
            let unit = UnitVector::new(z_id.as_slice().to_vec())?;
            let outcome = s.sample(&unit, rng)?;
            let scale = (world.p() as f64).sqrt();
            Ok(DVector::from_vec(outcome.replacement.into_inner()) * scale)
        }
    }
}

/// `G(z', attr_code)`: the anonymized image for a given attribute code.
pub fn anonymize<R: Rng + ?Sized>(
    world: &WorldModel,
    z_id: &DVector<f64>,
    attr_code: &DVector<f64>,
    sampler: Option<&RejectionSampler>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let replacement = replacement_identity(world, z_id, sampler, rng)?;
    world.generate(&replacement, attr_code, rng)
}

/// Gaussian mutual information between the encoder heads, the attribute
/// predictor's Jacobian with respect to the identity code, and the inverse
/// blocks needed for gradients.
struct InducedStats {
    eps_dis: f64,
    jacobian: DMatrix<f64>,
    inv_joint: DMatrix<f64>,
    inv_id: DMatrix<f64>,
    inv_attr: DMatrix<f64>,
}

fn induced_stats(stacked: &DMatrix<f64>, cov_x: &DMatrix<f64>, p: usize) -> Result<InducedStats> {
    let sigma = stacked * cov_x * stacked.transpose();
    let q = sigma.nrows() - p;
    let s_ii = sigma.view((0, 0), (p, p)).into_owned();
    let s_aa = sigma.view((p, p), (q, q)).into_owned();
    let s_ai = sigma.view((p, 0), (q, p)).into_owned();
    let eps = 0.5 * (log_det_spd(&s_ii)? + log_det_spd(&s_aa)? - log_det_spd(&sigma)?);
    let inv_id = spd_inverse(&s_ii)?;
    Ok(InducedStats {
        eps_dis: eps.max(0.0),
        jacobian: &s_ai * &inv_id,
        inv_joint: spd_inverse(&sigma)?,
        inv_id,
        inv_attr: spd_inverse(&s_aa)?,
    })
}

/// Gaussian `I(E_id x; E_attr x)` for `x ~ N(0, cov_x)`.
pub fn encoder_leakage(encoder: &LinearEncoder, cov_x: &DMatrix<f64>) -> Result<f64> {
    Ok(induced_stats(&encoder.stacked(), cov_x, encoder.identity_head().nrows())?.eps_dis)
}

struct OracleTerm {
    /// Row `i`: `f(raw_i)`.
    raw_emb: DMatrix<f64>,
    /// Row `i`: embedding of the replacement-identity part of `safe_i`.
    base_emb: DMatrix<f64>,
    /// `W B`: how the attribute code enters the embedding.
    attr_map: DMatrix<f64>,
}

/// Value of every term at one encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub breakdown: ObjectiveBreakdown,
    pub eps_dis: f64,
    pub jacobian_sq: f64,
}

/// Cached data and closed-form moments for optimizing one world.
pub struct EncoderProblem {
    p: usize,
    q: usize,
    m: usize,
    params: TradeoffParams,
    cov_x: DMatrix<f64>,
    decoder: DMatrix<f64>,
    samples: DMatrix<f64>,
    terms: Vec<OracleTerm>,
}

impl EncoderProblem {
    pub fn new<R: Rng + ?Sized>(
        world: &WorldModel,
        oracles: &[Oracle],
        params: TradeoffParams,
        batch: usize,
        sampler: Option<&RejectionSampler>,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        if batch < 2 {
            return Err(Error::InsufficientData { needed: 2, got: batch });
        }
        if oracles.is_empty() && params.lambda > 0.0 {
            return Err(Error::EmptyEnsemble);
        }
        let (p, q, m) = (world.p(), world.q(), world.m());
        let mut samples = DMatrix::zeros(batch, m);
        let mut bases = DMatrix::zeros(batch, m);
        for i in 0..batch {
            let pair = world.sample_pair(rng);
            let x = world.generate(&pair.z_id, &pair.z_attr, rng)?;
            let zero_attr = DVector::zeros(q);
            let base = anonymize(world, &pair.z_id, &zero_attr, sampler, rng)?;
            samples.row_mut(i).copy_from(&x.transpose());
            bases.row_mut(i).copy_from(&base.transpose());
        }
        let terms = oracles
            .iter()
            .map(|o| {
                let w = o.embedding();
                OracleTerm {
                    raw_emb: &samples * w.transpose(),
                    base_emb: &bases * w.transpose(),
                    attr_map: w * world.attribute_mixing(),
                }
            })
            .collect();
        Ok(Self {
            p,
            q,
            m,
            params,
            cov_x: world.raw_cov(),
            decoder: world.generator_matrix(),
            samples,
            terms,
        })
    }

    pub fn params(&self) -> &TradeoffParams {
        &self.params
    }

    /// Reconstruction-optimal encoder `pinv([A B])` plus Gaussian jitter.
    pub fn initial_encoder<R: Rng + ?Sized>(&self, noise: f64, rng: &mut R) -> Result<LinearEncoder> {
        let g = &self.decoder;
        let pinv = psd_pinv(&(g.transpose() * g), 1e-12) * g.transpose();
        let jitter = gaussian_matrix(self.p + self.q, self.m, rng) * noise;
        LinearEncoder::from_stacked(&(pinv + jitter), self.p)
    }

    fn check_shape(&self, stacked: &DMatrix<f64>) -> Result<()> {
        if stacked.nrows() != self.p + self.q || stacked.ncols() != self.m {
            return Err(Error::DimensionMismatch {
                expected: (self.p + self.q) * self.m,
                got: stacked.nrows() * stacked.ncols(),
            });
        }
        Ok(())
    }

    /// Mean squared reconstruction error per output coordinate.
    fn util(&self, stacked: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.m, self.m) - &self.decoder * stacked
    }

    fn safe_embeddings(&self, term: &OracleTerm, attr_codes: &DMatrix<f64>) -> DMatrix<f64> {
        &term.base_emb + attr_codes * term.attr_map.transpose()
    }

    pub fn evaluate(&self, encoder: &LinearEncoder) -> Result<Evaluation> {
        let stacked = encoder.stacked();
        self.check_shape(&stacked)?;
        let resid = self.util(&stacked);
        let util = (&resid * &self.cov_x * resid.transpose()).trace() / self.m as f64;
        let st = induced_stats(&stacked, &self.cov_x, self.p)?;
        let jacobian_sq = st.jacobian.norm_squared();
        let dis = st.eps_dis + self.params.beta * jacobian_sq;

        let privacy = if self.terms.is_empty() {
            0.0
        } else {
            let attr_codes = &self.samples * encoder.attribute_head().transpose();
            let mut total = 0.0;
            for term in &self.terms {
                let safe = self.safe_embeddings(term, &attr_codes);
                for i in 0..safe.nrows() {
                    let s = row_cosine(&term.raw_emb, &safe, i)?;
                    total += (s - self.params.tau).max(0.0);
                }
            }
            total / (self.terms.len() * self.samples.nrows()) as f64
        };
        Ok(Evaluation {
            breakdown: total_objective(util, privacy, dis, &self.params)?,
            eps_dis: st.eps_dis,
            jacobian_sq,
        })
    }

    /// Gradient of the total objective with respect to the stacked encoder.
    pub fn gradient(&self, encoder: &LinearEncoder) -> Result<DMatrix<f64>> {
        let stacked = encoder.stacked();
        self.check_shape(&stacked)?;
        let (p, q) = (self.p, self.q);

        let resid = self.util(&stacked);
        let mut grad = -(self.decoder.transpose() * &resid * &self.cov_x) * (2.0 / self.m as f64);

        let st = induced_stats(&stacked, &self.cov_x, p)?;
        let mut g_sigma = -st.inv_joint.clone() * 0.5;
        {
            let mut ii = g_sigma.view_mut((0, 0), (p, p));
            ii += &st.inv_id * 0.5;
        }
        {
            let mut aa = g_sigma.view_mut((p, p), (q, q));
            aa += &st.inv_attr * 0.5;
        }
        let beta = self.params.beta;
        if beta > 0.0 {
            let j = &st.jacobian;
            let mut ai = g_sigma.view_mut((p, 0), (q, p));
            ai += (j * &st.inv_id) * (2.0 * beta);
            let mut ii = g_sigma.view_mut((0, 0), (p, p));
            ii -= (j.transpose() * j * &st.inv_id) * (2.0 * beta);
        }
        grad += ((&g_sigma + g_sigma.transpose()) * &stacked * &self.cov_x) * self.params.mu;

        if self.params.lambda > 0.0 && !self.terms.is_empty() {
            let n = self.samples.nrows();
            let attr_codes = &self.samples * encoder.attribute_head().transpose();
            let mut coeff = DMatrix::zeros(n, q);
            for term in &self.terms {
                let safe = self.safe_embeddings(term, &attr_codes);
                for i in 0..n {
                    let a = term.raw_emb.row(i);
                    let b = safe.row(i);
                    let (na, nb) = (a.norm(), b.norm());
                    if na == 0.0 || nb == 0.0 {
                        return Err(Error::UndefinedSimilarity);
                    }
                    let s = a.dot(&b) / (na * nb);
                    if s > self.params.tau {
                        let dsdb = (a / na - b * (s / nb)) / nb;
                        let c = dsdb * &term.attr_map;
                        let mut row = coeff.row_mut(i);
                        row += c;
                    }
                }
            }
            let scale = self.params.lambda / (n * self.terms.len()) as f64;
            let attr_grad = coeff.transpose() * &self.samples * scale;
            let mut rows = grad.rows_mut(p, q);
            rows += attr_grad;
        }
        Ok(grad)
    }

    /// Largest relative discrepancy (denominator floored at `1e-6`) between
    /// [`Self::gradient`] and central finite differences on every entry.
    pub fn gradient_check(&self, encoder: &LinearEncoder, h: f64) -> Result<f64> {
        let analytic = self.gradient(encoder)?;
        let base = encoder.stacked();
        let mut worst: f64 = 0.0;
        for idx in 0..base.len() {
            let mut plus = base.clone();
            plus[idx] += h;
            let mut minus = base.clone();
            minus[idx] -= h;
            let up = self.evaluate(&LinearEncoder::from_stacked(&plus, self.p)?)?.breakdown.total;
            let down = self.evaluate(&LinearEncoder::from_stacked(&minus, self.p)?)?.breakdown.total;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[idx].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[idx] - numeric).abs() / denom);
        }
        Ok(worst)
    }

    /// KSG estimate of the leakage between the encoder heads on the cached
    /// batch.
    pub fn ksg_leakage(&self, encoder: &LinearEncoder) -> Result<f64> {
        let ids = &self.samples * encoder.identity_head().transpose();
        let attrs = &self.samples * encoder.attribute_head().transpose();
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().cloned().collect()).collect()
        };
        Ok(ksg_mi(&rows(&ids), &rows(&attrs), DEFAULT_KSG_K)?.value)
    }
}

fn row_cosine(a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize) -> Result<f64> {
    let ra: Vec<f64> = a.row(i).iter().cloned().collect();
    let rb: Vec<f64> = b.row(i).iter().cloned().collect();
    cosine_sim(&ra, &rb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub breakdown: ObjectiveBreakdown,
    pub eps_dis: f64,
    pub ksg_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub encoder: LinearEncoder,
    /// Row 0 is the initial encoder; row `t` follows step `t`.
    pub trace: Vec<TraceRow>,
}

impl OptimizeOutcome {
    pub fn initial_eps(&self) -> f64 {
        self.trace[0].eps_dis
    }

    pub fn final_eps(&self) -> f64 {
        self.trace[self.trace.len() - 1].eps_dis
    }

    /// Writes `step,util,priv,disentangle,total,eps_dis,ksg_eps` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "util", "priv", "disentangle", "total", "eps_dis", "ksg_eps"])?;
        for row in &self.trace {
            let b = &row.breakdown;
            w.write_record([
                row.step.to_string(),
                b.util.to_string(),
                b.privacy.to_string(),
                b.disentangle.to_string(),
                b.total.to_string(),
                row.eps_dis.to_string(),
                row.ksg_eps.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gradient descent on the combined objective from the
/// reconstruction-optimal encoder.
pub fn optimize_encoder<R: Rng + ?Sized>(
    world: &WorldModel,
    oracles: &[Oracle],
    params: TradeoffParams,
    cfg: &OptimizeConfig,
    sampler: Option<&RejectionSampler>,
    rng: &mut R,
) -> Result<OptimizeOutcome> {
    if cfg.steps == 0 {
        return Err(Error::Domain("steps must be >= 1".into()));
    }
    if !(cfg.step_size > 0.0) || !cfg.step_size.is_finite() {
        return Err(Error::Domain(format!("step size must be > 0, got {}", cfg.step_size)));
    }
    let problem = EncoderProblem::new(world, oracles, params, cfg.batch, sampler, rng)?;
    let mut encoder = problem.initial_encoder(cfg.init_noise, rng)?;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let record = |step: usize, enc: &LinearEncoder, trace: &mut Vec<TraceRow>| -> Result<()> {
        let ev = problem.evaluate(enc).map_err(|_| Error::Diverged {
            step,
            step_size: cfg.step_size,
        })?;
        if !ev.breakdown.total.is_finite() {
            return Err(Error::Diverged {
                step,
                step_size: cfg.step_size,
            });
        }
        let ksg_eps = match cfg.checkpoint_every {
            Some(every) if every > 0 && step % every == 0 => Some(problem.ksg_leakage(enc)?),
            _ => None,
        };
        trace.push(TraceRow {
            step,
            breakdown: ev.breakdown,
            eps_dis: ev.eps_dis,
            ksg_eps,
        });
        Ok(())
    };
    record(0, &encoder, &mut trace)?;
    for step in 1..=cfg.steps {
        let grad = problem.gradient(&encoder).map_err(|_| Error::Diverged {
            step,
            step_size: cfg.step_size,
        })?;
        let next = encoder.stacked() - grad * cfg.step_size;
        encoder = LinearEncoder::from_stacked(&next, world.p()).map_err(|_| Error::Diverged {
            step,
            step_size: cfg.step_size,
        })?;
        record(step, &encoder, &mut trace)?;
    }
    Ok(OptimizeOutcome { encoder, trace })
}

/// Mean similarity between raw and anonymized images under each oracle,
/// with the attribute code read by `encoder` (or the true code if `None`).
pub fn mean_safe_similarity<R: Rng + ?Sized>(
    world: &WorldModel,
    encoder: Option<&LinearEncoder>,
    oracles: &[Oracle],
    n: usize,
    sampler: Option<&RejectionSampler>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if oracles.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut sums = vec![0.0; oracles.len()];
    for _ in 0..n {
        let pair = world.sample_pair(rng);
        let raw = world.generate(&pair.z_id, &pair.z_attr, rng)?;
        let code = match encoder {
            Some(e) => e.encode_attributes(&raw),
            None => pair.z_attr.clone(),
        };
        let safe = anonymize(world, &pair.z_id, &code, sampler, rng)?;
        for (s, o) in sums.iter_mut().zip(oracles) {
            *s += o.similarity(&raw, &safe)?;
        }
    }
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}
