//! Donsker-Varadhan neural mutual-information estimation with a one-hidden-
//! layer tanh critic and hand-written backpropagation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_STEP_SIZE: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EMA_DECAY: f64 = 0.99;
pub const DEFAULT_BATCH: usize = 256;
pub const MIN_SAMPLES: usize = 256;

/// `T(u) = w2 . tanh(W1 u + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    input_dim: usize,
    hidden: usize,
    /// Row-major `hidden x input_dim`.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl CriticNet {
    pub fn zeros(input_dim: usize, hidden: usize) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidDimension(format!(
                "critic needs input_dim >= 1 and hidden >= 1, got {input_dim}, {hidden}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(input_dim, hidden)?;
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        for w in net.w1.iter_mut() {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        for w in net.w2.iter_mut() {
            *w = rng.random_range(-a2..a2);
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.hidden * (self.input_dim + 2) + 1
    }

    /// Flattened parameters in the order `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let (h, d) = (self.hidden, self.input_dim);
        self.w1.copy_from_slice(&params[..h * d]);
        self.b1.copy_from_slice(&params[h * d..h * d + h]);
        self.w2.copy_from_slice(&params[h * d + h..h * d + 2 * h]);
        self.b2 = params[h * d + 2 * h];
        Ok(())
    }

    fn hidden_activations(&self, u: &[f64], act: &mut [f64]) {
        for (k, a) in act.iter_mut().enumerate() {
            let row = &self.w1[k * self.input_dim..(k + 1) * self.input_dim];
            let pre: f64 = row.iter().zip(u).map(|(w, x)| w * x).sum::<f64>() + self.b1[k];
            *a = pre.tanh();
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        let mut act = vec![0.0; self.hidden];
        self.hidden_activations(u, &mut act);
        self.w2.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + self.b2
    }

    /// Adds `weight * dT(u)/dtheta` into `grad` (flattened layout).
    fn accumulate_grad(&self, u: &[f64], weight: f64, act: &mut [f64], grad: &mut [f64]) {
        let (h, d) = (self.hidden, self.input_dim);
        self.hidden_activations(u, act);
        for k in 0..h {
            let a = act[k];
            let delta = weight * self.w2[k] * (1.0 - a * a);
            let row = &mut grad[k * d..(k + 1) * d];
            for (g, x) in row.iter_mut().zip(u) {
                *g += delta * x;
            }
            grad[h * d + k] += delta;
            grad[h * d + h + k] += weight * a;
        }
        grad[h * d + 2 * h] += weight;
    }

    fn check_batch(&self, batch: &[Vec<f64>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if let Some(row) = batch.iter().find(|r| r.len() != self.input_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: row.len(),
            });
        }
        Ok(())
    }
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (s / values.len() as f64).ln()
}

/// `mean_joint T - ln mean_marginal exp(T)`.
pub fn dv_objective(critic: &CriticNet, joint: &[Vec<f64>], marginal: &[Vec<f64>]) -> Result<f64> {
    critic.check_batch(joint)?;
    critic.check_batch(marginal)?;
    let tj: f64 = joint.iter().map(|u| critic.eval(u)).sum::<f64>() / joint.len() as f64;
    let tm: Vec<f64> = marginal.iter().map(|u| critic.eval(u)).collect();
    Ok(tj - log_mean_exp(&tm))
}

/// Exact gradient of [`dv_objective`] with respect to the flattened
/// parameters.
pub fn dv_gradient(critic: &CriticNet, joint: &[Vec<f64>], marginal: &[Vec<f64>]) -> Result<Vec<f64>> {
    critic.check_batch(joint)?;
    critic.check_batch(marginal)?;
    let tm: Vec<f64> = marginal.iter().map(|u| critic.eval(u)).collect();
    let lme = log_mean_exp(&tm);
    let n_m = marginal.len() as f64;
    let weights: Vec<f64> = tm.iter().map(|t| (t - lme).exp() / n_m).collect();
    Ok(weighted_gradient(critic, joint, marginal, &weights))
}

/// `mean_joint dT - sum_i w_i dT(marginal_i)`.
fn weighted_gradient(
    critic: &CriticNet,
    joint: &[Vec<f64>],
    marginal: &[Vec<f64>],
    marginal_weights: &[f64],
) -> Vec<f64> {
    let mut grad = vec![0.0; critic.num_params()];
    let mut act = vec![0.0; critic.hidden];
    let wj = 1.0 / joint.len() as f64;
    for u in joint {
        critic.accumulate_grad(u, wj, &mut act, &mut grad);
    }
    for (u, w) in marginal.iter().zip(marginal_weights) {
        critic.accumulate_grad(u, -w, &mut act, &mut grad);
    }
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub ema_decay: f64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            epochs: 500,
            step_size: DEFAULT_STEP_SIZE,
            momentum: DEFAULT_MOMENTUM,
            batch_size: DEFAULT_BATCH,
            ema_decay: DEFAULT_EMA_DECAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean minibatch DV value per epoch.
    pub dv_values: Vec<f64>,
    /// DV value of the trained critic on the full sample (nats).
    pub estimate: f64,
    /// Moving average of the log-partition term at the end of training.
    pub ema_log_partition: f64,
    pub ema_decay: f64,
    pub config: MineConfig,
    pub critic: CriticNet,
}

impl TrainTrace {
    /// Writes `epoch,dv_value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "dv_value"])?;
        for (epoch, v) in self.dv_values.iter().enumerate() {
            w.write_record([epoch.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn concat_rows(x: &[Vec<f64>], y: &[Vec<f64>], idx_x: &[usize], idx_y: &[usize]) -> Vec<Vec<f64>> {
    idx_x
        .iter()
        .zip(idx_y)
        .map(|(&i, &j)| x[i].iter().chain(&y[j]).cloned().collect())
        .collect()
}

/// Trains a critic on paired samples by minibatch ascent on the DV bound,
/// using a moving average of the partition term in the gradient to reduce
/// its minibatch bias. Marginal batches pair each `x` with a `y` shuffled
/// within the same minibatch.
pub fn train_mine<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    cfg: &MineConfig,
    rng: &mut R,
) -> Result<TrainTrace> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    if cfg.epochs == 0 || cfg.batch_size < 2 {
        return Err(Error::Domain("need epochs >= 1 and batch_size >= 2".into()));
    }
    if !(cfg.step_size > 0.0) || !(0.0..1.0).contains(&cfg.momentum) || !(0.0..1.0).contains(&cfg.ema_decay) {
        return Err(Error::Domain("step size must be > 0; momentum and decay in [0, 1)".into()));
    }
    let dx = x[0].len();
    let dy = y[0].len();
    if x.iter().any(|r| r.len() != dx) || y.iter().any(|r| r.len() != dy) {
        return Err(Error::Domain("ragged sample matrix".into()));
    }

    let mut critic = CriticNet::glorot(dx + dy, cfg.hidden, rng)?;
    let mut params = critic.params();
    let mut velocity = vec![0.0; params.len()];
    let mut log_ema: Option<f64> = None;
    let mut order: Vec<usize> = (0..n).collect();
    let mut dv_values = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut shuffled = chunk.to_vec();
            shuffled.shuffle(rng);
            let joint = concat_rows(x, y, chunk, chunk);
            let marginal = concat_rows(x, y, chunk, &shuffled);

            let tm: Vec<f64> = marginal.iter().map(|u| critic.eval(u)).collect();
            let lme = log_mean_exp(&tm);
            let tj: f64 = joint.iter().map(|u| critic.eval(u)).sum::<f64>() / joint.len() as f64;
            let value = tj - lme;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    step_size: cfg.step_size,
                });
            }
            epoch_sum += value;
            batches += 1;

            let updated = match log_ema {
                None => lme,
                Some(prev) => {
                    let (a, b) = (cfg.ema_decay.ln() + prev, (1.0 - cfg.ema_decay).ln() + lme);
                    let hi = a.max(b);
                    hi + ((a - hi).exp() + (b - hi).exp()).ln()
                }
            };
            log_ema = Some(updated);
            let nm = marginal.len() as f64;
            let weights: Vec<f64> = tm.iter().map(|t| (t - updated).exp() / nm).collect();
            let grad = weighted_gradient(&critic, &joint, &marginal, &weights);

            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p += cfg.step_size * *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    step,
                    step_size: cfg.step_size,
                });
            }
            critic.set_params(&params)?;
            step += 1;
        }
        let mean = epoch_sum / batches as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                step: epoch,
                step_size: cfg.step_size,
            });
        }
        dv_values.push(mean);
    }

    let identity: Vec<usize> = (0..n).collect();
    let mut perm = identity.clone();
    perm.shuffle(rng);
    let joint = concat_rows(x, y, &identity, &identity);
    let marginal = concat_rows(x, y, &identity, &perm);
    let estimate = dv_objective(&critic, &joint, &marginal)?;
    Ok(TrainTrace {
        dv_values,
        estimate,
        ema_log_partition: log_ema.unwrap_or(0.0),
        ema_decay: cfg.ema_decay,
        config: cfg.clone(),
        critic,
    })
}

/// Bootstrap standard error of the DV value of a fixed critic: joint rows and
/// marginal pairings are resampled with replacement.
pub fn bootstrap_se<R: Rng + ?Sized>(
    critic: &CriticNet,
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    resamples: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = x.len();
    if y.len() != n || n < 2 || resamples < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: n.min(resamples),
        });
    }
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let idx_y: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let joint = concat_rows(x, y, &idx, &idx);
        let marginal = concat_rows(x, y, &idx, &idx_y);
        values.push(dv_objective(critic, &joint, &marginal)?);
    }
    Ok(crate::stats::sample_sd(&values))
}

/// Largest relative discrepancy between [`dv_gradient`] and central finite
/// differences, with the denominator floored at `1e-6` so that entries that
/// vanish analytically are compared in absolute terms.
pub fn gradient_check(
    critic: &CriticNet,
    joint: &[Vec<f64>],
    marginal: &[Vec<f64>],
    h: f64,
) -> Result<f64> {
    let analytic = dv_gradient(critic, joint, marginal)?;
    let base = critic.params();
    let mut probe = critic.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p)?;
        let up = dv_objective(&probe, joint, marginal)?;
        p[i] = base[i] - h;
        probe.set_params(&p)?;
        let down = dv_objective(&probe, joint, marginal)?;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
