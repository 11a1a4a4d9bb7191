//! Diagonal Gaussian policies with optional tanh squashing.
//!
//! The trunk maps a state to `2 * action_dim` outputs: the first half is the
//! mean, the second half the (clamped) log standard deviation. Samples are
//! reparameterized as `u = mean + std * noise`, `action = tanh(u)` when
//! squashing, so gradients of any function of `(action, log_prob)` flow back
//! into the trunk through [`GaussianPolicy::backward_sample`].

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{BatchTrace, Mlp, Trace};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Squashed actions are kept strictly inside (-1, 1).
const ACTION_LIMIT: f64 = 1.0 - f64::EPSILON;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    trunk: Mlp,
    action_dim: usize,
    squash: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
    pub noise: Vec<f64>,
}

/// Scratch state kept between a differentiable forward and its backward.
#[derive(Debug, Clone, Default)]
pub struct PolicyTrace {
    trunk: Trace,
    mean: Vec<f64>,
    log_std: Vec<f64>,
    /// false where the log-std clamp is active (zero gradient)
    log_std_free: Vec<bool>,
    noise: Vec<f64>,
    action: Vec<f64>,
    out_grad: Vec<f64>,
}

impl PolicyTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    2.0 * (LN_2 - u - softplus)
}

/// One action component of a reparameterized sample: `(u, action, log-density term)`.
#[inline]
fn sample_component(mean: f64, log_std: f64, eps: f64, squash: bool) -> (f64, f64, f64) {
    let u = mean + log_std.exp() * eps;
    let lp = -0.5 * eps * eps - log_std - HALF_LN_2PI;
    if squash {
        (
            u,
            u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT),
            lp - log_one_minus_tanh_sq(u),
        )
    } else {
        (u, u, lp)
    }
}

/// Trunk-output gradients `(d/dmean, d/draw_log_std)` of one component.
#[inline]
#[allow(clippy::too_many_arguments)]
fn sample_component_grad(
    action: f64,
    log_std: f64,
    log_std_free: bool,
    eps: f64,
    dl_da: f64,
    dl_dlogp: f64,
    squash: bool,
) -> (f64, f64) {
    let dl_du = if squash {
        // d log_prob / du = 2 tanh(u) through the squash correction
        dl_da * (1.0 - action * action) + dl_dlogp * 2.0 * action
    } else {
        dl_da
    };
    let dl_dls = if log_std_free {
        dl_du * log_std.exp() * eps - dl_dlogp
    } else {
        0.0
    };
    (dl_du, dl_dls)
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        squash: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * action_dim);
        Self::from_trunk(Mlp::new(&widths, rng)?, squash)
    }

    pub fn from_trunk(trunk: Mlp, squash: bool) -> Result<Self> {
        let out = trunk.output_dim();
        if !out.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "policy trunk must output 2 * action_dim values, got {out}"
            )));
        }
        Ok(Self {
            trunk,
            action_dim: out / 2,
            squash,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn squash(&self) -> bool {
        self.squash
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params()
    }

    fn forward_head(&self, state: &[f64], trace: &mut PolicyTrace) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::shape("policy state", self.state_dim(), state.len()));
        }
        self.trunk.forward_trace(state, &mut trace.trunk)?;
        let out = trace.trunk.output();
        let (mean, raw) = out.split_at(self.action_dim);
        trace.mean.clear();
        trace.mean.extend_from_slice(mean);
        trace.log_std.clear();
        trace.log_std_free.clear();
        for &r in raw {
            trace.log_std.push(r.clamp(LOG_STD_MIN, LOG_STD_MAX));
            trace.log_std_free.push(r > LOG_STD_MIN && r < LOG_STD_MAX);
        }
        Ok(())
    }

    /// Mean and clamped log-std of the pre-squash Gaussian.
    pub fn distribution(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut trace = PolicyTrace::new();
        self.forward_head(state, &mut trace)?;
        Ok((trace.mean, trace.log_std))
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<ActionSample> {
        let noise: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(state, &noise)
    }

    pub fn sample_with_noise(&self, state: &[f64], noise: &[f64]) -> Result<ActionSample> {
        let mut trace = PolicyTrace::new();
        self.forward_sample(state, noise, &mut trace)
    }

    /// Differentiable sample: records everything [`Self::backward_sample`]
    /// needs.
    pub fn forward_sample(&self, state: &[f64], noise: &[f64], trace: &mut PolicyTrace) -> Result<ActionSample> {
        if noise.len() != self.action_dim {
            return Err(Error::shape("policy noise", self.action_dim, noise.len()));
        }
        self.forward_head(state, trace)?;
        trace.noise.clear();
        trace.noise.extend_from_slice(noise);

        let mut pre = Vec::with_capacity(self.action_dim);
        let mut action = Vec::with_capacity(self.action_dim);
        let mut log_prob = 0.0;
        for j in 0..self.action_dim {
            let (u, a, lp) = sample_component(trace.mean[j], trace.log_std[j], noise[j], self.squash);
            pre.push(u);
            action.push(a);
            log_prob += lp;
        }
        if !log_prob.is_finite() || action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("policy sample".into()));
        }
        trace.action.clear();
        trace.action.extend_from_slice(&action);
        Ok(ActionSample {
            action,
            pre_squash: pre,
            log_prob,
            noise: noise.to_vec(),
        })
    }

    /// Accumulates into `grad` the parameter gradient of a loss `L(action,
    /// log_prob)` given its partials, for the sample recorded in `trace`.
    pub fn backward_sample(
        &self,
        trace: &mut PolicyTrace,
        dl_daction: &[f64],
        dl_dlogp: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        if dl_daction.len() != self.action_dim {
            return Err(Error::shape(
                "policy action gradient",
                self.action_dim,
                dl_daction.len(),
            ));
        }
        let d = self.action_dim;
        trace.out_grad.clear();
        trace.out_grad.resize(2 * d, 0.0);
        for j in 0..d {
            let (dm, dls) = sample_component_grad(
                trace.action[j],
                trace.log_std[j],
                trace.log_std_free[j],
                trace.noise[j],
                dl_daction[j],
                dl_dlogp,
                self.squash,
            );
            trace.out_grad[j] = dm;
            trace.out_grad[d + j] = dls;
        }
        let PolicyTrace { trunk, out_grad, .. } = trace;
        self.trunk.backward_trace(trunk, out_grad, Some(grad), None)
    }

    /// Exact log-density of `action`, including the tanh change of variables.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mut trace = PolicyTrace::new();
        self.log_prob_trace(state, action, &mut trace)
    }

    fn log_prob_trace(&self, state: &[f64], action: &[f64], trace: &mut PolicyTrace) -> Result<f64> {
        if action.len() != self.action_dim {
            return Err(Error::shape("policy action", self.action_dim, action.len()));
        }
        if self.squash && action.iter().any(|a| !(a.abs() < 1.0)) {
            return Err(Error::invalid(
                "squashed log-density is undefined on or outside the (-1, 1) boundary",
            ));
        }
        self.forward_head(state, trace)?;
        trace.noise.clear();
        let mut log_prob = 0.0;
        for j in 0..self.action_dim {
            let a = action[j];
            let u = if self.squash { a.atanh() } else { a };
            let z = (u - trace.mean[j]) / trace.log_std[j].exp();
            trace.noise.push(z);
            log_prob += -0.5 * z * z - trace.log_std[j] - HALF_LN_2PI;
            if self.squash {
                log_prob -= (1.0 - a * a).ln();
            }
        }
        if !log_prob.is_finite() {
            return Err(Error::NonFinite("policy log-density".into()));
        }
        Ok(log_prob)
    }

    /// Adds `scale * d log_prob(action|state) / d params` into `grad` and
    /// returns the log-density. The action is held fixed.
    pub fn log_prob_grad(&self, state: &[f64], action: &[f64], scale: f64, grad: &mut [f64]) -> Result<f64> {
        let mut trace = PolicyTrace::new();
        self.log_prob_grad_trace(state, action, scale, grad, &mut trace)
    }

    pub fn log_prob_grad_trace(
        &self,
        state: &[f64],
        action: &[f64],
        scale: f64,
        grad: &mut [f64],
        trace: &mut PolicyTrace,
    ) -> Result<f64> {
        let log_prob = self.log_prob_trace(state, action, trace)?;
        let d = self.action_dim;
        trace.out_grad.clear();
        trace.out_grad.resize(2 * d, 0.0);
        for j in 0..d {
            let z = trace.noise[j];
            // d/dmean = z / std, d/dlog_std = z^2 - 1
            trace.out_grad[j] = scale * z / trace.log_std[j].exp();
            if trace.log_std_free[j] {
                trace.out_grad[d + j] = scale * (z * z - 1.0);
            }
        }
        let PolicyTrace { trunk, out_grad, .. } = trace;
        self.trunk.backward_trace(trunk, out_grad, Some(grad), None)?;
        Ok(log_prob)
    }

    /// Closed-form entropy of the pre-squash diagonal Gaussian.
    pub fn entropy(&self, state: &[f64]) -> Result<f64> {
        let (_, log_std) = self.distribution(state)?;
        Ok(gaussian_entropy(&log_std))
    }

    /// Monte-Carlo estimate `-mean(log_prob)` over `samples` draws; this is
    /// the entropy of the squashed distribution when squashing is on.
    pub fn entropy_estimate<R: Rng + ?Sized>(&self, state: &[f64], samples: usize, rng: &mut R) -> Result<f64> {
        if samples == 0 {
            return Err(Error::invalid("entropy estimate needs at least one sample"));
        }
        let mut trace = PolicyTrace::new();
        self.forward_head(state, &mut trace)?;
        let mut total = 0.0;
        for _ in 0..samples {
            let mut lp = 0.0;
            for j in 0..self.action_dim {
                let eps: f64 = rng.sample(StandardNormal);
                let ls = trace.log_std[j];
                lp += -0.5 * eps * eps - ls - HALF_LN_2PI;
                if self.squash {
                    lp -= log_one_minus_tanh_sq(trace.mean[j] + ls.exp() * eps);
                }
            }
            total += lp;
        }
        Ok(-total / samples as f64)
    }

    /// Adds `scale * d entropy / d params` into `grad`; returns the entropy.
    pub fn entropy_grad_trace(
        &self,
        state: &[f64],
        scale: f64,
        grad: &mut [f64],
        trace: &mut PolicyTrace,
    ) -> Result<f64> {
        self.forward_head(state, trace)?;
        let d = self.action_dim;
        trace.out_grad.clear();
        trace.out_grad.resize(2 * d, 0.0);
        for j in 0..d {
            if trace.log_std_free[j] {
                trace.out_grad[d + j] = scale;
            }
        }
        let h = gaussian_entropy(&trace.log_std);
        let PolicyTrace { trunk, out_grad, .. } = trace;
        self.trunk.backward_trace(trunk, out_grad, Some(grad), None)?;
        Ok(h)
    }

    /// Deterministic action `squash(mean(state))`.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut trace = PolicyTrace::new();
        self.forward_mean(state, &mut trace)
    }

    pub fn forward_mean(&self, state: &[f64], trace: &mut PolicyTrace) -> Result<Vec<f64>> {
        self.forward_head(state, trace)?;
        let action: Vec<f64> = if self.squash {
            trace
                .mean
                .iter()
                .map(|m| m.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT))
                .collect()
        } else {
            trace.mean.clone()
        };
        trace.action.clear();
        trace.action.extend_from_slice(&action);
        Ok(action)
    }

    /// Backward for [`Self::forward_mean`]; the log-std head gets no gradient.
    pub fn backward_mean(&self, trace: &mut PolicyTrace, dl_daction: &[f64], grad: &mut [f64]) -> Result<()> {
        if dl_daction.len() != self.action_dim {
            return Err(Error::shape(
                "policy action gradient",
                self.action_dim,
                dl_daction.len(),
            ));
        }
        let d = self.action_dim;
        trace.out_grad.clear();
        trace.out_grad.resize(2 * d, 0.0);
        for j in 0..d {
            let a = trace.action[j];
            trace.out_grad[j] = if self.squash {
                dl_daction[j] * (1.0 - a * a)
            } else {
                dl_daction[j]
            };
        }
        let PolicyTrace { trunk, out_grad, .. } = trace;
        self.trunk.backward_trace(trunk, out_grad, Some(grad), None)
    }
}

/// Scratch state of a batched differentiable sample (all arrays row-major
/// `B x action_dim`).
#[derive(Debug, Clone, Default)]
pub struct PolicyBatchTrace {
    trunk: BatchTrace,
    log_std: Vec<f64>,
    log_std_free: Vec<bool>,
    noise: Vec<f64>,
    action: Vec<f64>,
    out_grad: Vec<f64>,
}

impl PolicyBatchTrace {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Reparameterized samples for a batch of states.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSample {
    /// Row-major `B x action_dim`.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl BatchSample {
    pub fn action(&self, i: usize) -> &[f64] {
        let d = self.actions.len() / self.log_probs.len();
        &self.actions[i * d..(i + 1) * d]
    }
}

impl GaussianPolicy {
    /// Batched [`Self::forward_sample`]: `states` is row-major
    /// `B x state_dim`, `noise` row-major `B x action_dim`.
    pub fn forward_sample_batch(
        &self,
        states: &[f64],
        noise: &[f64],
        trace: &mut PolicyBatchTrace,
    ) -> Result<BatchSample> {
        let (ds, d) = (self.state_dim(), self.action_dim);
        if states.is_empty() || !states.len().is_multiple_of(ds) {
            return Err(Error::shape("policy state batch", ds, states.len()));
        }
        let b = states.len() / ds;
        if noise.len() != b * d {
            return Err(Error::shape("policy noise batch", b * d, noise.len()));
        }
        self.trunk.forward_batch(states, &mut trace.trunk)?;
        trace.log_std.clear();
        trace.log_std_free.clear();
        trace.action.clear();
        trace.noise.clear();
        trace.noise.extend_from_slice(noise);
        let mut log_probs = Vec::with_capacity(b);
        for (row, eps) in trace.trunk.output().chunks_exact(2 * d).zip(noise.chunks_exact(d)) {
            let (mean, raw) = row.split_at(d);
            let mut log_prob = 0.0;
            for j in 0..d {
                let ls = raw[j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let (_, a, lp) = sample_component(mean[j], ls, eps[j], self.squash);
                trace.log_std.push(ls);
                trace.log_std_free.push(raw[j] > LOG_STD_MIN && raw[j] < LOG_STD_MAX);
                trace.action.push(a);
                log_prob += lp;
            }
            log_probs.push(log_prob);
        }
        if log_probs.iter().chain(&trace.action).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy sample".into()));
        }
        Ok(BatchSample {
            actions: trace.action.clone(),
            log_probs,
        })
    }

    pub fn sample_batch(&self, states: &[f64], noise: &[f64]) -> Result<BatchSample> {
        self.forward_sample_batch(states, noise, &mut PolicyBatchTrace::new())
    }

    /// Batched [`Self::backward_sample`]: `dl_daction` is `B x action_dim`,
    /// `dl_dlogp` has one entry per sample.
    pub fn backward_sample_batch(
        &self,
        trace: &mut PolicyBatchTrace,
        dl_daction: &[f64],
        dl_dlogp: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let d = self.action_dim;
        let b = trace.trunk.batch();
        if dl_daction.len() != b * d {
            return Err(Error::shape("policy action gradient batch", b * d, dl_daction.len()));
        }
        if dl_dlogp.len() != b {
            return Err(Error::shape("policy log-prob gradient batch", b, dl_dlogp.len()));
        }
        trace.out_grad.clear();
        trace.out_grad.resize(2 * d * b, 0.0);
        for (i, og) in trace.out_grad.chunks_exact_mut(2 * d).enumerate() {
            for j in 0..d {
                let k = i * d + j;
                let (dm, dls) = sample_component_grad(
                    trace.action[k],
                    trace.log_std[k],
                    trace.log_std_free[k],
                    trace.noise[k],
                    dl_daction[k],
                    dl_dlogp[i],
                    self.squash,
                );
                og[j] = dm;
                og[d + j] = dls;
            }
        }
        let PolicyBatchTrace { trunk, out_grad, .. } = trace;
        self.trunk.backward_batch(trunk, out_grad, Some(grad), None)
    }
}

impl GaussianPolicy {
    /// Batched [`Self::forward_mean`]: returns row-major `B x action_dim`
    /// deterministic actions and keeps the clamped log-stds in `trace`.
    pub fn forward_mean_batch(&self, states: &[f64], trace: &mut PolicyBatchTrace) -> Result<Vec<f64>> {
        let (ds, d) = (self.state_dim(), self.action_dim);
        if states.is_empty() || !states.len().is_multiple_of(ds) {
            return Err(Error::shape("policy state batch", ds, states.len()));
        }
        self.trunk.forward_batch(states, &mut trace.trunk)?;
        trace.log_std.clear();
        trace.log_std_free.clear();
        trace.action.clear();
        trace.noise.clear();
        for row in trace.trunk.output().chunks_exact(2 * d) {
            let (mean, raw) = row.split_at(d);
            for j in 0..d {
                trace.action.push(if self.squash {
                    mean[j].tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT)
                } else {
                    mean[j]
                });
                trace.log_std.push(raw[j].clamp(LOG_STD_MIN, LOG_STD_MAX));
                trace.log_std_free.push(raw[j] > LOG_STD_MIN && raw[j] < LOG_STD_MAX);
            }
        }
        Ok(trace.action.clone())
    }

    /// Closed-form pre-squash entropy of each state of the last
    /// [`Self::forward_mean_batch`].
    pub fn batch_entropies(&self, trace: &PolicyBatchTrace) -> Vec<f64> {
        trace
            .log_std
            .chunks_exact(self.action_dim)
            .map(gaussian_entropy)
            .collect()
    }

    /// Backward for [`Self::forward_mean_batch`] of a loss with partials
    /// `dl_daction` (`B x action_dim`) and `dl_dentropy` per state.
    pub fn backward_mean_entropy_batch(
        &self,
        trace: &mut PolicyBatchTrace,
        dl_daction: &[f64],
        dl_dentropy: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let d = self.action_dim;
        let b = trace.trunk.batch();
        if dl_daction.len() != b * d {
            return Err(Error::shape("policy action gradient batch", b * d, dl_daction.len()));
        }
        trace.out_grad.clear();
        trace.out_grad.resize(2 * d * b, 0.0);
        for (i, og) in trace.out_grad.chunks_exact_mut(2 * d).enumerate() {
            for j in 0..d {
                let k = i * d + j;
                let a = trace.action[k];
                og[j] = if self.squash {
                    dl_daction[k] * (1.0 - a * a)
                } else {
                    dl_daction[k]
                };
                // d entropy / d log_std_j = 1
                if trace.log_std_free[k] {
                    og[d + j] = dl_dentropy;
                }
            }
        }
        let PolicyBatchTrace { trunk, out_grad, .. } = trace;
        self.trunk.backward_batch(trunk, out_grad, Some(grad), None)
    }
}

/// `0.5 * sum_j (1 + ln(2 pi) + 2 log_std_j)`.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| 0.5 * (1.0 + (2.0 * PI).ln()) + ls).sum()
}
