//! Twin soft Q-critics and the soft actor-critic losses.

use rand::Rng;

use crate::agent::Transition;
use crate::error::{Error, Result};
use crate::nn::{polyak_update, BatchTrace, Mlp, Trace};
use crate::policy::{BatchSample, GaussianPolicy, PolicyBatchTrace, PolicyTrace};

/// Two online critics over `state ++ action` and their Polyak-tracked
/// targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub target_q1: Mlp,
    pub target_q2: Mlp,
    gamma: f64,
    alpha: f64,
    tau: f64,
    state_dim: usize,
}

/// A replay batch plus fresh next-state actions from the current policy.
#[derive(Debug, Clone)]
pub struct TdBatch<'a> {
    pub transitions: Vec<&'a Transition>,
    pub next_actions: BatchSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub loss_q1: f64,
    pub loss_q2: f64,
    pub grad_q1: Vec<f64>,
    pub grad_q2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_log_prob: f64,
}

fn concat_into(buf: &mut Vec<f64>, state: &[f64], action: &[f64]) {
    buf.clear();
    buf.extend_from_slice(state);
    buf.extend_from_slice(action);
}

/// Row-major `B x (state ++ action)` critic inputs.
fn critic_inputs<'a>(pairs: impl Iterator<Item = (&'a [f64], &'a [f64])>) -> Vec<f64> {
    let mut buf = Vec::new();
    for (s, a) in pairs {
        buf.extend_from_slice(s);
        buf.extend_from_slice(a);
    }
    buf
}

impl CriticPair {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        gamma: f64,
        alpha: f64,
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let q1 = Mlp::new(&widths, rng)?;
        let q2 = Mlp::new(&widths, rng)?;
        Self::from_online(q1, q2, state_dim, gamma, alpha, tau)
    }

    /// Targets start as exact copies of the online critics.
    pub fn from_online(q1: Mlp, q2: Mlp, state_dim: usize, gamma: f64, alpha: f64, tau: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma = {gamma} outside [0, 1)")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha = {alpha} must be positive")));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid(format!("tau = {tau} outside (0, 1]")));
        }
        if q1.widths() != q2.widths() || q1.output_dim() != 1 || q1.input_dim() <= state_dim {
            return Err(Error::invalid(
                "critics must share widths and map state ++ action to a scalar",
            ));
        }
        Ok(Self {
            target_q1: q1.clone(),
            target_q2: q2.clone(),
            q1,
            q2,
            gamma,
            alpha,
            tau,
            state_dim,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.q1.input_dim() - self.state_dim
    }

    fn eval(net: &Mlp, state: &[f64], action: &[f64]) -> Result<f64> {
        let mut input = Vec::with_capacity(net.input_dim());
        concat_into(&mut input, state, action);
        Ok(net.forward(&input)?[0])
    }

    pub fn q1_value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Self::eval(&self.q1, state, action)
    }

    pub fn q2_value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Self::eval(&self.q2, state, action)
    }

    /// `min(Q1, Q2)` of the online critics.
    pub fn min_q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.q1_value(state, action)?.min(self.q2_value(state, action)?))
    }

    /// `y = r + gamma (1 - done) (min_j Q'_j(s', a') - alpha log pi(a'|s'))`.
    pub fn td_target(&self, batch: &TdBatch<'_>) -> Result<Vec<f64>> {
        let b = batch.transitions.len();
        if b == 0 {
            return Err(Error::invalid("empty TD batch"));
        }
        let next = &batch.next_actions;
        if next.log_probs.len() != b || next.actions.len() != b * self.action_dim() {
            return Err(Error::shape("TD next actions", b, next.log_probs.len()));
        }
        let mut targets: Vec<f64> = batch.transitions.iter().map(|t| t.reward).collect();
        if self.gamma != 0.0 {
            let inputs = critic_inputs(
                batch
                    .transitions
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t.next_state.as_slice(), next.action(i))),
            );
            let mut t1 = BatchTrace::new();
            let mut t2 = BatchTrace::new();
            self.target_q1.forward_batch(&inputs, &mut t1)?;
            self.target_q2.forward_batch(&inputs, &mut t2)?;
            for (i, (y, t)) in targets.iter_mut().zip(&batch.transitions).enumerate() {
                if !t.done {
                    let q = t1.output()[i].min(t2.output()[i]);
                    *y += self.gamma * (q - self.alpha * next.log_probs[i]);
                }
            }
        }
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("TD target".into()));
        }
        Ok(targets)
    }

    /// Mean squared error of each online critic against fixed targets.
    pub fn critic_loss(&self, transitions: &[&Transition], targets: &[f64]) -> Result<CriticLoss> {
        let b = transitions.len();
        if b == 0 {
            return Err(Error::invalid("empty critic batch"));
        }
        if targets.len() != b {
            return Err(Error::shape("critic targets", b, targets.len()));
        }
        let inv_b = 1.0 / b as f64;
        let mut out = CriticLoss {
            loss_q1: 0.0,
            loss_q2: 0.0,
            grad_q1: vec![0.0; self.q1.num_params()],
            grad_q2: vec![0.0; self.q2.num_params()],
        };
        let inputs = critic_inputs(transitions.iter().map(|t| (t.state.as_slice(), t.action.as_slice())));
        let mut trace = BatchTrace::new();
        let mut out_grad = vec![0.0; b];
        for (net, loss, grad) in [
            (&self.q1, &mut out.loss_q1, &mut out.grad_q1),
            (&self.q2, &mut out.loss_q2, &mut out.grad_q2),
        ] {
            net.forward_batch(&inputs, &mut trace)?;
            for ((g, q), y) in out_grad.iter_mut().zip(trace.output()).zip(targets) {
                let err = q - y;
                *loss += err * err * inv_b;
                *g = 2.0 * err * inv_b;
            }
            net.backward_batch(&mut trace, &out_grad, Some(grad), None)?;
        }
        Ok(out)
    }

    /// Reparameterized actor loss `mean_s[alpha log pi(a~|s) - min_j Q_j(s, a~)]`
    /// with `a~` built from the given standard-normal `noise`.
    pub fn policy_loss_reparam(
        &self,
        policy: &GaussianPolicy,
        states: &[&[f64]],
        noise: &[Vec<f64>],
    ) -> Result<PolicyLoss> {
        let b = states.len();
        if b == 0 {
            return Err(Error::invalid("empty policy batch"));
        }
        if noise.len() != b {
            return Err(Error::shape("policy noise batch", b, noise.len()));
        }
        let (ds, da) = (self.state_dim, policy.action_dim());
        let inv_b = 1.0 / b as f64;
        let flat_states: Vec<f64> = states.concat();
        let flat_noise: Vec<f64> = noise.concat();
        let mut ptrace = PolicyBatchTrace::new();
        let smp = policy.forward_sample_batch(&flat_states, &flat_noise, &mut ptrace)?;

        let inputs = critic_inputs((0..b).map(|i| (states[i], smp.action(i))));
        let mut t1 = BatchTrace::new();
        let mut t2 = BatchTrace::new();
        self.q1.forward_batch(&inputs, &mut t1)?;
        self.q2.forward_batch(&inputs, &mut t2)?;

        // route the gradient through whichever critic attains the min
        let mut pick1 = vec![0.0; b];
        let mut pick2 = vec![0.0; b];
        let mut loss = 0.0;
        for i in 0..b {
            let (q1, q2) = (t1.output()[i], t2.output()[i]);
            if q1 <= q2 {
                pick1[i] = 1.0;
            } else {
                pick2[i] = 1.0;
            }
            loss += (self.alpha * smp.log_probs[i] - q1.min(q2)) * inv_b;
        }
        let mut g1 = vec![0.0; b * (ds + da)];
        let mut g2 = vec![0.0; b * (ds + da)];
        self.q1.backward_batch(&mut t1, &pick1, None, Some(&mut g1))?;
        self.q2.backward_batch(&mut t2, &pick2, None, Some(&mut g2))?;

        let mut dl_da = Vec::with_capacity(b * da);
        for (r1, r2) in g1.chunks_exact(ds + da).zip(g2.chunks_exact(ds + da)) {
            for (x, y) in r1[ds..].iter().zip(&r2[ds..]) {
                dl_da.push(-(x + y) * inv_b);
            }
        }
        let mut grad = vec![0.0; policy.num_params()];
        policy.backward_sample_batch(&mut ptrace, &dl_da, &vec![self.alpha * inv_b; b], &mut grad)?;
        Ok(PolicyLoss {
            loss,
            grad,
            mean_log_prob: smp.log_probs.iter().sum::<f64>() * inv_b,
        })
    }

    /// Score-function actor loss `-mean[Q1(s, a) log pi(a|s)]` over replayed
    /// actions. Its gradient is the negated estimator
    /// `mean[grad log pi(a|s) Q1(s, a)]`: no baseline, no entropy bonus.
    pub fn policy_loss_score_function(
        &self,
        policy: &GaussianPolicy,
        transitions: &[&Transition],
    ) -> Result<PolicyLoss> {
        let b = transitions.len();
        if b == 0 {
            return Err(Error::invalid("empty policy batch"));
        }
        let inv_b = 1.0 / b as f64;
        let mut grad = vec![0.0; policy.num_params()];
        let mut loss = 0.0;
        let mut mean_log_prob = 0.0;
        let mut ptrace = PolicyTrace::new();
        let mut input = Vec::with_capacity(self.q1.input_dim());
        let mut trace = Trace::new();
        for t in transitions {
            concat_into(&mut input, &t.state, &t.action);
            self.q1.forward_trace(&input, &mut trace)?;
            let q = trace.output()[0];
            let lp = policy.log_prob_grad_trace(&t.state, &t.action, -q * inv_b, &mut grad, &mut ptrace)?;
            loss -= q * lp * inv_b;
            mean_log_prob += lp * inv_b;
        }
        Ok(PolicyLoss {
            loss,
            grad,
            mean_log_prob,
        })
    }

    /// Polyak step of both targets toward the online critics.
    pub fn soft_update(&mut self) -> Result<()> {
        polyak_update(self.target_q1.params_mut(), self.q1.params(), self.tau)?;
        polyak_update(self.target_q2.params_mut(), self.q2.params(), self.tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn critics(seed: u64, gamma: f64) -> CriticPair {
        CriticPair::new(3, 1, &[16, 16], gamma, 0.2, 0.005, &mut rng(seed)).unwrap()
    }

    fn transition(r: &mut ChaCha8Rng, done: bool) -> Transition {
        Transition {
            state: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
            action: vec![r.random_range(-0.9..0.9)],
            reward: r.random_range(-2.0..0.0),
            next_state: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
            done,
            skill_index: 0,
        }
    }

    fn zero_critics(gamma: f64, alpha: f64) -> CriticPair {
        let q = Mlp::zeros(&[4, 8, 1]).unwrap();
        CriticPair::from_online(q.clone(), q, 3, gamma, alpha, 0.005).unwrap()
    }

    #[test]
    fn rejects_out_of_range_hyperparameters() {
        let q = Mlp::zeros(&[4, 1]).unwrap();
        assert!(CriticPair::from_online(q.clone(), q.clone(), 3, 1.0, 0.2, 0.5).is_err());
        assert!(CriticPair::from_online(q.clone(), q.clone(), 3, 0.9, 0.0, 0.5).is_err());
        assert!(CriticPair::from_online(q.clone(), q.clone(), 3, 0.9, 0.2, 0.0).is_err());
        assert!(CriticPair::from_online(q.clone(), q, 3, 0.9, 0.2, 1.0).is_ok());
    }

    #[test]
    fn targets_start_equal_to_online() {
        let c = critics(1, 0.99);
        assert_eq!(c.q1.params(), c.target_q1.params());
        assert_eq!(c.q2.params(), c.target_q2.params());
    }

    #[test]
    fn zero_gamma_target_is_reward() {
        let c = critics(2, 0.0);
        let mut r = rng(3);
        let ts: Vec<Transition> = (0..5).map(|_| transition(&mut r, false)).collect();
        let batch = TdBatch {
            transitions: ts.iter().collect(),
            next_actions: BatchSample {
                actions: vec![0.1; 5],
                log_probs: vec![-3.0; 5],
            },
        };
        let y = c.td_target(&batch).unwrap();
        assert_eq!(y, ts.iter().map(|t| t.reward).collect::<Vec<_>>());
    }

    #[test]
    fn done_stops_bootstrap() {
        let c = critics(4, 0.99);
        let mut r = rng(5);
        let t = transition(&mut r, true);
        let batch = TdBatch {
            transitions: vec![&t],
            next_actions: BatchSample {
                actions: vec![0.5],
                log_probs: vec![1.0],
            },
        };
        assert_eq!(c.td_target(&batch).unwrap(), vec![t.reward]);
    }

    #[test]
    fn zero_networks_target_uses_gaussian_density() {
        let c = zero_critics(0.9, 1.0);
        let policy = GaussianPolicy::from_trunk(Mlp::zeros(&[3, 8, 2]).unwrap(), false).unwrap();
        let mut r = rng(6);
        let t = transition(&mut r, false);
        let batch = TdBatch {
            transitions: vec![&t],
            next_actions: policy.sample_batch(&t.next_state, &[0.8]).unwrap(),
        };
        let y = c.td_target(&batch).unwrap()[0];
        let log_density = -0.5 * 0.64 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((y - (t.reward + 0.9 * (0.0 - log_density))).abs() < 1e-12);
    }

    #[test]
    fn critic_loss_zero_when_exact() {
        let c = critics(7, 0.99);
        let mut r = rng(8);
        let ts: Vec<Transition> = (0..4).map(|_| transition(&mut r, false)).collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let q1: Vec<f64> = ts.iter().map(|t| c.q1_value(&t.state, &t.action).unwrap()).collect();
        let loss = c.critic_loss(&refs, &q1).unwrap();
        // batched and per-sample passes may round differently
        assert!(loss.loss_q1 < 1e-28);
        assert!(loss.grad_q1.iter().all(|g| g.abs() < 1e-13));
        assert!(loss.loss_q2 > 0.0);
        assert!(c.critic_loss(&refs, &q1[..2]).is_err());
    }

    #[test]
    fn critic_loss_hand_example() {
        // Q = 2 everywhere via the output bias, y = 0
        let mut q = Mlp::zeros(&[4, 1]).unwrap();
        *q.params_mut().values_mut().last_mut().unwrap() = 2.0;
        let c = CriticPair::from_online(q.clone(), q, 3, 0.9, 0.2, 0.5).unwrap();
        let mut r = rng(9);
        let t = transition(&mut r, false);
        let loss = c.critic_loss(&[&t], &[0.0]).unwrap();
        assert_eq!(loss.loss_q1, 4.0);
        // dL/dQ = 4 shows up directly on the output bias
        assert_eq!(*loss.grad_q1.last().unwrap(), 4.0);
    }

    #[test]
    fn critic_loss_ignores_targets() {
        let c = critics(10, 0.99);
        let mut r = rng(11);
        let ts: Vec<Transition> = (0..4).map(|_| transition(&mut r, false)).collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let y = [0.1, -0.3, 0.5, 1.0];
        let base = c.critic_loss(&refs, &y).unwrap();
        let mut moved = c.clone();
        for v in moved.target_q1.params_mut().values_mut() {
            *v += 0.3;
        }
        assert_eq!(moved.critic_loss(&refs, &y).unwrap(), base);
    }

    #[test]
    fn critic_loss_gradient_matches_finite_differences() {
        let c = critics(12, 0.99);
        let mut r = rng(13);
        let ts: Vec<Transition> = (0..6).map(|_| transition(&mut r, false)).collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let y: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let loss = c.critic_loss(&refs, &y).unwrap();
        let h = 1e-5;
        let num: Vec<f64> = (0..c.q2.num_params())
            .map(|i| {
                let mut a = c.clone();
                a.q2.params_mut().values_mut()[i] += h;
                let mut b = c.clone();
                b.q2.params_mut().values_mut()[i] -= h;
                (a.critic_loss(&refs, &y).unwrap().loss_q2 - b.critic_loss(&refs, &y).unwrap().loss_q2) / (2.0 * h)
            })
            .collect();
        let diff: f64 = num
            .iter()
            .zip(&loss.grad_q2)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = num.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-4);
    }

    #[test]
    fn constant_critic_without_entropy_gives_no_signal() {
        let q = Mlp::zeros(&[4, 8, 1]).unwrap();
        let mut c = CriticPair::from_online(q.clone(), q, 3, 0.9, 1.0, 0.5).unwrap();
        c.alpha = 0.0;
        let mut r = rng(14);
        let policy = GaussianPolicy::new(3, 1, &[8], true, &mut r).unwrap();
        let states: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let noise: Vec<Vec<f64>> = (0..8).map(|_| vec![r.sample(StandardNormal)]).collect();
        let out = c.policy_loss_reparam(&policy, &refs, &noise).unwrap();
        assert!(out.grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn linear_critic_pushes_mean_along_weight() {
        // Q(s, a) = 1.5 * a, alpha = 0: descent direction must raise the mean
        let mut q = Mlp::zeros(&[4, 1]).unwrap();
        q.params_mut().values_mut()[3] = 1.5;
        let mut c = CriticPair::from_online(q.clone(), q, 3, 0.9, 1.0, 0.5).unwrap();
        c.alpha = 0.0;
        let trunk = Mlp::zeros(&[3, 2]).unwrap();
        let policy = GaussianPolicy::from_trunk(trunk, false).unwrap();
        let s = [0.2, 0.1, -0.4];
        let out = c.policy_loss_reparam(&policy, &[&s], &[vec![0.3]]).unwrap();
        // mean bias is the parameter right after the 2x3 weight block
        let mean_bias_grad = out.grad[6];
        assert!((mean_bias_grad + 1.5).abs() < 1e-12);
        // d/dlog_std = -1.5 * std * eps
        assert!((out.grad[7] + 1.5 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn reparam_policy_gradient_matches_finite_differences() {
        let c = critics(15, 0.99);
        let mut r = rng(16);
        let policy = GaussianPolicy::new(3, 1, &[16, 16], true, &mut r).unwrap();
        let states: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let noise: Vec<Vec<f64>> = (0..5).map(|_| vec![r.sample(StandardNormal)]).collect();
        let out = c.policy_loss_reparam(&policy, &refs, &noise).unwrap();
        let h = 1e-5;
        let num: Vec<f64> = (0..policy.num_params())
            .map(|i| {
                let mut a = policy.clone();
                a.trunk_mut().params_mut().values_mut()[i] += h;
                let mut b = policy.clone();
                b.trunk_mut().params_mut().values_mut()[i] -= h;
                (c.policy_loss_reparam(&a, &refs, &noise).unwrap().loss
                    - c.policy_loss_reparam(&b, &refs, &noise).unwrap().loss)
                    / (2.0 * h)
            })
            .collect();
        let diff: f64 = num
            .iter()
            .zip(&out.grad)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = num.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-4);
    }

    fn constant_q(value: f64) -> CriticPair {
        let mut q = Mlp::zeros(&[4, 1]).unwrap();
        *q.params_mut().values_mut().last_mut().unwrap() = value;
        CriticPair::from_online(q.clone(), q, 3, 0.9, 0.2, 0.5).unwrap()
    }

    #[test]
    fn score_function_zero_q_zero_gradient() {
        let c = constant_q(0.0);
        let mut r = rng(17);
        let policy = GaussianPolicy::new(3, 1, &[8], true, &mut r).unwrap();
        let ts: Vec<Transition> = (0..8).map(|_| transition(&mut r, false)).collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let out = c.policy_loss_score_function(&policy, &refs).unwrap();
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn score_function_unit_q_has_zero_mean() {
        // actions drawn from the policy itself: E[grad log pi] = 0
        let c = constant_q(1.0);
        let trunk = Mlp::zeros(&[3, 2]).unwrap();
        let mut policy = GaussianPolicy::from_trunk(trunk, false).unwrap();
        {
            let p = policy.trunk_mut().params_mut().values_mut();
            p[6] = 0.4;
            p[7] = -0.5;
        }
        let mut r = rng(18);
        let n = 10_000;
        let s = vec![0.1, 0.2, 0.3];
        let ts: Vec<Transition> = (0..n)
            .map(|_| Transition {
                state: s.clone(),
                action: policy.sample(&s, &mut r).unwrap().action,
                reward: 0.0,
                next_state: s.clone(),
                done: false,
                skill_index: 0,
            })
            .collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let out = c.policy_loss_score_function(&policy, &refs).unwrap();
        // mean-bias score z/sigma has variance 1/sigma^2; log-std score z^2-1 has variance 2
        let sigma = (-0.5f64).exp();
        let se_mean = (1.0 / (sigma * sigma) / n as f64).sqrt();
        let se_std = (2.0 / n as f64).sqrt();
        assert!(out.grad[6].abs() < 3.0 * se_mean, "{}", out.grad[6]);
        assert!(out.grad[7].abs() < 3.0 * se_std, "{}", out.grad[7]);
    }

    #[test]
    fn score_function_single_transition_by_hand() {
        let c = constant_q(2.5);
        let trunk = Mlp::zeros(&[3, 2]).unwrap();
        let mut policy = GaussianPolicy::from_trunk(trunk, false).unwrap();
        {
            let p = policy.trunk_mut().params_mut().values_mut();
            p[6] = 0.2; // mean
            p[7] = 0.1; // log std
        }
        let t = Transition {
            state: vec![0.0; 3],
            action: vec![0.9],
            reward: 0.0,
            next_state: vec![0.0; 3],
            done: false,
            skill_index: 0,
        };
        let out = c.policy_loss_score_function(&policy, &[&t]).unwrap();
        let sigma = 0.1f64.exp();
        let z = (0.9 - 0.2) / sigma;
        assert!((out.grad[6] + 2.5 * z / sigma).abs() < 1e-12);
        assert!((out.grad[7] + 2.5 * (z * z - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn soft_update_contracts_geometrically() {
        let mut c = critics(19, 0.99);
        let mut r = rng(20);
        for v in c.q1.params_mut().values_mut() {
            *v += r.random_range(-1.0..1.0);
        }
        let dist = |c: &CriticPair| -> f64 {
            c.q1.params()
                .values()
                .iter()
                .zip(c.target_q1.params().values())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut prev = dist(&c);
        for _ in 0..50 {
            c.soft_update().unwrap();
            let d = dist(&c);
            assert!((d - (1.0 - c.tau()) * prev).abs() < 1e-9 * prev.max(1e-12) + 1e-15);
            prev = d;
        }
    }
}
