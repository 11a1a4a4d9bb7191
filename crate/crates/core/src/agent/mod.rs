//! The SDSRA / SAC agent and its training loop.
//!
//! Per environment step the agent samples a skill from the relevance
//! softmax, acts with that skill, and stores the transition tagged with the
//! skill index. Gradient steps update the twin critics and the global policy
//! exactly as in SAC. Every `skill_update_interval` steps a skill phase
//! distills the global policy into each skill on its own visitation data and
//! re-scores the skills by the critics' value of their recent actions.
//!
//! In SAC mode there is a single "skill" which is the global policy itself.
//! The same holds in SDSRA mode when skill phases are disabled: skills with
//! no update rule of their own act with the global policy's parameters, so a
//! one-skill SDSRA run with phases off reproduces SAC bit for bit.
//!
//! # Random streams
//!
//! All randomness derives from `config.seed` through independent ChaCha8
//! streams (`seed_from_u64(seed)` then `set_stream(k)`):
//!
//! | k | use |
//! |---|-----|
//! | 0 | critic and global-policy initialization |
//! | 1 | skill network initialization |
//! | 2 | action noise and warm-up actions |
//! | 3 | skill selection |
//! | 4 | gradient steps (batches, next actions, policy noise) |
//! | 5 | skill-phase batches |
//! | 6 | logged diagnostics (entropy, integrated objective) |
//! | 7 | training episode reset seeds |
//! | 8 | evaluation episode reset seeds |

mod config;
mod replay;
mod run_log;

pub use config::{AgentConfig, EvalPolicy, Mode, PolicyLossKind, MAX_SKILLS};
pub use replay::{ReplayBuffer, Transition};
pub use run_log::{EvalRecord, LogRecord, RunLog};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::envs::{Env, EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::nn::{load_params, save_params, AdamState, ArrayDesc, Mlp, ParamVector};
use crate::policy::GaussianPolicy;
use crate::sac::{CriticPair, TdBatch};
use crate::skills::{skill_loss, SkillSet};

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
struct Streams {
    act: ChaCha8Rng,
    select: ChaCha8Rng,
    update: ChaCha8Rng,
    skill: ChaCha8Rng,
    diag: ChaCha8Rng,
    env: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            act: rng_stream(seed, 2),
            select: rng_stream(seed, 3),
            update: rng_stream(seed, 4),
            skill: rng_stream(seed, 5),
            diag: rng_stream(seed, 6),
            env: rng_stream(seed, 7),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub loss_q1: f64,
    pub loss_q2: f64,
    pub loss_pi: f64,
    pub mean_log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillPhaseReport {
    /// Skill loss after the last distillation step, per skill (None if the
    /// skill had no tagged data).
    pub losses: Vec<Option<f64>>,
    pub performance: Vec<Option<f64>>,
    pub relevance: Vec<f64>,
}

/// Pieces of the logged integrated objective
/// `sum_i P(i) * (mean min Q(s, a_i) + alpha * mean H(pi_i(.|s)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedObjective {
    pub probs: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub mean_entropy: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub total_steps: usize,
    pub log_interval: usize,
    /// Env steps between evaluations; 0 disables them.
    pub eval_interval: usize,
    pub eval_episodes: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            total_steps: 30_000,
            log_interval: 1000,
            eval_interval: 1000,
            eval_episodes: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    spec: EnvSpec,
    critics: CriticPair,
    policy: GaussianPolicy,
    skills: SkillSet,
    q1_opt: AdamState,
    q2_opt: AdamState,
    policy_opt: AdamState,
    skill_opts: Vec<AdamState>,
    buffer: ReplayBuffer,
    rng: Streams,
    env_steps: usize,
    grad_steps: usize,
}

impl Agent {
    pub fn new(config: AgentConfig, spec: &EnvSpec) -> Result<Self> {
        config.validate()?;
        let (ds, da) = (spec.state_dim, spec.action_dim);
        let mut init = rng_stream(config.seed, 0);
        let critics = CriticPair::new(
            ds,
            da,
            &config.hidden,
            config.gamma,
            config.alpha,
            config.tau,
            &mut init,
        )?;
        let policy = GaussianPolicy::new(ds, da, &config.hidden, config.squash, &mut init)?;

        let n = config.effective_skills();
        let mut skill_init = rng_stream(config.seed, 1);
        let skill_policies = (0..n)
            .map(|_| GaussianPolicy::new(ds, da, &config.hidden, config.squash, &mut skill_init))
            .collect::<Result<Vec<_>>>()?;
        let skills = SkillSet::new(
            skill_policies,
            config.initial_relevance,
            config.beta,
            config.temperature,
        )?;

        let q_params = critics.q1.num_params();
        let p_params = policy.num_params();
        Ok(Self {
            q1_opt: AdamState::new(q_params, config.lr),
            q2_opt: AdamState::new(q_params, config.lr),
            policy_opt: AdamState::new(p_params, config.lr),
            skill_opts: (0..n).map(|_| AdamState::new(p_params, config.skill_lr)).collect(),
            buffer: ReplayBuffer::new(config.buffer_capacity, ds, da)?,
            rng: Streams::new(config.seed),
            env_steps: 0,
            grad_steps: 0,
            spec: spec.clone(),
            critics,
            policy,
            skills,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn critics(&self) -> &CriticPair {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut CriticPair {
        &mut self.critics
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut GaussianPolicy {
        &mut self.policy
    }

    pub fn skills(&self) -> &SkillSet {
        &self.skills
    }

    pub fn skills_mut(&mut self) -> &mut SkillSet {
        &mut self.skills
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn grad_steps(&self) -> usize {
        self.grad_steps
    }

    /// Skills act with their own networks only when they have an update
    /// rule; otherwise they are the global policy.
    fn skills_tied(&self) -> bool {
        !self.config.skill_phases_enabled()
    }

    /// The policy skill `i` acts with.
    pub fn acting_policy(&self, skill: usize) -> &GaussianPolicy {
        if self.skills_tied() {
            &self.policy
        } else {
            &self.skills.skill(skill).policy
        }
    }

    fn relevance_snapshot(&self) -> Vec<f64> {
        match self.config.mode {
            Mode::Sac => vec![0.0],
            Mode::Sdsra => self.skills.relevance(),
        }
    }

    /// Picks a skill by relevance and samples its action in `(-1, 1)^d`.
    pub fn act(&mut self, state: &[f64]) -> Result<(Vec<f64>, usize)> {
        if state.len() != self.spec.state_dim {
            return Err(Error::shape("agent state", self.spec.state_dim, state.len()));
        }
        let skill = match self.config.mode {
            Mode::Sac => 0,
            Mode::Sdsra => self.skills.select_skill(&mut self.rng.select),
        };
        let sample = if self.skills_tied() {
            self.policy.sample(state, &mut self.rng.act)?
        } else {
            self.skills.skill(skill).policy.sample(state, &mut self.rng.act)?
        };
        Ok((sample.action, skill))
    }

    /// Uniform warm-up action; SDSRA still draws (and tags) a skill.
    pub fn random_action(&mut self) -> (Vec<f64>, usize) {
        let skill = match self.config.mode {
            Mode::Sac => 0,
            Mode::Sdsra => self.skills.select_skill(&mut self.rng.select),
        };
        let action = (0..self.spec.action_dim)
            .map(|_| self.rng.act.random_range(-1.0..1.0))
            .collect();
        (action, skill)
    }

    pub fn store(&mut self, transition: Transition) -> Result<()> {
        if transition.skill_index >= self.skills.len() {
            return Err(Error::invalid(format!(
                "skill index {} but only {} skills exist",
                transition.skill_index,
                self.skills.len()
            )));
        }
        self.buffer.store(transition)
    }

    /// One critic update, one actor update and one target update. Returns
    /// `None` (and does nothing) while the buffer holds fewer than a batch.
    /// Any non-finite value aborts with [`Error::Diverged`] and a state dump.
    pub fn gradient_step(&mut self) -> Result<Option<LossRecord>> {
        let out = self.gradient_step_inner();
        self.diverged_on_non_finite(out)
    }

    fn diverged_on_non_finite<T>(&self, out: Result<T>) -> Result<T> {
        match out {
            Err(Error::NonFinite(what)) => Err(Error::Diverged {
                step: self.env_steps,
                message: format!("non-finite {what}\n{}", self.state_dump()),
            }),
            other => other,
        }
    }

    fn gradient_step_inner(&mut self) -> Result<Option<LossRecord>> {
        let b = self.config.batch_size;
        if self.buffer.len() < b {
            log::debug!("gradient step skipped: {} transitions < batch {b}", self.buffer.len());
            return Ok(None);
        }
        let Self {
            critics,
            policy,
            buffer,
            rng,
            q1_opt,
            q2_opt,
            policy_opt,
            config,
            ..
        } = self;
        let batch = buffer.sample(b, &mut rng.update);
        let next_states: Vec<f64> = batch.iter().flat_map(|t| t.next_state.iter().copied()).collect();
        let next_noise: Vec<f64> = (0..b * policy.action_dim())
            .map(|_| rng.update.sample(StandardNormal))
            .collect();
        let next_actions = policy.sample_batch(&next_states, &next_noise)?;
        let td = TdBatch {
            transitions: batch,
            next_actions,
        };
        let targets = critics.td_target(&td)?;
        let closs = critics.critic_loss(&td.transitions, &targets)?;
        q1_opt.step(critics.q1.params_mut().values_mut(), &closs.grad_q1)?;
        q2_opt.step(critics.q2.params_mut().values_mut(), &closs.grad_q2)?;

        let ploss = match config.policy_loss {
            PolicyLossKind::Reparam => {
                let states: Vec<&[f64]> = td.transitions.iter().map(|t| t.state.as_slice()).collect();
                let noise: Vec<Vec<f64>> = (0..b)
                    .map(|_| {
                        (0..policy.action_dim())
                            .map(|_| rng.update.sample(StandardNormal))
                            .collect()
                    })
                    .collect();
                critics.policy_loss_reparam(policy, &states, &noise)?
            }
            PolicyLossKind::ScoreFunction => critics.policy_loss_score_function(policy, &td.transitions)?,
        };
        policy_opt.step(policy.trunk_mut().params_mut().values_mut(), &ploss.grad)?;
        critics.soft_update()?;
        self.grad_steps += 1;

        let record = LossRecord {
            loss_q1: closs.loss_q1,
            loss_q2: closs.loss_q2,
            loss_pi: ploss.loss,
            mean_log_prob: ploss.mean_log_prob,
        };
        if ![record.loss_q1, record.loss_q2, record.loss_pi]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite(format!("loss {record:?}")));
        }
        Ok(Some(record))
    }

    /// Distills the global policy into each skill on its own tagged data,
    /// then re-scores skills by the critics' value of their recent actions.
    pub fn skill_update_phase(&mut self) -> Result<SkillPhaseReport> {
        let out = self.skill_update_phase_inner();
        self.diverged_on_non_finite(out)
    }

    fn skill_update_phase_inner(&mut self) -> Result<SkillPhaseReport> {
        let n = self.skills.len();
        let mut report = SkillPhaseReport {
            losses: vec![None; n],
            performance: vec![None; n],
            relevance: self.skills.relevance(),
        };
        if !self.config.skill_phases_enabled() {
            return Ok(report);
        }

        let mut tagged: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..self.buffer.len() {
            tagged[self.buffer.get(i).skill_index].push(i);
        }
        let m = self.config.batch_size;
        for (i, idx) in tagged.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            for _ in 0..self.config.skill_grad_steps {
                let states: Vec<Vec<f64>> = (0..m.min(idx.len()))
                    .map(|_| {
                        self.buffer
                            .get(idx[self.rng.skill.random_range(0..idx.len())])
                            .state
                            .clone()
                    })
                    .collect();
                let targets = states
                    .iter()
                    .map(|s| self.policy.mean_action(s))
                    .collect::<Result<Vec<_>>>()?;
                let beta = self.skills.beta;
                let skill = self.skills.skill_mut(i);
                let out = skill_loss(&skill.policy, &states, &targets, beta)?;
                if !out.loss.is_finite() {
                    return Err(Error::NonFinite(format!("skill loss for skill {i}")));
                }
                self.skill_opts[i].step(skill.policy.trunk_mut().params_mut().values_mut(), &out.grad)?;
                report.losses[i] = Some(out.loss);
            }
        }

        let window = self.config.skill_update_interval;
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for t in self.buffer.recent(window) {
            sums[t.skill_index] += self.critics.min_q(&t.state, &t.action)?;
            counts[t.skill_index] += 1;
        }
        for i in 0..n {
            if counts[i] > 0 {
                report.performance[i] = Some(sums[i] / counts[i] as f64);
            }
        }
        self.skills.update_relevance(&report.performance, self.config.eta)?;
        report.relevance = self.skills.relevance();
        Ok(report)
    }

    fn diag_states(&mut self) -> Vec<Vec<f64>> {
        let b = self.config.batch_size.min(self.buffer.len());
        (0..b)
            .map(|_| {
                let i = self.rng.diag.random_range(0..self.buffer.len());
                self.buffer.get(i).state.clone()
            })
            .collect()
    }

    /// Log-density of `action` under the acting mixture
    /// `sum_i P(i) pi_i(a|s)`.
    pub fn mixture_log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let probs = self.selection_probs();
        let mut terms = Vec::with_capacity(probs.len());
        for (i, p) in probs.iter().enumerate() {
            if *p > 0.0 {
                terms.push(p.ln() + self.acting_policy(i).log_prob(state, action)?);
            }
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
    }

    pub fn selection_probs(&self) -> Vec<f64> {
        match self.config.mode {
            Mode::Sac => vec![1.0],
            Mode::Sdsra => self.skills.selection_probs(),
        }
    }

    /// Monte-Carlo entropy of the acting policy (one draw per state).
    fn behavior_entropy<R: Rng + ?Sized>(&self, states: &[Vec<f64>], rng: &mut R) -> Result<f64> {
        let n = self.skills.len();
        let mut total = 0.0;
        for s in states {
            let skill = if n == 1 { 0 } else { self.skills.select_skill(rng) };
            let sample = self.acting_policy(skill).sample(s, rng)?;
            total -= if n == 1 {
                sample.log_prob
            } else {
                self.mixture_log_prob(s, &sample.action)?
            };
        }
        Ok(total / states.len() as f64)
    }

    /// Integrated objective estimate on `states`, with `noise[i][m]` the
    /// standard-normal draw for skill `i` at state `m`.
    pub fn integrated_objective(&self, states: &[Vec<f64>], noise: &[Vec<Vec<f64>>]) -> Result<IntegratedObjective> {
        let probs = self.selection_probs();
        if noise.len() != probs.len() {
            return Err(Error::shape("integrated objective noise", probs.len(), noise.len()));
        }
        if states.is_empty() {
            return Err(Error::invalid("integrated objective needs states"));
        }
        let inv = 1.0 / states.len() as f64;
        let mut mean_q = Vec::with_capacity(probs.len());
        let mut mean_entropy = Vec::with_capacity(probs.len());
        for (i, eps) in noise.iter().enumerate() {
            let pol = self.acting_policy(i);
            let mut q = 0.0;
            let mut h = 0.0;
            for (s, e) in states.iter().zip(eps) {
                let a = pol.sample_with_noise(s, e)?.action;
                q += self.critics.min_q(s, &a)?;
                h += pol.entropy(s)?;
            }
            mean_q.push(q * inv);
            mean_entropy.push(h * inv);
        }
        let alpha = self.config.alpha;
        let total = probs
            .iter()
            .zip(mean_q.iter().zip(&mean_entropy))
            .map(|(p, (q, h))| p * (q + alpha * h))
            .sum();
        Ok(IntegratedObjective {
            probs,
            mean_q,
            mean_entropy,
            total,
        })
    }

    /// `(entropy, integrated objective)` on a fresh diagnostic batch.
    fn diagnostics(&mut self) -> Result<Option<(f64, f64)>> {
        if self.buffer.is_empty() {
            return Ok(None);
        }
        let states = self.diag_states();
        let mut rng = self.rng.diag.clone();
        let entropy = self.behavior_entropy(&states, &mut rng)?;
        let noise: Vec<Vec<Vec<f64>>> = (0..self.skills.len())
            .map(|_| {
                states
                    .iter()
                    .map(|_| (0..self.spec.action_dim).map(|_| rng.sample(StandardNormal)).collect())
                    .collect()
            })
            .collect();
        let j = self.integrated_objective(&states, &noise)?.total;
        self.rng.diag = rng;
        Ok(Some((entropy, j)))
    }

    fn state_dump(&self) -> String {
        format!(
            "env_steps={} grad_steps={} relevance={:?} buffer={} policy_finite={} q1_finite={} q2_finite={}",
            self.env_steps,
            self.grad_steps,
            self.skills.relevance(),
            self.buffer.len(),
            self.policy.trunk().params().is_finite(),
            self.critics.q1.params().is_finite(),
            self.critics.q2.params().is_finite(),
        )
    }

    /// Runs `opts.total_steps` environment steps of the training loop.
    pub fn train(&mut self, env: &mut Env, opts: &TrainOptions) -> Result<RunLog> {
        if env.spec() != &self.spec {
            return Err(Error::invalid(format!(
                "agent was built for a different env than {}",
                env.kind()
            )));
        }
        if opts.log_interval == 0 {
            return Err(Error::invalid("log_interval must be positive"));
        }
        let mut log = RunLog::new(self.config.effective_skills());
        if opts.total_steps == 0 {
            return Ok(log);
        }
        let eval_seed = rng_stream(self.config.seed, 8).random::<u64>();
        let mut episode = 0usize;
        let mut episode_return = 0.0;
        let mut state = env.reset(self.rng.env.random());
        let (mut loss_sum, mut loss_count) = ([0.0; 3], 0usize);

        for _ in 0..opts.total_steps {
            let (action, skill) = if self.env_steps < self.config.warmup_steps {
                self.random_action()
            } else {
                self.act(&state)?
            };
            let out = env.step(&self.spec.scale_action(&action))?;
            episode_return += out.reward;
            self.store(Transition {
                state: std::mem::take(&mut state),
                action,
                reward: out.reward,
                next_state: out.state.clone(),
                done: false,
                skill_index: skill,
            })?;
            self.env_steps += 1;

            let ready = self.env_steps >= self.config.warmup_steps;
            if ready && self.env_steps.is_multiple_of(self.config.env_steps_per_iter) {
                for _ in 0..self.config.grad_steps_per_iter {
                    if let Some(l) = self.gradient_step()? {
                        loss_sum[0] += l.loss_q1;
                        loss_sum[1] += l.loss_q2;
                        loss_sum[2] += l.loss_pi;
                        loss_count += 1;
                    }
                }
            }
            if self.config.skill_phases_enabled() && self.env_steps.is_multiple_of(self.config.skill_update_interval) {
                self.skill_update_phase()?;
            }

            let log_now = self.env_steps.is_multiple_of(opts.log_interval);
            if out.done || log_now {
                let mut record = LogRecord {
                    step: self.env_steps,
                    episode,
                    episode_return: out.done.then_some(episode_return),
                    entropy: None,
                    active_skill: skill,
                    loss_q1: None,
                    loss_q2: None,
                    loss_pi: None,
                    j_integrated: None,
                    relevance: self.relevance_snapshot(),
                };
                if log_now {
                    if let Some((h, j)) = self.diagnostics()? {
                        record.entropy = Some(h);
                        record.j_integrated = Some(j);
                    }
                    if loss_count > 0 {
                        let c = loss_count as f64;
                        record.loss_q1 = Some(loss_sum[0] / c);
                        record.loss_q2 = Some(loss_sum[1] / c);
                        record.loss_pi = Some(loss_sum[2] / c);
                    }
                    loss_sum = [0.0; 3];
                    loss_count = 0;
                }
                log.records.push(record);
            }
            if opts.eval_interval > 0 && self.env_steps.is_multiple_of(opts.eval_interval) {
                let eval = self.evaluate(env.kind(), opts.eval_episodes, eval_seed)?;
                log.evals.push(EvalRecord {
                    step: self.env_steps,
                    mean_return: eval.mean_return,
                    mean_entropy: eval.mean_entropy,
                });
            }

            if out.done {
                episode += 1;
                episode_return = 0.0;
                state = env.reset(self.rng.env.random());
            } else {
                state = out.state;
            }
        }
        Ok(log)
    }

    /// Deterministic rollouts with the evaluation policy; mutates nothing.
    /// Episode `e` starts from reset seed number `e` of the stream seeded by
    /// `seed`, so repeated evaluations see the same start states.
    pub fn evaluate(&self, kind: EnvKind, episodes: usize, seed: u64) -> Result<EvalResult> {
        if episodes == 0 {
            return Err(Error::invalid("evaluation needs at least one episode"));
        }
        let mut env = kind.make();
        if env.spec() != &self.spec {
            return Err(Error::invalid(format!(
                "agent was built for a different env than {kind}"
            )));
        }
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1);
        let top = self.skills.most_relevant();
        let mut returns = Vec::with_capacity(episodes);
        let mut entropy_sum = 0.0;
        let mut entropy_count = 0usize;
        for _ in 0..episodes {
            let mut state = env.reset(seeds.random());
            let mut total = 0.0;
            loop {
                let action = match (self.config.mode, self.config.eval_policy) {
                    (Mode::Sac, _) => self.policy.mean_action(&state)?,
                    (Mode::Sdsra, EvalPolicy::TopSkill) => self.acting_policy(top).mean_action(&state)?,
                    (Mode::Sdsra, EvalPolicy::Mixture) => {
                        let i = self.skills.select_skill(&mut rng);
                        self.acting_policy(i).sample(&state, &mut rng)?.action
                    }
                };
                entropy_sum += self.behavior_entropy(std::slice::from_ref(&state), &mut rng)?;
                entropy_count += 1;
                let out = env.step(&self.spec.scale_action(&action))?;
                total += out.reward;
                state = out.state;
                if out.done {
                    break;
                }
            }
            returns.push(total);
        }
        let mean_return = returns.iter().sum::<f64>() / episodes as f64;
        Ok(EvalResult {
            returns,
            mean_return,
            mean_entropy: entropy_sum / entropy_count as f64,
        })
    }

    fn networks(&self) -> Vec<(String, &ParamVector)> {
        let mut nets = vec![
            ("q1".to_string(), self.critics.q1.params()),
            ("q2".to_string(), self.critics.q2.params()),
            ("target_q1".to_string(), self.critics.target_q1.params()),
            ("target_q2".to_string(), self.critics.target_q2.params()),
            ("policy".to_string(), self.policy.trunk().params()),
        ];
        for (i, s) in self.skills.skills().iter().enumerate() {
            nets.push((format!("skill_{i}"), s.policy.trunk().params()));
        }
        nets
    }

    /// Writes one checkpoint per network plus `relevance.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, params) in self.networks() {
            save_params(params, &dir.join(format!("{name}.ckpt")))?;
        }
        let n = self.skills.len();
        let relevance = ParamVector::from_parts(self.skills.relevance(), vec![ArrayDesc::new("relevance", vec![n])])?;
        save_params(&relevance, &dir.join("relevance.ckpt"))
    }

    /// Rebuilds an agent for `config` and `spec` and overwrites its networks
    /// and relevance scores from `dir`. Optimizer state and the replay
    /// buffer are not checkpointed.
    pub fn load(dir: &Path, config: AgentConfig, spec: &EnvSpec) -> Result<Self> {
        let mut agent = Self::new(config, spec)?;
        let read = |name: &str, expected: &ParamVector| -> Result<ParamVector> {
            let mut file = fs::File::open(dir.join(format!("{name}.ckpt")))?;
            load_params(&mut file, expected.layout())
        };
        let replace = |net: &mut Mlp, name: &str| -> Result<()> {
            let params = read(name, net.params())?;
            *net = Mlp::from_params(net.widths(), params)?;
            Ok(())
        };
        replace(&mut agent.critics.q1, "q1")?;
        replace(&mut agent.critics.q2, "q2")?;
        replace(&mut agent.critics.target_q1, "target_q1")?;
        replace(&mut agent.critics.target_q2, "target_q2")?;
        replace(agent.policy.trunk_mut(), "policy")?;
        for i in 0..agent.skills.len() {
            replace(agent.skills.skill_mut(i).policy.trunk_mut(), &format!("skill_{i}"))?;
        }
        let n = agent.skills.len();
        let expected = ParamVector::zeros(vec![ArrayDesc::new("relevance", vec![n])]);
        let relevance = read("relevance", &expected)?;
        agent.skills.set_relevance(relevance.values())?;
        Ok(agent)
    }
}
