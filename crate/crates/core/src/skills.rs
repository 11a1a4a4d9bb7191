//! The skill set: Gaussian skill policies, global relevance scores and the
//! softmax that picks which skill acts.

use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::{GaussianPolicy, PolicyBatchTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct Skill {
    pub id: usize,
    pub policy: GaussianPolicy,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillSet {
    skills: Vec<Skill>,
    /// Entropy coefficient in the skill loss. Negative values reward entropy.
    pub beta: f64,
    temperature: f64,
}

/// Regression data for one skill: states, the actions it should reproduce and
/// the actions it currently predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillBatch {
    pub states: Vec<Vec<f64>>,
    pub target_actions: Vec<Vec<f64>>,
    pub predicted_actions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillLoss {
    pub loss: f64,
    pub prediction_error: f64,
    pub entropy: f64,
    pub grad: Vec<f64>,
}

/// Mean squared Euclidean distance between predicted and target actions.
pub fn prediction_error(batch: &SkillBatch) -> Result<f64> {
    let m = batch.target_actions.len();
    if m == 0 {
        return Err(Error::invalid("skill batch is empty"));
    }
    if batch.predicted_actions.len() != m {
        return Err(Error::shape(
            "skill batch predictions",
            m,
            batch.predicted_actions.len(),
        ));
    }
    if !batch.states.is_empty() && batch.states.len() != m {
        return Err(Error::shape("skill batch states", m, batch.states.len()));
    }
    let mut total = 0.0;
    for (pred, target) in batch.predicted_actions.iter().zip(&batch.target_actions) {
        if pred.len() != target.len() {
            return Err(Error::shape("skill batch action", target.len(), pred.len()));
        }
        total += pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
    }
    Ok(total / m as f64)
}

/// `prediction_error + beta * mean_entropy` for a skill, with the parameter
/// gradient. Predictions are the skill's mean actions on `states`; the
/// entropy is the closed-form pre-squash Gaussian entropy, averaged over the
/// batch.
pub fn skill_loss(policy: &GaussianPolicy, states: &[Vec<f64>], targets: &[Vec<f64>], beta: f64) -> Result<SkillLoss> {
    let m = states.len();
    if m == 0 {
        return Err(Error::invalid("skill loss needs a non-empty batch"));
    }
    if targets.len() != m {
        return Err(Error::shape("skill loss targets", m, targets.len()));
    }
    let d = policy.action_dim();
    if let Some(t) = targets.iter().find(|t| t.len() != d) {
        return Err(Error::shape("skill loss target", d, t.len()));
    }
    let inv_m = 1.0 / m as f64;
    let mut trace = PolicyBatchTrace::new();
    let pred = policy.forward_mean_batch(&states.concat(), &mut trace)?;
    let mut err = 0.0;
    let mut dl_da = Vec::with_capacity(m * d);
    for (p, t) in pred.iter().zip(targets.iter().flatten()) {
        let diff = p - t;
        err += diff * diff;
        dl_da.push(2.0 * diff * inv_m);
    }
    let entropy: f64 = policy.batch_entropies(&trace).iter().sum();
    let mut grad = vec![0.0; policy.num_params()];
    policy.backward_mean_entropy_batch(&mut trace, &dl_da, beta * inv_m, &mut grad)?;
    let prediction_error = err * inv_m;
    let entropy = entropy * inv_m;
    Ok(SkillLoss {
        loss: prediction_error + beta * entropy,
        prediction_error,
        entropy,
        grad,
    })
}

/// Population z-scores; constant (or single-element) inputs map to zeros.
pub fn z_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl SkillSet {
    pub fn new(policies: Vec<GaussianPolicy>, initial_relevance: f64, beta: f64, temperature: f64) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::invalid("a skill set needs at least one skill"));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        if !initial_relevance.is_finite() || !beta.is_finite() {
            return Err(Error::invalid("relevance and beta must be finite"));
        }
        let skills = policies
            .into_iter()
            .enumerate()
            .map(|(id, policy)| Skill {
                id,
                policy,
                relevance: initial_relevance,
            })
            .collect();
        Ok(Self {
            skills,
            beta,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn skill(&self, i: usize) -> &Skill {
        &self.skills[i]
    }

    pub fn skill_mut(&mut self, i: usize) -> &mut Skill {
        &mut self.skills[i]
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn relevance(&self) -> Vec<f64> {
        self.skills.iter().map(|s| s.relevance).collect()
    }

    pub fn set_relevance(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.len() {
            return Err(Error::shape("relevance scores", self.len(), scores.len()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("relevance scores".into()));
        }
        for (skill, &r) in self.skills.iter_mut().zip(scores) {
            skill.relevance = r;
        }
        Ok(())
    }

    pub fn selection_probs(&self) -> Vec<f64> {
        softmax(&self.relevance(), self.temperature)
    }

    /// Index of the skill with the largest relevance (first on ties).
    pub fn most_relevant(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.skills.iter().enumerate() {
            if s.relevance > self.skills[best].relevance {
                best = i;
            }
        }
        best
    }

    /// Categorical draw from [`Self::selection_probs`]. A single-skill set
    /// consumes no randomness.
    pub fn select_skill<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.len() == 1 {
            return 0;
        }
        let probs = self.selection_probs();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// EMA toward z-scored performance: `r <- (1 - eta) r + eta z`.
    ///
    /// Skills whose entry is `None` had no data this interval; they keep
    /// their score and are left out of the z-scoring.
    pub fn update_relevance(&mut self, performance: &[Option<f64>], eta: f64) -> Result<()> {
        if performance.len() != self.len() {
            return Err(Error::shape("skill performance", self.len(), performance.len()));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid(format!("relevance rate eta = {eta} outside (0, 1]")));
        }
        let observed: Vec<(usize, f64)> = performance
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|v| (i, v)))
            .collect();
        if let Some((i, _)) = observed.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("performance of skill {i}")));
        }
        let values: Vec<f64> = observed.iter().map(|(_, v)| *v).collect();
        let z = z_scores(&values);
        for ((i, _), zi) in observed.iter().zip(z) {
            let skill = &mut self.skills[*i];
            skill.relevance = (1.0 - eta) * skill.relevance + eta * zi;
        }
        Ok(())
    }
}
