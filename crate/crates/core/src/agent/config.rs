use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Upper bound on the number of skills; fixes the CSV relevance columns.
pub const MAX_SKILLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sdsra,
    Sac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyLossKind {
    /// `alpha log pi - min Q` through reparameterized samples.
    Reparam,
    /// `grad log pi(a|s) Q1(s, a)` over replayed actions.
    ScoreFunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    /// Mean action of the highest-relevance skill.
    TopSkill,
    /// Sample a skill by relevance, then sample its action.
    Mixture,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self {
                    $($variant => $name,)+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::invalid(format!(
                        concat!("unknown ", $what, " {:?} (expected ", $($name, " | ",)+ ")"),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Mode, "mode", Mode::Sdsra => "sdsra", Mode::Sac => "sac");
keyword_enum!(PolicyLossKind, "policy loss", PolicyLossKind::Reparam => "reparam", PolicyLossKind::ScoreFunction => "score_function");
keyword_enum!(EvalPolicy, "eval policy", EvalPolicy::TopSkill => "top_skill", EvalPolicy::Mixture => "mixture");

/// Every hyperparameter of the agent. `Default` gives the standard setup.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub mode: Mode,
    pub num_skills: usize,
    pub initial_relevance: f64,
    pub temperature: f64,
    pub beta: f64,
    pub eta: f64,
    /// Env steps between skill phases; 0 disables them.
    pub skill_update_interval: usize,
    pub skill_grad_steps: usize,
    pub skill_lr: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    pub env_steps_per_iter: usize,
    pub grad_steps_per_iter: usize,
    pub hidden: Vec<usize>,
    pub squash: bool,
    pub policy_loss: PolicyLossKind,
    pub eval_policy: EvalPolicy,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sdsra,
            num_skills: 4,
            initial_relevance: 0.0,
            temperature: 1.0,
            beta: -0.1,
            eta: 0.1,
            skill_update_interval: 1000,
            skill_grad_steps: 1,
            skill_lr: 3e-4,
            alpha: 0.2,
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            warmup_steps: 1000,
            env_steps_per_iter: 1,
            grad_steps_per_iter: 1,
            hidden: vec![64, 64],
            squash: true,
            policy_loss: PolicyLossKind::Reparam,
            eval_policy: EvalPolicy::TopSkill,
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} must be positive")))
    }
}

impl AgentConfig {
    pub fn sac() -> Self {
        Self {
            mode: Mode::Sac,
            num_skills: 1,
            ..Self::default()
        }
    }

    /// Number of skills actually instantiated: SAC mode always has one.
    pub fn effective_skills(&self) -> usize {
        match self.mode {
            Mode::Sac => 1,
            Mode::Sdsra => self.num_skills,
        }
    }

    /// Skill phases run only in SDSRA mode with a positive interval.
    pub fn skill_phases_enabled(&self) -> bool {
        self.mode == Mode::Sdsra && self.skill_update_interval > 0
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_SKILLS).contains(&self.num_skills) {
            return Err(Error::invalid(format!(
                "num_skills = {} outside [1, {MAX_SKILLS}]",
                self.num_skills
            )));
        }
        if !self.initial_relevance.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid("initial_relevance and beta must be finite"));
        }
        positive("temperature", self.temperature)?;
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid(format!("eta = {} outside (0, 1]", self.eta)));
        }
        positive("alpha", self.alpha)?;
        positive("lr", self.lr)?;
        positive("skill_lr", self.skill_lr)?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma = {} outside [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau = {} outside [0, 1]", self.tau)));
        }
        if self.tau == 0.0 {
            return Err(Error::invalid("tau = 0 would freeze the target critics"));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::invalid("batch_size and buffer_capacity must be positive"));
        }
        if self.env_steps_per_iter == 0 {
            return Err(Error::invalid("env_steps_per_iter must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        AgentConfig::default().validate().unwrap();
        AgentConfig::sac().validate().unwrap();
        assert_eq!(AgentConfig::sac().effective_skills(), 1);
    }

    #[test]
    fn out_of_range_rejected() {
        let bad = [
            AgentConfig {
                tau: 1.5,
                ..Default::default()
            },
            AgentConfig {
                gamma: 1.0,
                ..Default::default()
            },
            AgentConfig {
                num_skills: 0,
                ..Default::default()
            },
            AgentConfig {
                num_skills: MAX_SKILLS + 1,
                ..Default::default()
            },
            AgentConfig {
                eta: 0.0,
                ..Default::default()
            },
            AgentConfig {
                alpha: -0.2,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn keywords_round_trip() {
        for m in [Mode::Sdsra, Mode::Sac] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        for p in [PolicyLossKind::Reparam, PolicyLossKind::ScoreFunction] {
            assert_eq!(p.name().parse::<PolicyLossKind>().unwrap(), p);
        }
        assert!("ppo".parse::<Mode>().is_err());
    }
}
