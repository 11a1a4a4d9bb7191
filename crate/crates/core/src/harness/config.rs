//! `key = value` run configuration files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Every key is optional; omitted keys take their defaults and each applied
//! default is logged. Unknown keys, duplicate keys, unparsable values and
//! out-of-range values are rejected with the offending line number.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::{AgentConfig, TrainOptions};
use crate::envs::EnvKind;
use crate::error::{Error, Result};

/// Return level a run must reach for steps-to-threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Random-policy baseline plus half of its gap to zero.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub agent: AgentConfig,
    pub env: EnvKind,
    pub total_steps: usize,
    pub log_interval: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub threshold: Threshold,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            env: EnvKind::Pendulum,
            total_steps: 30_000,
            log_interval: 1000,
            eval_interval: 1000,
            eval_episodes: 10,
            output_dir: PathBuf::from("runs"),
            seeds: vec![0],
            threshold: Threshold::Auto,
        }
    }
}

impl RunConfig {
    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            total_steps: self.total_steps,
            log_interval: self.log_interval,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
        }
    }

    /// Agent configuration for one seed of the list.
    pub fn agent_for_seed(&self, seed: u64) -> AgentConfig {
        AgentConfig {
            seed,
            ..self.agent.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.log_interval == 0 {
            return Err(Error::invalid("log_interval must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::invalid("eval_episodes must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if let Threshold::Value(v) = self.threshold {
            if !v.is_finite() {
                return Err(Error::invalid("threshold must be finite"));
            }
        }
        Ok(())
    }

    /// Renders every key, so `parse_config(render())` reproduces `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{} = {}", key.name, (key.get)(self));
        }
        out
    }
}

type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;

struct Key {
    name: &'static str,
    get: fn(&RunConfig) -> String,
    set: Setter,
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse {v:?}: {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse(p.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

macro_rules! key {
    ($name:literal, $($field:ident).+) => {
        Key {
            name: $name,
            get: |c| c.$($field).+.to_string(),
            set: |c, v| {
                c.$($field).+ = parse(v)?;
                Ok(())
            },
        }
    };
}

const KEYS: &[Key] = &[
    key!("mode", agent.mode),
    Key {
        name: "env",
        get: |c| c.env.to_string(),
        set: |c, v| {
            c.env = v.parse().map_err(|e: Error| e.to_string())?;
            Ok(())
        },
    },
    key!("num_skills", agent.num_skills),
    key!("initial_relevance", agent.initial_relevance),
    key!("temperature", agent.temperature),
    key!("beta", agent.beta),
    key!("eta", agent.eta),
    key!("skill_update_interval", agent.skill_update_interval),
    key!("skill_grad_steps", agent.skill_grad_steps),
    key!("skill_lr", agent.skill_lr),
    key!("alpha", agent.alpha),
    key!("gamma", agent.gamma),
    key!("tau", agent.tau),
    key!("lr", agent.lr),
    key!("batch_size", agent.batch_size),
    key!("buffer_capacity", agent.buffer_capacity),
    key!("warmup_steps", agent.warmup_steps),
    key!("env_steps_per_iter", agent.env_steps_per_iter),
    key!("grad_steps_per_iter", agent.grad_steps_per_iter),
    Key {
        name: "hidden",
        get: |c| join(&c.agent.hidden),
        set: |c, v| {
            c.agent.hidden = parse_list(v)?;
            Ok(())
        },
    },
    key!("squash", agent.squash),
    key!("policy_loss", agent.policy_loss),
    key!("eval_policy", agent.eval_policy),
    key!("total_steps", total_steps),
    key!("log_interval", log_interval),
    key!("eval_interval", eval_interval),
    key!("eval_episodes", eval_episodes),
    Key {
        name: "output_dir",
        get: |c| c.output_dir.display().to_string(),
        set: |c, v| {
            if v.is_empty() {
                return Err("output_dir must not be empty".into());
            }
            c.output_dir = PathBuf::from(v);
            Ok(())
        },
    },
    Key {
        name: "seeds",
        get: |c| join(&c.seeds),
        set: |c, v| {
            c.seeds = parse_list(v)?;
            Ok(())
        },
    },
    Key {
        name: "threshold",
        get: |c| match c.threshold {
            Threshold::Auto => "auto".into(),
            Threshold::Value(v) => v.to_string(),
        },
        set: |c, v| {
            c.threshold = if v == "auto" {
                Threshold::Auto
            } else {
                Threshold::Value(parse(v)?)
            };
            Ok(())
        },
    },
];

/// Names of all accepted keys, in render order.
pub fn config_keys() -> Vec<&'static str> {
    KEYS.iter().map(|k| k.name).collect()
}

/// Parses a configuration file. Returns the config and the keys that took
/// their defaults.
pub fn parse_config(text: &str) -> Result<(RunConfig, Vec<&'static str>)> {
    let mut config = RunConfig::default();
    let mut seen = vec![false; KEYS.len()];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Config { line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let k = KEYS
            .iter()
            .position(|k| k.name == key)
            .ok_or_else(|| err(format!("unknown key {key:?}")))?;
        if seen[k] {
            return Err(err(format!("duplicate key {key:?}")));
        }
        seen[k] = true;
        (KEYS[k].set)(&mut config, value).map_err(|m| err(format!("{key}: {m}")))?;
        // earlier keys already validated, so a failure here is this line's
        config.validate().map_err(|e| err(format!("{key}: {e}")))?;
    }
    let defaults: Vec<&'static str> = KEYS
        .iter()
        .zip(&seen)
        .filter(|(_, s)| !**s)
        .map(|(k, _)| k.name)
        .collect();
    for k in KEYS.iter().filter(|k| defaults.contains(&k.name)) {
        log::info!("config default: {} = {}", k.name, (k.get)(&config));
    }
    Ok((config, defaults))
}
