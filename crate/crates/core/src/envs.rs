//! Deterministic continuous-control environments.
//!
//! Both environments are pure functions of `(state, action)`; all randomness
//! comes from the seed passed to `reset`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_steps: usize,
}

impl EnvSpec {
    /// Maps an action in `[-1, 1]^d` onto the environment bounds.
    pub fn scale_action(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| lo + 0.5 * (a + 1.0) * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Episode over. Both environments only end on the time limit.
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Pendulum,
    PointMass,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "pointmass",
        }
    }

    pub fn make(self) -> Env {
        match self {
            EnvKind::Pendulum => Env::Pendulum(Pendulum::new()),
            EnvKind::PointMass => Env::PointMass(PointMass2D::new()),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pointmass" => Ok(EnvKind::PointMass),
            other => Err(Error::invalid(format!(
                "unknown env {other:?} (expected pendulum | pointmass)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Pendulum(Pendulum),
    PointMass(PointMass2D),
}

impl Env {
    pub fn kind(&self) -> EnvKind {
        match self {
            Env::Pendulum(_) => EnvKind::Pendulum,
            Env::PointMass(_) => EnvKind::PointMass,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        match self {
            Env::Pendulum(e) => &e.spec,
            Env::PointMass(e) => &e.spec,
        }
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        match self {
            Env::Pendulum(e) => e.reset(seed),
            Env::PointMass(e) => e.reset(seed),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        match self {
            Env::Pendulum(e) => e.step(action),
            Env::PointMass(e) => e.step(action),
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        match self {
            Env::Pendulum(e) => e.observation(),
            Env::PointMass(e) => e.observation(),
        }
    }
}

fn check_action(spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>> {
    if action.len() != spec.action_dim {
        return Err(Error::shape("env action", spec.action_dim, action.len()));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("env action".into()));
    }
    let mut out = action.to_vec();
    for (j, a) in out.iter_mut().enumerate() {
        let (lo, hi) = (spec.action_low[j], spec.action_high[j]);
        if *a < lo || *a > hi {
            log::warn!("action[{j}] = {a} outside [{lo}, {hi}], clamping");
            *a = a.clamp(lo, hi);
        }
    }
    Ok(out)
}

/// Angle wrapped into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Torque-limited pendulum swing-up; `theta = 0` is upright.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    spec: EnvSpec,
    pub theta: f64,
    pub theta_dot: f64,
    steps: usize,
}

impl Pendulum {
    pub const G: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_STEPS: usize = 200;

    pub fn new() -> Self {
        Self::with_state(PI, 0.0)
    }

    pub fn with_state(theta: f64, theta_dot: f64) -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-Self::MAX_TORQUE],
                action_high: vec![Self::MAX_TORQUE],
                max_steps: Self::MAX_STEPS,
            },
            theta,
            theta_dot,
            steps: 0,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = rng.random_range(-PI..=PI);
        self.theta_dot = rng.random_range(-1.0..=1.0);
        self.steps = 0;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// `0.5 * theta_dot^2 + 3g/(2l) * cos(theta)`, conserved by the
    /// unforced continuous dynamics.
    pub fn energy(&self) -> f64 {
        0.5 * self.theta_dot * self.theta_dot + 1.5 * Self::G / Self::LENGTH * self.theta.cos()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let u = check_action(&self.spec, action)?[0];
        let th = self.theta;
        let reward = -(wrap_angle(th).powi(2) + 0.1 * self.theta_dot.powi(2) + 0.001 * u * u);
        let accel = 1.5 * Self::G / Self::LENGTH * th.sin() + 3.0 / (Self::MASS * Self::LENGTH * Self::LENGTH) * u;
        self.theta_dot = (self.theta_dot + Self::DT * accel).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta = th + Self::DT * self.theta_dot;
        self.steps += 1;
        Ok(StepResult {
            state: self.observation(),
            reward,
            done: self.steps >= self.spec.max_steps,
        })
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

/// Point mass on a walled plane that must reach a per-episode goal.
///
/// Observation: `[x, y, vx, vy, goal_x - x, goal_y - y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass2D {
    spec: EnvSpec,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
    steps: usize,
}

impl PointMass2D {
    pub const DT: f64 = 0.05;
    pub const BOUND: f64 = 5.0;
    pub const GOAL_RADIUS: f64 = 2.0;
    pub const MAX_STEPS: usize = 200;

    pub fn new() -> Self {
        Self::with_state([0.0; 2], [0.0; 2], [Self::GOAL_RADIUS, 0.0])
    }

    pub fn with_state(position: [f64; 2], velocity: [f64; 2], goal: [f64; 2]) -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 6,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_steps: Self::MAX_STEPS,
            },
            position,
            velocity,
            goal,
            steps: 0,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Start near the origin at rest; goal on a circle in a seeded direction.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = [rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5)];
        self.velocity = [0.0; 2];
        let angle: f64 = rng.random_range(0.0..2.0 * PI);
        self.goal = [Self::GOAL_RADIUS * angle.cos(), Self::GOAL_RADIUS * angle.sin()];
        self.steps = 0;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
            self.goal[0] - self.position[0],
            self.goal[1] - self.position[1],
        ]
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = check_action(&self.spec, action)?;
        for k in 0..2 {
            self.velocity[k] += Self::DT * a[k];
            let p = self.position[k] + Self::DT * self.velocity[k];
            if p.abs() > Self::BOUND {
                self.position[k] = p.clamp(-Self::BOUND, Self::BOUND);
                self.velocity[k] = 0.0;
            } else {
                self.position[k] = p;
            }
        }
        let dist2: f64 = (0..2).map(|k| (self.position[k] - self.goal[k]).powi(2)).sum();
        let effort: f64 = a.iter().map(|x| x * x).sum();
        self.steps += 1;
        Ok(StepResult {
            state: self.observation(),
            reward: -dist2 - 0.01 * effort,
            done: self.steps >= self.spec.max_steps,
        })
    }
}

impl Default for PointMass2D {
    fn default() -> Self {
        Self::new()
    }
}
