//! Small deterministic continuous-control environments.
//!
//! Both environments integrate with semi-implicit Euler at a fixed `dt`,
//! clamp actions into their bounds and report time limits as terminals.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    /// Fixed per-component factors applied to observations before they
    /// reach the networks. The environment itself reports raw values.
    pub obs_scale: Vec<f64>,
    /// Fixed factor applied to rewards used for learning. Episode returns
    /// are always reported in environment units.
    pub reward_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode and returns its first observation.
    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64>;

    /// Advances one step. Fails when called on a finished episode.
    fn step(&mut self, action: &[f64]) -> Result<Step>;

    fn step_count(&self) -> usize;
}

pub const ENV_NAMES: [&str; 2] = ["pendulum", "pointmass"];

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "pointmass" => Ok(Box::new(PointMass::new())),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

fn clamp_action(action: &[f64], spec: &EnvSpec) -> Result<Vec<f64>> {
    if action.len() != spec.action_dim {
        return Err(Error::Env(format!(
            "{}: action has {} components, expected {}",
            spec.name,
            action.len(),
            spec.action_dim
        )));
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::Env(format!("{}: NaN action", spec.name)));
    }
    Ok(action
        .iter()
        .zip(spec.action_low.iter().zip(&spec.action_high))
        .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
        .collect())
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Torque-controlled rod pendulum; `theta = 0` is upright.
///
/// Reset draws `theta ~ U(-pi, pi)` then `theta_dot ~ U(-1, 1)` (two draws).
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    pub theta: f64,
    pub theta_dot: f64,
    steps: usize,
    done: bool,
}

impl Pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_STEPS: usize = 200;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "pendulum",
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-Self::MAX_TORQUE],
                action_high: vec![Self::MAX_TORQUE],
                max_episode_steps: Self::MAX_STEPS,
                obs_scale: vec![1.0, 1.0, 1.0 / Self::MAX_SPEED],
                reward_scale: 0.01,
            },
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
            done: false,
        }
    }

    /// Places the pendulum at a given physical state with a fresh episode.
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot.clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.steps = 0;
        self.done = false;
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// Reward of a state/torque pair; zero only upright at rest with no torque.
    pub fn reward(theta: f64, theta_dot: f64, torque: f64) -> f64 {
        let th = wrap_angle(theta);
        -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque)
    }

    /// `0.5 * theta_dot^2 + (3g / 2l) cos(theta)`, conserved by the
    /// unforced continuous dynamics.
    pub fn energy(&self) -> f64 {
        0.5 * self.theta_dot * self.theta_dot + 1.5 * Self::GRAVITY / Self::LENGTH * self.theta.cos()
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let theta = rng.random_range(-PI..PI);
        let theta_dot = rng.random_range(-1.0..1.0);
        self.set_state(theta, theta_dot);
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::Env("pendulum: step after done without reset".into()));
        }
        let u = clamp_action(action, &self.spec)?[0];
        let reward = Self::reward(self.theta, self.theta_dot, u);
        let (g, m, l) = (Self::GRAVITY, Self::MASS, Self::LENGTH);
        let accel = 3.0 * g / (2.0 * l) * self.theta.sin() + 3.0 * u / (m * l * l);
        self.theta_dot = (self.theta_dot + accel * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += self.theta_dot * Self::DT;
        self.steps += 1;
        self.done = self.steps >= Self::MAX_STEPS;
        Ok(Step {
            observation: self.observation(),
            reward,
            done: self.done,
        })
    }

    fn step_count(&self) -> usize {
        self.steps
    }
}

/// 2-D double integrator steered toward the origin.
///
/// Reset draws the x then y start coordinate from `U(-1, 1)` (two draws)
/// and zeroes the velocity.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    steps: usize,
    done: bool,
}

impl PointMass {
    pub const DT: f64 = 0.1;
    pub const MAX_SPEED: f64 = 1.0;
    /// Positions are clamped into `[-BOUND, BOUND]^2`.
    pub const BOUND: f64 = 2.0;
    pub const GOAL_RADIUS: f64 = 0.05;
    pub const MAX_STEPS: usize = 100;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "pointmass",
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_episode_steps: Self::MAX_STEPS,
                obs_scale: vec![1.0 / Self::BOUND, 1.0 / Self::BOUND, 1.0, 1.0],
                reward_scale: 0.1,
            },
            position: [0.0; 2],
            velocity: [0.0; 2],
            steps: 0,
            done: false,
        }
    }

    pub fn set_state(&mut self, position: [f64; 2], velocity: [f64; 2]) {
        self.position = position.map(|p| p.clamp(-Self::BOUND, Self::BOUND));
        self.velocity = velocity.map(|v| v.clamp(-Self::MAX_SPEED, Self::MAX_SPEED));
        self.steps = 0;
        self.done = false;
    }

    /// `(x, y, vx, vy)`
    pub fn observation(&self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }

    fn distance_to_goal(&self) -> f64 {
        self.position[0].hypot(self.position[1])
    }
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let x = rng.random_range(-1.0..1.0);
        let y = rng.random_range(-1.0..1.0);
        self.set_state([x, y], [0.0, 0.0]);
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::Env("pointmass: step after done without reset".into()));
        }
        let a = clamp_action(action, &self.spec)?;
        for ((v, p), ai) in self.velocity.iter_mut().zip(&mut self.position).zip(&a) {
            *v = (*v + ai * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
            *p = (*p + *v * Self::DT).clamp(-Self::BOUND, Self::BOUND);
        }
        let dist = self.distance_to_goal();
        let reward = -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
        self.steps += 1;
        self.done = dist < Self::GOAL_RADIUS || self.steps >= Self::MAX_STEPS;
        Ok(Step {
            observation: self.observation(),
            reward,
            done: self.done,
        })
    }

    fn step_count(&self) -> usize {
        self.steps
    }
}
