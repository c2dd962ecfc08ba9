//! Trajectory collection and advantage estimation.

use rand::SeedableRng;

use crate::envs::Env;
use crate::error::{check_dim, Error, Result};
use crate::policy::{PolicyNet, ValueNet};
use crate::SimRng;

/// `T` consecutive transitions from one actor. Episodes that end inside the
/// window are marked in `dones`; the following state is a reset state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// `V(s_T)` for the state after the last step, 0 if that step terminated.
    pub bootstrap_value: f64,
    /// Undiscounted returns of episodes that finished inside this window.
    pub episode_returns: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let t = self.rewards.len();
        if t == 0 {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        for len in [
            self.states.len(),
            self.actions.len(),
            self.log_probs.len(),
            self.values.len(),
            self.dones.len(),
        ] {
            check_dim(t, len)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    /// Centered advantage estimates.
    pub advantages: Vec<f64>,
    /// Mean of the advantages before centering.
    pub raw_mean: f64,
    /// Value-function regression targets, `A_t + V(s_t)` (uncentered).
    pub returns: Vec<f64>,
}

/// One environment instance with its own RNG stream and the episode in
/// progress. Collections resume where the previous one stopped.
///
/// RNG use per step: `action_dim` normal draws for the action, plus the
/// environment's reset draws whenever an episode ends.
///
/// Stored states are observations multiplied by the env's `obs_scale`, and
/// stored rewards carry its `reward_scale`. Episode returns stay in env units.
pub struct Actor {
    env: Box<dyn Env>,
    rng: SimRng,
    observation: Vec<f64>,
    episode_return: f64,
}

impl Actor {
    pub fn new(mut env: Box<dyn Env>, seed: u64) -> Self {
        let mut rng = SimRng::seed_from_u64(seed);
        let first = env.reset(&mut rng);
        let observation = scale(env.as_ref(), first);
        Self {
            env,
            rng,
            observation,
            episode_return: 0.0,
        }
    }

    pub fn env(&self) -> &dyn Env {
        self.env.as_ref()
    }

    /// Runs the policy for exactly `steps` transitions.
    pub fn collect(&mut self, policy: &PolicyNet, value: &ValueNet, steps: usize) -> Result<Trajectory> {
        if steps == 0 {
            return Err(Error::InvalidArgument("rollout length must be >= 1".into()));
        }
        let mut traj = Trajectory {
            states: Vec::with_capacity(steps),
            actions: Vec::with_capacity(steps),
            rewards: Vec::with_capacity(steps),
            log_probs: Vec::with_capacity(steps),
            values: Vec::with_capacity(steps),
            dones: Vec::with_capacity(steps),
            bootstrap_value: 0.0,
            episode_returns: Vec::new(),
        };
        for _ in 0..steps {
            let dist = policy.forward(&self.observation)?;
            let (action, log_prob) = dist.sample(&mut self.rng);
            let v = value.forward(&self.observation)?;
            let step = self.env.step(&action)?;
            if !step.reward.is_finite() {
                return Err(Error::Env(format!("non-finite reward {}", step.reward)));
            }
            self.episode_return += step.reward;

            let next = if step.done {
                traj.episode_returns.push(self.episode_return);
                self.episode_return = 0.0;
                self.env.reset(&mut self.rng)
            } else {
                step.observation
            };
            let next = scale(self.env.as_ref(), next);
            traj.states.push(std::mem::replace(&mut self.observation, next));
            traj.actions.push(action);
            traj.rewards.push(step.reward * self.env.spec().reward_scale);
            traj.log_probs.push(log_prob);
            traj.values.push(v);
            traj.dones.push(step.done);
        }
        traj.bootstrap_value = if *traj.dones.last().unwrap() {
            0.0
        } else {
            value.forward(&self.observation)?
        };
        Ok(traj)
    }
}

fn scale(env: &dyn Env, mut obs: Vec<f64>) -> Vec<f64> {
    for (o, s) in obs.iter_mut().zip(&env.spec().obs_scale) {
        *o *= s;
    }
    obs
}

/// GAE(lambda) advantages before centering, and `returns = A + V`.
pub fn gae(traj: &Trajectory, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    traj.validate()?;
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "gae requires gamma, lambda in [0, 1], got {gamma}, {lambda}"
        )));
    }
    let t_len = traj.len();
    let mut adv = vec![0.0; t_len];
    let mut running = 0.0;
    for t in (0..t_len).rev() {
        let next_value = if t + 1 < t_len {
            traj.values[t + 1]
        } else {
            traj.bootstrap_value
        };
        let live = if traj.dones[t] { 0.0 } else { 1.0 };
        let delta = traj.rewards[t] + gamma * next_value * live - traj.values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(&traj.values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Subtracts the mean; returns the centered values and the mean.
pub fn center(values: &[f64]) -> Result<(Vec<f64>, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot center an empty batch".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((values.iter().map(|v| v - mean).collect(), mean))
}

pub fn compute_gae(traj: &Trajectory, gamma: f64, lambda: f64) -> Result<AdvantageBatch> {
    let (raw, returns) = gae(traj, gamma, lambda)?;
    let (advantages, raw_mean) = center(&raw)?;
    Ok(AdvantageBatch {
        advantages,
        raw_mean,
        returns,
    })
}

/// `mean_t(ratio_t * A_t)`.
pub fn weighted_advantage(ratios: &[f64], advantages: &[f64]) -> Result<f64> {
    check_dim(ratios.len(), advantages.len())?;
    if ratios.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(ratios.iter().zip(advantages).map(|(r, a)| r * a).sum::<f64>() / ratios.len() as f64)
}

/// Importance-weighted mean of the centered advantages under `new_policy`,
/// using the behaviour log-probabilities stored in `traj`.
pub fn mean_weighted_advantage(traj: &Trajectory, batch: &AdvantageBatch, new_policy: &PolicyNet) -> Result<f64> {
    check_dim(traj.len(), batch.advantages.len())?;
    let ratios = traj
        .states
        .iter()
        .zip(&traj.actions)
        .zip(&traj.log_probs)
        .map(|((s, a), old)| Ok((new_policy.log_prob(s, a)? - old).exp()))
        .collect::<Result<Vec<f64>>>()?;
    weighted_advantage(&ratios, &batch.advantages)
}
