//! The GPPO surrogate objective and its optimizer.
//!
//! Everything here is a *maximization* objective:
//!
//! ```text
//! total = L_clip - c1 * L_vf + B(theta)
//! ```
//!
//! `B` is an acquisition value of a GP fitted over past policy parameter
//! vectors. Without a GP (baseline mode) the objective is plain clipped PPO
//! with a squared-error critic and no entropy term. Adam performs gradient
//! ascent on `total`.

use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::gp::{expected_improvement, ucb, GpMemory, GpModel, KernelConfig, ParamVector};
use crate::policy::{PolicyNet, ValueNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acquisition {
    /// Expected improvement over the best stored target.
    Ei,
    /// `mean + kappa * std`.
    Ucb,
}

impl FromStr for Acquisition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ei" => Ok(Self::Ei),
            "ucb" => Ok(Self::Ucb),
            other => Err(Error::Config(format!("unknown acquisition `{other}` (expected ei|ucb)"))),
        }
    }
}

impl std::fmt::Display for Acquisition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ei => "ei",
            Self::Ucb => "ucb",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub clip_epsilon: f64,
    /// Value-loss coefficient.
    pub c1: f64,
    pub gamma: f64,
    pub acquisition: Acquisition,
    pub kappa: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub minibatches: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            c1: 0.5,
            gamma: 0.99,
            acquisition: Acquisition::Ei,
            kappa: 1.0,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 10,
            minibatches: 32,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return err(format!("clip_epsilon must be in (0, 1), got {}", self.clip_epsilon));
        }
        if !(self.c1 >= 0.0 && self.c1.is_finite()) {
            return err(format!("c1 must be >= 0, got {}", self.c1));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return err(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return err(format!("kappa must be >= 0, got {}", self.kappa));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err(format!("lr must be >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return err("adam betas must be in [0, 1)".into());
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return err("adam_epsilon must be > 0".into());
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return err("epochs and minibatches must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateLossTerms {
    pub l_clip: f64,
    pub l_vf: f64,
    pub bonus: f64,
    pub total: f64,
    pub gp_mean: f64,
    pub gp_std: f64,
}

/// Per-element clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)` and
/// whether the unclipped branch was selected (ties go to it).
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

pub fn clip_loss(ratios: &[f64], advantages: &[f64], epsilon: f64) -> Result<f64> {
    check_dim(ratios.len(), advantages.len())?;
    if ratios.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let sum: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(r, a)| clipped_term(*r, *a, epsilon).0)
        .sum();
    Ok(sum / ratios.len() as f64)
}

/// Mean squared error.
pub fn value_loss(predicted: &[f64], returns: &[f64]) -> Result<f64> {
    check_dim(predicted.len(), returns.len())?;
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(predicted
        .iter()
        .zip(returns)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        / predicted.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BonusValue {
    pub value: f64,
    pub grad: Vec<f64>,
    pub gp_mean: f64,
    pub gp_std: f64,
}

/// GP acquisition bonus fitted to one memory snapshot.
#[derive(Debug, Clone)]
pub struct BonusModel {
    model: Option<GpModel>,
    f_best: f64,
    acquisition: Acquisition,
    kappa: f64,
}

impl BonusModel {
    pub fn fit(mem: &GpMemory, kernel: &KernelConfig, cfg: &LossConfig) -> Result<Self> {
        let model = if mem.is_empty() {
            None
        } else {
            Some(GpModel::fit(mem, kernel)?)
        };
        Ok(Self {
            model,
            f_best: mem.f_best().unwrap_or(0.0),
            acquisition: cfg.acquisition,
            kappa: cfg.kappa,
        })
    }

    pub fn evaluate(&self, theta: &ParamVector) -> Result<BonusValue> {
        let Some(model) = &self.model else {
            return Ok(BonusValue {
                value: 0.0,
                grad: vec![0.0; theta.dim()],
                gp_mean: 0.0,
                gp_std: 0.0,
            });
        };
        let p = model.predict(theta)?;
        let acq = match self.acquisition {
            Acquisition::Ei => expected_improvement(&p, self.f_best),
            Acquisition::Ucb => ucb(&p, self.kappa),
        };
        Ok(BonusValue {
            value: acq.value,
            grad: acq.grad,
            gp_mean: p.mean,
            gp_std: p.variance.sqrt(),
        })
    }
}

/// One-shot bonus: fits the GP on `mem` and evaluates at `theta`.
/// An empty memory yields zero value and gradient.
pub fn bonus(theta: &ParamVector, mem: &GpMemory, kernel: &KernelConfig, cfg: &LossConfig) -> Result<BonusValue> {
    BonusModel::fit(mem, kernel, cfg)?.evaluate(theta)
}

/// Flattened training samples from one or more trajectories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

/// Objective value, its decomposition and the gradient with respect to
/// `policy.flatten() ++ value.flatten()` over the samples `indices`.
/// `bonus` is `None` in baseline mode.
pub fn gppo_loss(
    batch: &Batch,
    indices: &[usize],
    policy: &PolicyNet,
    value: &ValueNet,
    bonus: Option<&BonusModel>,
    cfg: &LossConfig,
) -> Result<(SurrogateLossTerms, Vec<f64>)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let n = indices.len() as f64;
    let states: Vec<&[f64]> = indices.iter().map(|&i| batch.states[i].as_slice()).collect();
    let actions: Vec<&[f64]> = indices.iter().map(|&i| batch.actions[i].as_slice()).collect();

    let mut l_clip = 0.0;
    let (_, mut policy_grad) = policy.log_prob_grad_by(&states, &actions, |t, lp| {
        let i = indices[t];
        let ratio = (lp - batch.old_log_probs[i]).exp();
        let adv = batch.advantages[i];
        let (term, unclipped) = clipped_term(ratio, adv, cfg.clip_epsilon);
        l_clip += term;
        // d(r A)/d(log pi) = r A on the unclipped branch, 0 on the clipped one
        if unclipped {
            ratio * adv / n
        } else {
            0.0
        }
    })?;
    l_clip /= n;

    let mut l_vf = 0.0;
    let (_, value_grad) = value.value_grad_by(&states, |t, v| {
        let diff = v - batch.returns[indices[t]];
        l_vf += diff * diff;
        -cfg.c1 * 2.0 * diff / n
    })?;
    l_vf /= n;

    let mut terms = SurrogateLossTerms {
        l_clip,
        l_vf,
        ..Default::default()
    };
    if let Some(model) = bonus {
        let b = model.evaluate(&policy.flatten())?;
        for (g, bg) in policy_grad.iter_mut().zip(&b.grad) {
            *g += bg;
        }
        terms.bonus = b.value;
        terms.gp_mean = b.gp_mean;
        terms.gp_std = b.gp_std;
    }
    terms.total = terms.l_clip - cfg.c1 * terms.l_vf + terms.bonus;

    policy_grad.extend(value_grad);
    Ok((terms, policy_grad))
}

/// Adam moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step *ascending* along `grad`.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &LossConfig) -> Result<()> {
    check_dim(params.len(), grad.len())?;
    check_dim(params.len(), state.m.len())?;
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
    Ok(())
}
