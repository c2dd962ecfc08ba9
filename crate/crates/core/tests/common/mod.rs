//! Oracles and fixtures shared by the integration tests and the acceptance
//! runner. The oracles never call into the GP or loss code under test; the
//! fixtures only build inputs for it.

#![allow(dead_code)]

use gppo::gp::{GpMemory, GpModel, GpObservation, KernelConfig, ParamVector};
use gppo::loss::{gppo_loss, Acquisition, Batch, BonusModel, LossConfig};
use gppo::policy::{PolicyNet, ValueNet};
use gppo::SimRng;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

/// Finite-difference step used by every gradient check.
pub const H: f64 = 1e-5;

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut SimRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Norm-wise relative error with a small absolute floor.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

pub fn scalar_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central differences of `f` at `x`, coordinate by coordinate.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Textbook RBF covariance, written out from the definition.
pub fn oracle_cov(a: &[f64], b: &[f64], cfg: &KernelConfig, same_index: bool) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let mut k = cfg.sigma_f.powi(2) * (-0.5 * cfg.lengthscale * d2).exp();
    if same_index {
        k += cfg.sigma_n.powi(2);
    }
    k
}

/// Conditional of the (n+1)-dimensional joint Gaussian over the memory
/// targets and f(x*), via the block formula with a dense LU inverse.
/// `jitter` is added to the training block's diagonal.
pub fn oracle_posterior(mem: &GpMemory, x: &[f64], cfg: &KernelConfig, jitter: f64) -> (f64, f64) {
    let obs: Vec<&GpObservation> = mem.entries().collect();
    let n = obs.len();
    let mut joint = DMatrix::zeros(n + 1, n + 1);
    let point = |i: usize| if i < n { obs[i].theta.as_slice() } else { x };
    for i in 0..=n {
        for j in 0..=n {
            let same = if i == n || j == n {
                // noise enters the query row only on exact coincidence
                point(i) == point(j)
            } else {
                i == j
            };
            joint[(i, j)] = oracle_cov(point(i), point(j), cfg, same);
        }
    }
    let mut k_train = joint.view((0, 0), (n, n)).into_owned();
    for i in 0..n {
        k_train[(i, i)] += jitter;
    }
    let k_cross: DVector<f64> = joint.view((0, n), (n, 1)).column(0).into_owned();
    let k_ss = joint[(n, n)];
    let inv = k_train.lu().try_inverse().expect("training covariance is singular");
    let y = DVector::from_iterator(n, obs.iter().map(|o| o.y));
    let mean = (k_cross.transpose() * &inv * y)[(0, 0)];
    let var = k_ss - (k_cross.transpose() * &inv * &k_cross)[(0, 0)];
    (mean, var)
}

/// A memory of `n` random points in `dim` dimensions.
pub fn random_memory(rng: &mut SimRng, n: usize, dim: usize, spread: f64) -> GpMemory {
    let mut mem = GpMemory::new(n.max(1)).unwrap();
    for _ in 0..n {
        let theta = ParamVector(normal_vec(rng, dim, spread));
        let y = rng.sample::<f64, _>(StandardNormal) * 2.0;
        mem.push(GpObservation { theta, y }).unwrap();
    }
    mem
}

pub fn random_kernel(rng: &mut SimRng) -> KernelConfig {
    KernelConfig {
        sigma_f: rng.random_range(0.5..2.0),
        lengthscale: rng.random_range(0.1..2.0),
        sigma_n: rng.random_range(0.05..0.5),
        jitter: 1e-8,
    }
}

/// Monte-Carlo expected improvement of N(mean, var) over `f_best`.
pub fn monte_carlo_ei(rng: &mut SimRng, mean: f64, var: f64, f_best: f64, samples: usize) -> f64 {
    let sd = var.sqrt();
    let total: f64 = (0..samples)
        .map(|_| {
            let f = mean + sd * rng.sample::<f64, _>(StandardNormal);
            (f - f_best).max(0.0)
        })
        .sum();
    total / samples as f64
}

/// Discounted suffix sums computed directly, episode by episode.
pub fn discounted_suffix_sums(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut g = 1.0;
            for k in t..n {
                acc += g * rewards[k];
                if dones[k] {
                    break;
                }
                g *= gamma;
            }
            acc
        })
        .collect()
}

/// A fitted GP with a query point near its data and the memory's incumbent.
pub fn gp_case(seed: u64) -> (GpModel, Vec<f64>, f64) {
    let mut rng = rng(seed);
    let dim = rng.random_range(1..=10);
    let n = rng.random_range(2..=5);
    let cfg = random_kernel(&mut rng);
    let mem = random_memory(&mut rng, n, dim, 1.0);
    let model = GpModel::fit(&mem, &cfg).unwrap();
    // query near a stored input so the posterior is far from the prior
    let anchor = mem.entries().next().unwrap().theta.0.clone();
    let x: Vec<f64> = anchor.iter().zip(normal_vec(&mut rng, dim, 0.4)).map(|(a, d)| a + d).collect();
    (model, x, mem.f_best().unwrap())
}

/// A toy actor/critic pair with a batch whose ratios sit away from the clip
/// kinks, plus a bonus model fitted near the current parameters.
pub struct LossCase {
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub batch: Batch,
    pub bonus: BonusModel,
    pub cfg: LossConfig,
}

pub fn loss_case(seed: u64, acquisition: Acquisition) -> LossCase {
    let mut rng = rng(seed);
    let (state_dim, action_dim) = (2, 1);
    let mut policy = PolicyNet::with_hidden(state_dim, &[4], action_dim, &mut rng).unwrap();
    let mut theta = policy.flatten();
    theta.0.iter_mut().for_each(|w| *w += rng.random_range(-0.5..0.5));
    policy.unflatten(&theta).unwrap();
    let value = ValueNet::with_hidden(state_dim, &[4], &mut rng).unwrap();
    assert!(policy.num_params() + value.num_params() <= 100);

    let cfg = LossConfig {
        acquisition,
        kappa: 0.7,
        ..LossConfig::default()
    };
    let eps = cfg.clip_epsilon;
    let mut batch = Batch::default();
    for _ in 0..24 {
        let s = normal_vec(&mut rng, state_dim, 1.0);
        let a = normal_vec(&mut rng, action_dim, 1.0);
        let lp = policy.log_prob(&s, &a).unwrap();
        let ratio = loop {
            let r: f64 = rng.random_range(0.5..1.5);
            if (r - (1.0 - eps)).abs() > 0.02 && (r - (1.0 + eps)).abs() > 0.02 {
                break r;
            }
        };
        batch.states.push(s);
        batch.actions.push(a);
        batch.old_log_probs.push(lp - ratio.ln());
        batch.advantages.push(rng.random_range(-2.0..2.0));
        batch.returns.push(rng.random_range(-3.0..3.0));
    }

    let kernel = KernelConfig {
        sigma_f: 1.0,
        lengthscale: 0.3,
        sigma_n: 0.1,
        jitter: 1e-8,
    };
    let mut mem = GpMemory::new(20).unwrap();
    for _ in 0..4 {
        let mut t = theta.clone();
        t.0.iter_mut().for_each(|w| *w += rng.random_range(-0.4..0.4));
        mem.push(GpObservation {
            theta: t,
            y: rng.random_range(-1.0..1.0),
        })
        .unwrap();
    }
    let bonus = BonusModel::fit(&mem, &kernel, &cfg).unwrap();
    LossCase {
        policy,
        value,
        batch,
        bonus,
        cfg,
    }
}

/// Relative error of the analytic objective gradient against central
/// differences over every network parameter.
pub fn check_full_loss_gradient(case: &LossCase) -> f64 {
    let idx: Vec<usize> = (0..case.batch.len()).collect();
    let (_, grad) = gppo_loss(&case.batch, &idx, &case.policy, &case.value, Some(&case.bonus), &case.cfg).unwrap();
    let n_policy = case.policy.num_params();
    let mut flat = case.policy.flatten().0;
    flat.extend(case.value.flatten().0);

    let mut policy = case.policy.clone();
    let mut value = case.value.clone();
    let fd = central_diff(&flat, H, |v| {
        policy.unflatten(&ParamVector(v[..n_policy].to_vec())).unwrap();
        value.unflatten(&ParamVector(v[n_policy..].to_vec())).unwrap();
        gppo_loss(&case.batch, &idx, &policy, &value, Some(&case.bonus), &case.cfg)
            .unwrap()
            .0
            .total
    });
    rel_err(&grad, &fd)
}
