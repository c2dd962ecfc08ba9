//! The training loop, CSV logging and multi-seed comparisons.
//!
//! One iteration:
//! 1. each of the `N` actors collects `rollout_len` steps with the current policy
//! 2. per actor, GAE advantages are computed and centered
//! 3. in GPPO mode a bonus model is fitted to the GP memory snapshot
//! 4. `K` epochs of `M` shuffled minibatches of Adam ascent on the objective
//! 5. in GPPO mode one observation per actor is pushed for the updated
//!    parameters (evicting the oldest beyond capacity)
//! 6. one [`IterationRecord`] is appended and flushed to the CSV log

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::config::TrainConfig;
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::gp::{gp_target, GpMemory, GpModel, GpObservation};
use crate::loss::{adam_step, gppo_loss, AdamState, Batch, BonusModel, SurrogateLossTerms};
use crate::policy::{PolicyNet, ValueNet};
use crate::rollout::{compute_gae, mean_weighted_advantage, Actor, AdvantageBatch, Trajectory};
use crate::{Algo, SimRng};

pub const CSV_HEADER: &str =
    "iteration,timesteps,mean_episode_return,l_clip,l_vf,bonus,gp_mean,gp_std,raw_adv_mean,wall_time_s";

/// Stream id for the minibatch-shuffling RNG, distinct from the
/// initialization stream (0) of the same seed.
const SHUFFLE_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub timesteps: u64,
    /// Mean undiscounted return of episodes finished during this
    /// iteration's rollouts; NaN when none finished.
    pub mean_episode_return: f64,
    pub l_clip: f64,
    pub l_vf: f64,
    pub bonus: f64,
    pub gp_mean: f64,
    pub gp_std: f64,
    /// Mean over actors of the pre-centering advantage mean.
    pub raw_adv_mean: f64,
    pub wall_time_s: f64,
}

/// Formats with 9 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.is_finite() {
        format!("{x:.8e}")
    } else {
        format!("{x}")
    }
}

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.timesteps,
            fmt_float(self.mean_episode_return),
            fmt_float(self.l_clip),
            fmt_float(self.l_vf),
            fmt_float(self.bonus),
            fmt_float(self.gp_mean),
            fmt_float(self.gp_std),
            fmt_float(self.raw_adv_mean),
            fmt_float(self.wall_time_s),
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<IterationRecord>,
    /// Every finished episode's return, in completion order per iteration
    /// (actors in index order).
    pub episode_returns: Vec<f64>,
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub memory: GpMemory,
    /// Number of GP fits plus posterior queries performed.
    pub gp_evaluations: u64,
    /// Number of observations ever pushed to the GP memory.
    pub gp_pushes: u64,
}

impl TrainOutcome {
    /// Mean return over every episode of the run.
    pub fn mean_return(&self) -> f64 {
        mean(&self.episode_returns)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

struct CsvLog {
    out: BufWriter<File>,
}

impl CsvLog {
    fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    fn append(&mut self, rec: &IterationRecord) -> Result<()> {
        writeln!(self.out, "{}", rec.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}

fn collect_all(
    actors: &mut [Actor],
    policy: &PolicyNet,
    value: &ValueNet,
    steps: usize,
    parallel: bool,
) -> Result<Vec<Trajectory>> {
    if !parallel || actors.len() == 1 {
        return actors.iter_mut().map(|a| a.collect(policy, value, steps)).collect();
    }
    // Per-actor RNG streams make the result independent of scheduling;
    // joining in index order fixes aggregation order.
    std::thread::scope(|scope| {
        let handles: Vec<_> = actors
            .iter_mut()
            .map(|a| scope.spawn(move || a.collect(policy, value, steps)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Env("actor thread panicked".into()))?)
            .collect()
    })
}

fn build_batch(trajs: &[Trajectory], advs: &[AdvantageBatch]) -> Batch {
    let mut batch = Batch::default();
    for (t, a) in trajs.iter().zip(advs) {
        batch.states.extend(t.states.iter().cloned());
        batch.actions.extend(t.actions.iter().cloned());
        batch.old_log_probs.extend_from_slice(&t.log_probs);
        batch.advantages.extend_from_slice(&a.advantages);
        batch.returns.extend_from_slice(&a.returns);
    }
    batch
}

/// Splits `0..n` (already permuted in `order`) into `m` nearly equal chunks.
fn minibatches(order: &[usize], m: usize) -> impl Iterator<Item = &[usize]> {
    let n = order.len();
    (0..m).map(move |k| &order[k * n / m..(k + 1) * n / m])
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let gppo = config.algo == Algo::Gppo;

    let probe = make_env(&config.env_name)?;
    let (state_dim, action_dim) = (probe.spec().state_dim, probe.spec().action_dim);
    drop(probe);

    let mut init_rng = SimRng::seed_from_u64(config.seed);
    let mut policy = PolicyNet::with_hidden(state_dim, &config.hidden, action_dim, &mut init_rng)?;
    let mut value = ValueNet::with_hidden(state_dim, &config.hidden, &mut init_rng)?;
    let mut shuffle_rng = SimRng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);

    let mut actors = (0..config.n_actors)
        .map(|i| Ok(Actor::new(make_env(&config.env_name)?, config.seed.wrapping_add(i as u64))))
        .collect::<Result<Vec<_>>>()?;

    let n_policy = policy.num_params();
    let mut params: Vec<f64> = policy.flatten().0;
    params.extend(value.flatten().0);
    let mut adam = AdamState::new(params.len());

    let mut memory = GpMemory::new(config.gp_memory_capacity)?;
    let mut log = config.log_path.as_deref().map(CsvLog::create).transpose()?;

    let mut records = Vec::new();
    let mut episode_returns = Vec::new();
    let mut gp_evaluations = 0u64;
    let mut gp_pushes = 0u64;
    let mut timesteps = 0u64;
    let per_iteration = (config.n_actors * config.rollout_len) as u64;
    let mut iteration = 0;

    while timesteps < config.total_timesteps {
        iteration += 1;
        let trajs = collect_all(&mut actors, &policy, &value, config.rollout_len, !config.reproducible)?;
        timesteps += per_iteration;
        let advs = trajs
            .iter()
            .map(|t| compute_gae(t, config.loss.gamma, config.gae_lambda))
            .collect::<Result<Vec<_>>>()?;
        let iter_returns: Vec<f64> = trajs.iter().flat_map(|t| t.episode_returns.iter().copied()).collect();
        let raw_adv_mean = mean(&advs.iter().map(|a| a.raw_mean).collect::<Vec<_>>());
        let batch = build_batch(&trajs, &advs);

        // Snapshot of the memory taken before this iteration's pushes.
        let (bonus_model, old_theta) = if gppo {
            gp_evaluations += 1;
            (
                Some(BonusModel::fit(&memory, &config.kernel, &config.loss)?),
                Some(policy.flatten()),
            )
        } else {
            (None, None)
        };

        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut sums = SurrogateLossTerms::default();
        let mut evaluations = 0usize;
        for _ in 0..config.loss.epochs {
            order.shuffle(&mut shuffle_rng);
            for mb in minibatches(&order, config.loss.minibatches) {
                let (terms, grad) = gppo_loss(&batch, mb, &policy, &value, bonus_model.as_ref(), &config.loss)?;
                if gppo {
                    gp_evaluations += 1;
                }
                sums.l_clip += terms.l_clip;
                sums.l_vf += terms.l_vf;
                sums.bonus += terms.bonus;
                sums.gp_mean += terms.gp_mean;
                sums.gp_std += terms.gp_std;
                evaluations += 1;
                adam_step(&mut params, &grad, &mut adam, &config.loss)?;
                policy.unflatten(&params[..n_policy].to_vec().into())?;
                value.unflatten(&params[n_policy..].to_vec().into())?;
            }
        }
        let k = evaluations as f64;

        if let Some(old_theta) = old_theta {
            let mu_old = if memory.is_empty() {
                0.0
            } else {
                gp_evaluations += 1;
                GpModel::fit(&memory, &config.kernel)?.predict(&old_theta)?.mean
            };
            let theta = policy.flatten();
            for (traj, adv) in trajs.iter().zip(&advs) {
                let weighted = mean_weighted_advantage(traj, adv, &policy)?;
                let y = gp_target(weighted, config.loss.gamma, config.rollout_len as u64, mu_old)?;
                
                memory.push(GpObservation {
                    theta: theta.clone(),
                    y,
                })?;
                gp_pushes += 1;
            }
        }

        let record = IterationRecord {
            iteration,
            timesteps,
            mean_episode_return: mean(&iter_returns),
            l_clip: sums.l_clip / k,
            l_vf: sums.l_vf / k,
            bonus: sums.bonus / k,
            gp_mean: sums.gp_mean / k,
            gp_std: sums.gp_std / k,
            raw_adv_mean,
            wall_time_s: if config.reproducible {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
        };
        if let Some(log) = log.as_mut() {
            log.append(&record)?;
        }
        records.push(record);
        episode_returns.extend(iter_returns);
    }

    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        policy.save(&dir.join("policy.ckpt"))?;
        value.save(&dir.join("value.ckpt"))?;
    }

    Ok(TrainOutcome {
        records,
        episode_returns,
        policy,
        value,
        memory,
        gp_evaluations,
        gp_pushes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    pub algo: Algo,
    /// `None` for the cross-seed average row.
    pub seed: Option<u64>,
    pub mean_episode_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub rows: Vec<SummaryRow>,
}

impl CompareSummary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,algo,seed,mean_episode_return\n");
        for r in &self.rows {
            let seed = r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
            s.push_str(&format!("{},{},{},{}\n", r.config, r.algo, seed, fmt_float(r.mean_episode_return)));
        }
        s
    }
}

impl std::fmt::Display for CompareSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<8} {:<6} {:>6} {:>16}", "config", "algo", "seed", "mean return")?;
        for r in &self.rows {
            let seed = r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
            writeln!(f, "{:<8} {:<6} {:>6} {:>16.3}", r.config, r.algo, seed, r.mean_episode_return)?;
        }
        Ok(())
    }
}

/// Trains every (config, seed) pair and reports the mean return of all
/// episodes per run plus the cross-seed average per config. With `out_dir`
/// set, per-run CSV logs and `summary.csv` are written there.
pub fn compare(configs: &[(&str, &TrainConfig)], seeds: &[u64], out_dir: Option<&Path>) -> Result<CompareSummary> {
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    for (label, base) in configs {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = (*base).clone();
            cfg.seed = seed;
            cfg.log_path = out_dir.map(|d| d.join(format!("{label}_seed{seed}.csv")));
            if let Some(dir) = out_dir {
                cfg.checkpoint_dir = cfg.checkpoint_dir.as_ref().map(|_| run_dir(dir, label, seed));
            }
            let outcome = train(&cfg)?;
            let m = outcome.mean_return();
            per_seed.push(m);
            rows.push(SummaryRow {
                config: label.to_string(),
                algo: cfg.algo,
                seed: Some(seed),
                mean_episode_return: m,
            });
        }
        rows.push(SummaryRow {
            config: label.to_string(),
            algo: base.algo,
            seed: None,
            mean_episode_return: mean(&per_seed),
        });
    }
    let summary = CompareSummary { rows };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("summary.csv"), summary.to_csv())?;
    }
    Ok(summary)
}

fn run_dir(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("{label}_seed{seed}_ckpt"))
}
