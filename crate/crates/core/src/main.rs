use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use gppo::config::{parse_config, FULL_TOTAL_TIMESTEPS};
use gppo::trainer::{compare, train};

#[derive(Parser)]
#[command(name = "gppo", version, about = "GP-bonus PPO training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write a CSV log.
    Train(Box<TrainArgs>),
    /// Train two configurations over several seeds and summarize.
    Compare(CompareArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    total_timesteps: Option<u64>,
    /// Use the full 10^6-step budget.
    #[arg(long, conflicts_with = "total_timesteps")]
    full_budget: bool,
    #[arg(long)]
    gp_lengthscale: Option<f64>,
    #[arg(long)]
    gp_noise: Option<f64>,
    #[arg(long)]
    gp_signal: Option<f64>,
    #[arg(long)]
    gp_memory: Option<usize>,
    #[arg(long)]
    clip_epsilon: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    minibatches: Option<usize>,
    #[arg(long)]
    actors: Option<usize>,
    #[arg(long)]
    rollout_len: Option<usize>,
    /// ei | ucb
    #[arg(long)]
    acquisition: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Single-threaded collection and zeroed wall-time column.
    #[arg(long)]
    reproducible: bool,
    /// CSV log destination.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Directory for final policy/value checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        put("env", self.env.clone());
        put("algo", self.algo.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("total_timesteps", self.total_timesteps.map(|v| v.to_string()));
        put("total_timesteps", self.full_budget.then(|| FULL_TOTAL_TIMESTEPS.to_string()));
        put("gp_lengthscale", self.gp_lengthscale.map(|v| v.to_string()));
        put("gp_noise", self.gp_noise.map(|v| v.to_string()));
        put("gp_signal", self.gp_signal.map(|v| v.to_string()));
        put("gp_memory", self.gp_memory.map(|v| v.to_string()));
        put("clip_epsilon", self.clip_epsilon.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("minibatches", self.minibatches.map(|v| v.to_string()));
        put("actors", self.actors.map(|v| v.to_string()));
        put("rollout_len", self.rollout_len.map(|v| v.to_string()));
        put("acquisition", self.acquisition.clone());
        put("kappa", self.kappa.map(|v| v.to_string()));
        put("reproducible", self.reproducible.then(|| "true".to_string()));
        put("log_path", self.log.as_ref().map(|p| p.display().to_string()));
        put("checkpoint_dir", self.checkpoint_dir.as_ref().map(|p| p.display().to_string()));
        o
    }
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config_a: PathBuf,
    #[arg(long)]
    config_b: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let cfg = parse_config(args.config.as_deref(), &args.overrides())?;
            eprintln!(
                "training {} on {} (seed {}, {} steps)",
                cfg.algo, cfg.env_name, cfg.seed, cfg.total_timesteps
            );
            let outcome = train(&cfg)?;
            for r in &outcome.records {
                println!(
                    "iter {:>4}  steps {:>8}  return {:>10.2}  l_clip {:>9.4}  l_vf {:>10.3}  bonus {:>9.4}",
                    r.iteration, r.timesteps, r.mean_episode_return, r.l_clip, r.l_vf, r.bonus
                );
            }
            println!("mean return over all episodes: {:.3}", outcome.mean_return());
        }
        Command::Compare(args) => {
            let a = parse_config(Some(&args.config_a), &[])
                .with_context(|| format!("loading {}", args.config_a.display()))?;
            let b = parse_config(Some(&args.config_b), &[])
                .with_context(|| format!("loading {}", args.config_b.display()))?;
            let summary = compare(&[("a", &a), ("b", &b)], &args.seeds, Some(&args.out))?;
            print!("{summary}");
        }
    }
    Ok(())
}
