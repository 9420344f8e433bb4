use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dtql::diffusion::eval_loss_field;
use dtql::envs::{gen_chain_dataset, BanditScenario, ChainMdp};
use dtql::trainer::{
    evaluate, evaluate_chain, load_suite, report_markdown, rng_for, run, run_experiment_suite, Models, Stream, Task,
    TrainConfig,
};
use dtql::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dtql",
    version,
    about = "Diffusion trust-region Q-learning on synthetic tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file (plus a JSON sidecar).
    GenData {
        /// corner25, swiss_roll, single_mode, ring or chain.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        chain_states: usize,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0.1)]
        behavior_noise: f64,
    },
    /// Pretrain and train one run from a key = value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's regularizer (tr, kl, sds).
        #[arg(long)]
        regularizer: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Sample a trained policy and report reward and mode occupancy.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write `x,y,reward` samples (defaults to the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map the trust-region loss of a trained denoiser over the action square.
    Lossfield {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        grid: usize,
        #[arg(long, default_value_t = 64)]
        n_noise: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every config in a directory and write a comparison report.
    Suite {
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_config(dir: &Path) -> Result<TrainConfig> {
    TrainConfig::load(&dir.join("config.txt"))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            scenario,
            n,
            seed,
            out,
            chain_states,
            gamma,
            behavior_noise,
        } => {
            let mut rng = rng_for(seed, Stream::Data);
            let data = if scenario == "chain" {
                gen_chain_dataset(&ChainMdp::new(chain_states, gamma)?, behavior_noise, n, seed, &mut rng)?
            } else {
                BanditScenario::by_name(&scenario)?.generate(n, seed, &mut rng)?
            };
            data.write(&out)?;
            println!("wrote {} transitions to {}", data.len(), out.display());
        }
        Command::Train {
            config,
            regularizer,
            seed,
            output_dir,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(r) = regularizer {
                cfg.set("regularizer", &r)?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = output_dir {
                cfg.output_dir = Some(d);
            }
            cfg.validate()?;
            let out = run(&cfg)?;
            if let Some(last) = out.metrics.last() {
                println!(
                    "epoch {}: eval_mean_reward {:.4}, modes occupied {}",
                    last.epoch, last.eval_mean_reward, last.mode_coverage
                );
            }
        }
        Command::Eval {
            checkpoint,
            n,
            seed,
            out,
        } => {
            let cfg = run_config(&checkpoint)?;
            let models = Models::load(&cfg, &checkpoint)?;
            let mut rng = rng_for(seed, Stream::Eval);
            match Task::from_config(&cfg)? {
                Task::Bandit(sc) => {
                    let r = evaluate(&models.policy, &sc, n, &mut rng)?;
                    let path = out.unwrap_or_else(|| checkpoint.join("eval_samples.csv"));
                    r.write_samples(&path)?;
                    println!(
                        "mean_reward {:.4}, modes occupied {}, top mode share {:.3}; samples in {}",
                        r.mean_reward,
                        r.modes_occupied(),
                        r.top_mode_share(),
                        path.display()
                    );
                }
                Task::Chain(m) => {
                    let v = evaluate_chain(&models.policy, &m, n.div_ceil(m.goal()), 3 * m.n_states, &mut rng)?;
                    println!("mean discounted return {v:.4}");
                }
            }
        }
        Command::Lossfield {
            checkpoint,
            sigma,
            grid,
            n_noise,
            seed,
            out,
        } => {
            let cfg = run_config(&checkpoint)?;
            let models = Models::load(&cfg, &checkpoint)?;
            let state = vec![0.0; models.denoiser.state_dim()];
            let field = eval_loss_field(&models.denoiser, &state, grid, sigma, n_noise, seed)?;
            let path = out.unwrap_or_else(|| checkpoint.join("lossfield.csv"));
            field.write_csv(&path)?;
            field.write_sidecar(&path.with_extension("json"))?;
            println!(
                "{} local minima; field in {}",
                field.local_minima().len(),
                path.display()
            );
        }
        Command::Suite { configs, out } => {
            let entries = load_suite(&configs)?;
            let reports = run_experiment_suite(&entries, out.as_deref());
            let text = report_markdown(&reports);
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    let p = dir.join("report.md");
                    std::fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
                    println!("report in {}", p.display());
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
