use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lpr_cli::{
    cmd_demo_gen, cmd_eval, cmd_rank_inspect, cmd_train, default_run_dir, format_rank_table, load_config, out_root,
    CliResult,
};
use lpr_core::kinematics::PathSource;
use lpr_core::trainer::TrainConfig;
use lpr_core::world::Task;

#[derive(Parser)]
#[command(name = "lpr", version, about = "Learned path ranking for a planar arm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted demonstrations as JSON files.
    DemoGen {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory [default: $LPR_OUT_DIR/demos_<task>]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config file; only `path_len` is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train every configured seed and write a run directory.
    Train {
        /// Flat `key = value` config, or a run's manifest.json to re-run it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        task: Option<Task>,
        /// Train this seed only.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory [default: $LPR_OUT_DIR/<task>_<mode>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy success rate of a checkpoint on held-out scenes.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-step table of candidate sources and Q-values.
    RankInspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        task: Option<Task>,
        /// Episodes to inspect.
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config_with(path: Option<&PathBuf>, task: Option<Task>) -> CliResult<TrainConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(t) = task {
        cfg.task = t;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::DemoGen {
            task,
            n,
            seed,
            out,
            config,
        } => {
            let cfg = config_with(config.as_ref(), Some(task))?;
            let out = out.unwrap_or_else(|| out_root().join(format!("demos_{task}")));
            let s = cmd_demo_gen(task, n, seed, &out, cfg.path_len)?;
            for (seed, reason) in &s.failed {
                eprintln!("seed {seed}: {reason}");
            }
            println!(
                "{task}: wrote {} of {n} demos to {} ({} replay to reward 1)",
                s.written.len(),
                out.display(),
                s.replayed
            );
        }
        Command::Train { config, task, seed, out } => {
            let mut cfg = config_with(config.as_ref(), task)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let dir = out.unwrap_or_else(|| default_run_dir(&cfg));
            for r in cmd_train(&cfg, &dir)? {
                println!("seed {}: final success {:.3} ({})", r.seed, r.final_success, r.dir.display());
            }
        }
        Command::Eval {
            checkpoint,
            config,
            task,
            n,
            seed,
        } => {
            let cfg = config_with(config.as_ref(), task)?;
            let res = cmd_eval(checkpoint.as_deref(), &cfg, n, seed)?;
            println!(
                "{}: {} episodes, success rate {:.3}, chosen planner {:.3} bezier {:.3} policy {:.3}",
                cfg.task,
                res.episodes.len(),
                res.success_rate(),
                res.chosen_fraction(PathSource::Planner),
                res.chosen_fraction(PathSource::Bezier),
                res.chosen_fraction(PathSource::Policy)
            );
        }
        Command::RankInspect {
            checkpoint,
            config,
            task,
            n,
            seed,
        } => {
            let cfg = config_with(config.as_ref(), task)?;
            let records = cmd_rank_inspect(&checkpoint, &cfg, n, seed)?;
            print!("{}", format_rank_table(&records));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
