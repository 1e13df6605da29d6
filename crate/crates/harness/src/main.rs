use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iddqn_harness::analysis::{cmd_compare, cmd_plot};
use iddqn_harness::config::TrackSource;
use iddqn_harness::epm_cmd::{self, describe, Dynamics, EPM_DIR};
use iddqn_harness::eval::{config_near, eval};
use iddqn_harness::serve::{bind, serve};
use iddqn_harness::sweep::{sweep, GridFile};
use iddqn_harness::train::{demo_collect, train, write_json, DEMOS_FILE};
use iddqn_harness::{HarnessError, HarnessResult, RunConfig};

#[derive(Parser)]
#[command(name = "iddqn", version, about = "Human-in-the-loop RL lab: iDDQN, baselines, EPM and live sessions")]
struct Cli {
    /// Run configuration (TOML). Defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured learner and write a run directory.
    Train,
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Builtin track name; defaults to the run's training track.
        #[arg(long, conflicts_with_all = ["track_file", "heldout"])]
        track: Option<String>,
        #[arg(long)]
        track_file: Option<PathBuf>,
        /// Evaluate on the configured held-out track.
        #[arg(long)]
        heldout: bool,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Align runs on a step grid and aggregate across seeds.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        grid: u64,
        /// One series per run instead of one per label.
        #[arg(long)]
        per_run: bool,
    },
    /// Write plain-text series files for runs.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        grid: u64,
    },
    /// Train with a live operator over a web socket.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        /// Start training immediately instead of waiting for the operator.
        #[arg(long)]
        no_wait: bool,
    },
    /// Evaluation prediction module.
    Epm {
        #[command(subcommand)]
        action: EpmAction,
    },
    /// Run a grid of config overrides.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Collect scripted-expert demonstrations.
    DemoCollect {
        #[arg(long)]
        count: Option<usize>,
    },
}

#[derive(Subcommand)]
enum EpmAction {
    /// Fit the predictive model and the crash classifier on a store.
    Train {
        /// Store file or run directory.
        #[arg(long)]
        store: PathBuf,
    },
    /// Counterfactual verdicts for every intervention in a store.
    Eval {
        #[arg(long)]
        store: PathBuf,
        /// Policy checkpoint; defaults to the run's final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
        models: Option<PathBuf>,
        /// Roll out through the true simulator.
        #[arg(long)]
        oracle: bool,
    },
}

fn load_config(cli: &Cli, near: Option<&Path>) -> HarnessResult<RunConfig> {
    let mut cfg = match (&cli.config, near) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(dir)) if dir.join("config.toml").exists() => RunConfig::load(&dir.join("config.toml"))?,
        _ => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.run.out = o.clone();
    }
    Ok(cfg)
}

fn print_json<S: serde::Serialize>(v: &S) -> HarnessResult<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| HarnessError::Runtime(e.to_string()))?);
    Ok(())
}

fn run(cli: Cli) -> HarnessResult<()> {
    match &cli.command {
        Command::Train => {
            let cfg = load_config(&cli, None)?;
            let s = train(&cfg, &cfg.run.out.clone())?;
            print_json(&s)?;
        }
        Command::Eval {
            checkpoint,
            track,
            track_file,
            heldout,
            episodes,
        } => {
            let mut cfg = match &cli.config {
                Some(_) => load_config(&cli, None)?,
                None => config_near(checkpoint)?.unwrap_or_default(),
            };
            if let Some(s) = cli.seed {
                cfg.run.seed = s;
            }
            let cfg = iddqn_harness::train::prepared(&cfg)?;
            let t = if *heldout {
                cfg.heldout_track()?
            } else if track.is_some() || track_file.is_some() {
                let src = TrackSource {
                    builtin: track.clone(),
                    file: track_file.clone(),
                    seed: None,
                };
                std::sync::Arc::new(src.load("loop", cfg.run.seed)?)
            } else {
                cfg.training_track()?
            };
            let rep = eval(checkpoint, &cfg, t, episodes.unwrap_or(cfg.eval.episodes))?;
            if let Some(out) = &cli.out {
                iddqn_harness::train::create_dir(out)?;
                write_json(&out.join(format!("eval_{}.json", rep.env_id)), &rep)?;
            }
            print_json(&rep)?;
        }
        Command::Compare { runs, grid, per_run } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("compare"));
            let c = cmd_compare(runs, *grid, *per_run, &out)?;
            for s in &c.series {
                println!("{}: {} run(s)", s.label, s.runs.len());
            }
            println!("wrote {}", out.join("comparison.tsv").display());
        }
        Command::Plot { runs, grid } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("plot"));
            for p in cmd_plot(runs, *grid, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Serve { host, port, no_wait } => {
            let cfg = load_config(&cli, None)?;
            let host = host.clone().unwrap_or_else(|| cfg.serve.host.clone());
            let listener = bind(&host, port.unwrap_or(cfg.serve.port))?;
            let addr = listener.local_addr().map_err(|e| HarnessError::io("listener address", e))?;
            eprintln!("listening on ws://{addr}");
            let s = serve(&cfg, &cfg.run.out.clone(), listener, !no_wait)?;
            print_json(&s)?;
        }
        Command::Epm { action } => match action {
            EpmAction::Train { store } => {
                let run_dir = epm_cmd::store_run_dir(store);
                let cfg = iddqn_harness::train::prepared(&load_config(&cli, Some(&run_dir))?)?;
                let out = cli.out.clone().unwrap_or_else(|| run_dir.join(EPM_DIR));
                let (_, s) = epm_cmd::epm_train(store, &cfg, &out)?;
                print_json(&s)?;
            }
            EpmAction::Eval {
                store,
                checkpoint,
                models,
                oracle,
            } => {
                let run_dir = epm_cmd::store_run_dir(store);
                let cfg = iddqn_harness::train::prepared(&load_config(&cli, Some(&run_dir))?)?;
                let out = cli.out.clone().unwrap_or_else(|| run_dir.join(EPM_DIR));
                let dynamics = match (oracle, models) {
                    (true, _) => Dynamics::Oracle,
                    (false, Some(m)) => Dynamics::Learned(m),
                    (false, None) => return Err(HarnessError::Config("--models or --oracle is required".into())),
                };
                let rep = epm_cmd::epm_eval(store, checkpoint.as_deref(), dynamics, &cfg, &out)?;
                println!("{}", describe(&rep));
            }
        },
        Command::Sweep { grid } => {
            let cfg = load_config(&cli, None)?;
            let g = GridFile::load(grid)?;
            let cells = sweep(&cfg, &g, &cfg.run.out.clone())?;
            for c in &cells {
                println!(
                    "cell {:03} {} seed {} final_1000 {}",
                    c.index,
                    c.label,
                    c.seed,
                    c.final_1000.map_or("n/a".to_string(), |v| format!("{v:.3}"))
                );
            }
        }
        Command::DemoCollect { count } => {
            let mut cfg = load_config(&cli, None)?;
            if let Some(n) = count {
                cfg.demos.count = *n;
            }
            let d = demo_collect(&cfg, &cfg.run.out.clone())?;
            println!("{} demonstrations -> {}", d.len(), cfg.run.out.join(DEMOS_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
