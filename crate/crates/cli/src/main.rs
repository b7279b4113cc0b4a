use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use inttravel_core::harness::checkpoint::Checkpoint;
use inttravel_core::harness::config::{EvalSplit, RunConfig};
use inttravel_core::harness::data::Prepared;
use inttravel_core::harness::eval::{MemorizerPredictor, ModelPredictor, PopularityPredictor, Predictor};
use inttravel_core::harness::generate::generate_to_dir;
use inttravel_core::harness::gradcheck::{run_gradcheck, TinySetup, GRADCHECK_TOLERANCE};
use inttravel_core::harness::train::{evaluate_with, run_variant, Trainer, CHECKPOINT_FILE};
use inttravel_core::harness::HarnessError;
use inttravel_core::model::Variant;

/// Accepted for compatibility with threaded builds; training runs on one
/// thread.
const THREADS_ENV: &str = "INTTRAVEL_THREADS";

#[derive(Parser, Debug)]
#[command(name = "inttravel", version, about = "Multi-task generative travel recommender")]
struct Cli {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model variant, `full` or one of the ablations.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Output directory; defaults to the config's `out_dir` (`data_dir` for
    /// `generate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and its stats.
    Generate,
    /// Train on the dataset in `data_dir`.
    Train {
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint or a baseline.
    Eval {
        /// Defaults to `<out>/checkpoint.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<EvalSplit>,
        #[arg(long, value_enum, default_value_t = Scorer::Model)]
        scorer: Scorer,
    },
    /// Train and evaluate one ablation (`--variant`) or all of them.
    Ablate {
        #[arg(long)]
        all: bool,
    },
    /// Check analytic gradients of a tiny model against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scorer {
    Model,
    Popularity,
    Memorizer,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(v) = cli.variant {
        cfg.variant = v;
    }
    Ok(cfg)
}

fn write_report(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_generate(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let dir = cli.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let ds = generate_to_dir(&cfg.generator, cfg.seed, &dir)?;
    println!(
        "wrote {} users, {} pois, {} interactions to {}",
        ds.users.len(),
        ds.pois.len(),
        ds.interactions.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, mut cfg: RunConfig, resume: Option<&Path>) -> Result<()> {
    let (mut trainer, data);
    match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let mut c = ckpt.config.clone();
            if let Some(out) = &cli.out {
                c.out_dir = out.clone();
            }
            data = Prepared::load(&c.data_dir)?;
            trainer = Trainer::resume(Checkpoint { config: c, ..ckpt }, &data)?;
        }
        None => {
            if let Some(out) = &cli.out {
                cfg.out_dir = out.clone();
            }
            data = Prepared::load(&cfg.data_dir)?;
            trainer = Trainer::new(cfg, &data)?;
        }
    }
    let summary = trainer.run()?;
    println!(
        "trained to step {}; loss {} -> {}; checkpoint {}",
        trainer.step,
        summary.first_loss().map_or("NA".into(), |v| format!("{v:.6}")),
        summary.last_loss().map_or("NA".into(), |v| format!("{v:.6}")),
        summary.checkpoint.display()
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, cfg: RunConfig, checkpoint: Option<&Path>, split: Option<EvalSplit>, scorer: Scorer) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let (mut run_cfg, store) = match scorer {
        Scorer::Model => {
            let ckpt = Checkpoint::load(&path)?;
            (ckpt.config, Some(ckpt.store))
        }
        _ => (cfg, None),
    };
    if let Some(s) = split {
        run_cfg.eval_split = s;
    }
    let data = Prepared::load(&run_cfg.data_dir)?;
    let trainer;
    let all = inttravel_core::Task::ALL.to_vec();
    let (mut predictor, tasks): (Box<dyn Predictor + '_>, _) = match scorer {
        Scorer::Model => {
            trainer = Trainer::resume(
                Checkpoint {
                    config: run_cfg.clone(),
                    step: 0,
                    store: store.expect("loaded above"),
                },
                &data,
            )?;
            let p = ModelPredictor {
                model: &trainer.model,
                store: &trainer.store,
            };
            (Box::new(p), trainer.model.active_tasks())
        }
        Scorer::Popularity => (Box::new(PopularityPredictor::fit(&data)), all),
        Scorer::Memorizer => (Box::new(MemorizerPredictor::fit(&data)), all),
    };
    let report = evaluate_with(predictor.as_mut(), &run_cfg, &data, &tasks, run_cfg.eval_split)?;
    let text = report.to_text();
    print!("{text}");
    write_report(&out, &format!("metrics_{}.txt", run_cfg.eval_split.name()), &text)
}

fn cmd_ablate(cli: &Cli, cfg: RunConfig, all: bool) -> Result<()> {
    let variants: Vec<Variant> = if all {
        Variant::ABLATIONS.to_vec()
    } else {
        match cli.variant {
            Some(v) if v != Variant::Full => vec![v],
            _ => bail!(HarnessError::Config(format!(
                "ablate needs --all or --variant with one of: {}",
                Variant::ABLATIONS.map(Variant::name).join(", ")
            ))),
        }
    };
    let base = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let data = Prepared::load(&cfg.data_dir)?;
    for v in variants {
        let run = RunConfig {
            variant: v,
            out_dir: base.join(v.name()),
            ..cfg.clone()
        };
        let (_, report) = run_variant(&run, &data)?;
        let text = report.to_text();
        println!("# {v}\n{text}");
        write_report(&run.out_dir, "metrics.txt", &text)?;
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, samples: usize) -> Result<bool> {
    let report = run_gradcheck(&TinySetup::default(), cfg.seed, samples)?;
    for p in &report.params {
        println!("{}\t{}\t{:.3e}", p.name, p.checked, p.worst_rel_error);
    }
    let pass = report.passes(GRADCHECK_TOLERANCE);
    println!(
        "worst {:.3e} over {} groups: {}",
        report.worst(),
        report.params.len(),
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => log::info!("{THREADS_ENV}={n}; computation is single-threaded"),
            _ => bail!(HarnessError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        }
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => cmd_generate(cli, &cfg)?,
        Command::Train { resume } => cmd_train(cli, cfg, resume.as_deref())?,
        Command::Eval {
            checkpoint,
            split,
            scorer,
        } => cmd_eval(cli, cfg, checkpoint.as_deref(), *split, *scorer)?,
        Command::Ablate { all } => cmd_ablate(cli, cfg, *all)?,
        Command::Gradcheck { samples } => return cmd_gradcheck(&cfg, *samples),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<HarnessError>() {
                Some(HarnessError::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
