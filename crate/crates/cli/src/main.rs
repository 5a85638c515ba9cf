//! `synprobe`: pretrain a base encoder, fine-tune VAN and ADV models, run
//! the probes and intrinsic analyses, and join the results.

mod commands;
mod config;
mod data;
mod error;
mod run;
mod tables;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synprobe::exec::Exec;
use synprobe::probes_param::{ProbeConfig, ProbeKind, ProbeTask};
use synprobe::train::PgdConfig;

use commands::{Ctx, FinetuneMode, Model};
use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "synprobe", version = run::VERSION, about = "VAN vs ADV fine-tuning analysis pipeline")]
struct Cli {
    /// TOML config file; flags override it and it overrides built-in defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Config override `key.path=value` (repeatable), e.g. `finetune.learning_rate=5e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory. Defaults to `$SYNPROBE_OUT/seed-<seed>` (root `runs`).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Disable data parallelism.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Target {
    #[arg(long, value_enum)]
    model: Model,
    /// Checkpoint file instead of `<run-dir>/<model>.json`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// MLM-pretrain the base model.
    Pretrain,
    /// Fine-tune from the base model, vanilla or with PGD.
    Finetune {
        #[arg(long, value_enum)]
        mode: FinetuneMode,
        /// PGD radius; disables the ε grid.
        #[arg(long)]
        epsilon: Option<f64>,
        /// PGD step size as a fraction of ε.
        #[arg(long)]
        alpha_frac: Option<f64>,
        /// PGD steps per attack.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Parameter-free probes.
    ProbeFree {
        #[command(subcommand)]
        which: ProbeFree,
    },
    /// Trained probes on frozen features.
    ProbeParam {
        #[command(subcommand)]
        which: ProbeParam,
    },
    /// Intrinsic analyses.
    Analyze {
        #[command(subcommand)]
        which: Analyze,
    },
    /// Join the run's CSVs into one metric × model table.
    Report,
    /// Paired deltas and Pareto verdicts between two run directories.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Also write compare.csv and pareto_verdicts.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic corpus as TSV, JSON-lines pairs and CoNLL-U.
    ExportData,
    /// Print the resolved configuration as JSON.
    ShowConfig,
}

#[derive(Subcommand, Debug)]
enum ProbeFree {
    /// Minimal-pair accuracy per phenomenon.
    Pairs(Target),
    /// KL to base over the saved checkpoints of a fine-tuned model.
    Kl {
        #[arg(long, value_enum)]
        model: Model,
    },
    /// Accuracy drop under word-order shuffles.
    Order {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        sets: Option<usize>,
    },
}

#[derive(Args, Debug, Clone)]
struct ProbeShape {
    #[arg(long, value_parser = parse_task)]
    task: ProbeTask,
    #[arg(long, default_value = "linear", value_parser = parse_kind)]
    kind: ProbeKind,
    #[arg(long, default_value_t = 1)]
    rank: usize,
}

#[derive(Subcommand, Debug)]
enum ProbeParam {
    /// One probe at one layer.
    Task {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        shape: ProbeShape,
        #[arg(long)]
        layer: usize,
    },
    /// The same probe at every layer.
    LayerSweep {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        shape: ProbeShape,
    },
    /// Rank-r MLP PARSE probes on the last layer.
    Pareto {
        #[command(flatten)]
        target: Target,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        ranks: Vec<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum Analyze {
    /// Accuracy with one layer replaced by its rank-r SVD truncation.
    Svd {
        #[command(flatten)]
        target: Target,
        /// Defaults to `analysis.svd_ranks`.
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
    },
    /// Trees extracted from influence graphs.
    Trees {
        #[command(flatten)]
        target: Target,
        /// Use raw influence scores instead of row-normalized ones.
        #[arg(long)]
        raw: bool,
    },
    /// Laplacian λ_max of influence graphs.
    Spectral(Target),
}

fn parse_task(s: &str) -> Result<ProbeTask, String> {
    s.parse().map_err(|e: synprobe::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ProbeKind, String> {
    s.parse().map_err(|e: synprobe::Error| e.to_string())
}

fn probe_config(shape: &ProbeShape, layer: usize) -> ProbeConfig {
    match shape.kind {
        ProbeKind::Linear => ProbeConfig::linear(shape.task, layer),
        ProbeKind::LowrankMlp => ProbeConfig::lowrank(shape.task, layer, shape.rank),
    }
}

/// Folds subcommand flags into the resolved config so the manifest and its
/// hash describe what actually runs. Returns whether ε is grid-tuned.
fn apply_finetune_flags(
    cfg: &mut RunConfig,
    mode: FinetuneMode,
    epsilon: Option<f64>,
    alpha_frac: Option<f64>,
    steps: Option<usize>,
) -> CliResult<bool> {
    let exp = &mut cfg.experiment;
    if epsilon.is_some() || alpha_frac.is_some() || steps.is_some() {
        let cur = exp.pgd;
        let frac = alpha_frac.unwrap_or(if cur.epsilon > 0.0 { cur.alpha / cur.epsilon } else { 0.2 });
        let eps = epsilon.unwrap_or(cur.epsilon);
        exp.pgd = PgdConfig::with_alpha_fraction(eps, frac, steps.unwrap_or(cur.n_steps))
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    if epsilon.is_some() {
        exp.epsilon_grid.clear();
    }
    Ok(mode == FinetuneMode::Adv && !exp.epsilon_grid.is_empty())
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Pretrain => "pretrain".into(),
        Command::Finetune { mode, .. } => match mode {
            FinetuneMode::Vanilla => "finetune-vanilla".into(),
            FinetuneMode::Adv => "finetune-adv".into(),
        },
        Command::ProbeFree { which } => match which {
            ProbeFree::Pairs(t) => format!("probe-free-pairs-{}", t.model.stem()),
            ProbeFree::Kl { model } => format!("probe-free-kl-{}", model.stem()),
            ProbeFree::Order { target, .. } => format!("probe-free-order-{}", target.model.stem()),
        },
        Command::ProbeParam { which } => match which {
            ProbeParam::Task { target, .. } => format!("probe-param-task-{}", target.model.stem()),
            ProbeParam::LayerSweep { target, .. } => format!("probe-param-layer-sweep-{}", target.model.stem()),
            ProbeParam::Pareto { target, .. } => format!("probe-param-pareto-{}", target.model.stem()),
        },
        Command::Analyze { which } => match which {
            Analyze::Svd { target, .. } => format!("analyze-svd-{}", target.model.stem()),
            Analyze::Trees { target, .. } => format!("analyze-trees-{}", target.model.stem()),
            Analyze::Spectral(t) => format!("analyze-spectral-{}", t.model.stem()),
        },
        Command::Report => "report".into(),
        Command::ExportData => "export-data".into(),
        Command::Compare { .. } => "compare".into(),
        Command::ShowConfig => "show-config".into(),
    }
}

fn compare(a: &Path, b: &Path, out: Option<&Path>, cfg: &RunConfig) -> CliResult<()> {
    let ca = tables::collect(a)?;
    let cb = tables::collect(b)?;
    let c = tables::compare(&ca, &cb);
    if let Some(dir) = out {
        let _lock = run::RunLock::acquire(dir)?;
        run::write_manifest(dir, "compare", cfg)?;
        c.deltas.write(&dir.join("compare.csv"))?;
        c.verdicts.write(&dir.join("pareto_verdicts.csv"))?;
    }
    print!("{}", c.deltas.to_csv_string());
    println!();
    print!("{}", c.verdicts.to_csv_string());
    if c.flagged > 0 {
        eprintln!("{} metric(s) flagged as missing or mismatched", c.flagged);
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = config::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let grid = match &cli.command {
        Command::Finetune {
            mode,
            epsilon,
            alpha_frac,
            steps,
        } => apply_finetune_flags(&mut cfg, *mode, *epsilon, *alpha_frac, *steps)?,
        _ => false,
    };
    match &cli.command {
        Command::ShowConfig => {
            let v = serde_json::json!({ "config_hash": cfg.hash(), "config": &cfg });
            println!("{}", serde_json::to_string_pretty(&v)?);
            return Ok(());
        }
        Command::Compare { run_a, run_b, out } => return compare(run_a, run_b, out.as_deref(), &cfg),
        _ => {}
    }
    let dir = run::run_dir(cli.run_dir.as_deref(), cfg.experiment.seed);
    let _lock = run::RunLock::acquire(&dir)?;
    run::write_manifest(&dir, &command_name(&cli.command), &cfg)?;
    let svd_default = cfg.experiment.analysis.svd_ranks.clone();
    let ctx = Ctx { cfg, dir, exec };
    let ck = |t: &Target| t.checkpoint.clone();
    match cli.command {
        Command::Pretrain => ctx.pretrain(),
        Command::Finetune { mode, .. } => ctx.finetune(mode, grid),
        Command::ProbeFree { which } => match which {
            ProbeFree::Pairs(t) => ctx.pairs(t.model, ck(&t).as_deref()),
            ProbeFree::Kl { model } => ctx.kl(model),
            ProbeFree::Order { target, sets } => ctx.order(target.model, ck(&target).as_deref(), sets),
        },
        Command::ProbeParam { which } => match which {
            ProbeParam::Task { target, shape, layer } => {
                ctx.probe_task(target.model, ck(&target).as_deref(), probe_config(&shape, layer))
            }
            ProbeParam::LayerSweep { target, shape } => {
                ctx.layer_sweep(target.model, ck(&target).as_deref(), probe_config(&shape, 0))
            }
            ProbeParam::Pareto { target, mut ranks } => {
                ranks.sort_unstable();
                ranks.dedup();
                ctx.pareto(target.model, ck(&target).as_deref(), &ranks)
            }
        },
        Command::Analyze { which } => match which {
            Analyze::Svd { target, ranks } => {
                let mut ranks = ranks.unwrap_or(svd_default);
                ranks.sort_unstable();
                ranks.dedup();
                ctx.svd(target.model, ck(&target).as_deref(), &ranks)
            }
            Analyze::Trees { target, raw } => ctx.trees(target.model, ck(&target).as_deref(), !raw),
            Analyze::Spectral(t) => ctx.spectral(t.model, ck(&t).as_deref()),
        },
        Command::ExportData => ctx.export_data(),
        Command::Report => {
            print!("{}", ctx.report()?);
            Ok(())
        }
        Command::Compare { .. } | Command::ShowConfig => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("synprobe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finetune_flags_map_to_pgd_config() {
        let mut cfg = config::resolve(None, &[], None).unwrap();
        let grid = apply_finetune_flags(&mut cfg, FinetuneMode::Adv, Some(0.2), Some(0.2), Some(20)).unwrap();
        assert!(!grid);
        let p = cfg.experiment.pgd;
        assert_eq!(p.epsilon, 0.2);
        assert!((p.alpha - 0.04).abs() < 1e-15);
        assert_eq!(p.n_steps, 20);
    }

    #[test]
    fn adv_without_epsilon_tunes_on_the_grid() {
        let mut cfg = config::resolve(None, &[], None).unwrap();
        assert!(apply_finetune_flags(&mut cfg, FinetuneMode::Adv, None, None, Some(2)).unwrap());
        assert!(!apply_finetune_flags(&mut cfg, FinetuneMode::Vanilla, None, None, None).unwrap());
        let e = apply_finetune_flags(&mut cfg, FinetuneMode::Adv, Some(0.1), Some(2.0), None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
