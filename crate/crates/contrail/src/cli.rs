//! Command-line front end: `generate`, `run`, `importance`, and `embed`
//! subcommands over the library pipeline.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or config
//! errors.

use crate::checkpoint::Checkpoint;
use crate::cohort::{load_cohort, save_cohort, FeatureSchema};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{holdout_heatmap, holdout_inputs_from_checkpoint, run_experiment};
use crate::interpret::{write_heatmap_csv, write_ranking_csv};
use crate::model::EncoderKind;
use crate::synth::generate_cohort;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "contrail",
    version,
    about = "Contrastive vs cross-entropy training for sequential patient-outcome models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses the machine default.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output location: a JSONL file for `generate`, a directory otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print the resolved config and exit without running.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort JSONL file.
    Generate,
    /// Run the cross-validated experiment grid and write all artifacts.
    Run,
    /// Aggregate the feature-importance heatmap of a trained checkpoint
    /// over its held-out fold.
    Importance {
        /// Checkpoint produced by `run`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Export held-out patient embeddings from a trained checkpoint.
    Embed {
        /// Checkpoint produced by `run`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Parse `args` (without the binary name) and run. Returns the process
/// exit code instead of exiting, so tests can drive it directly.
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let argv = std::iter::once("contrail".to_string()).chain(args);
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.generator.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }

    if cli.dry_run {
        print!("{}", config.to_config_string());
        return Ok(());
    }

    match cli.command {
        Command::Generate => cmd_generate(&config),
        Command::Run => cmd_run(&config),
        Command::Importance { checkpoint } => cmd_importance(&config, &checkpoint),
        Command::Embed { checkpoint } => cmd_embed(&config, &checkpoint),
    }
}

fn load_schema(config: &ExperimentConfig) -> Result<FeatureSchema> {
    match &config.schema_path {
        Some(path) => FeatureSchema::load(path),
        None => Ok(FeatureSchema::default()),
    }
}

/// Write the cohort named by the config (or `--out`) from the generator
/// settings.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<()> {
    let path = config
        .out
        .clone()
        .or_else(|| config.cohort_path.clone())
        .ok_or_else(|| Error::config("generate needs --out or cohort.path"))?;
    let cohort = generate_cohort(&config.generator)?;
    save_cohort(&cohort, &path)?;
    println!("wrote {} patients to {}", cohort.len(), path.display());
    for task in crate::cohort::Task::ALL {
        println!(
            "  {task}: {:.1}% positive",
            100.0 * cohort.positive_rate(task)
        );
    }
    Ok(())
}

/// Run the experiment grid; artifacts and the resolved config land in the
/// output directory.
pub fn cmd_run(config: &ExperimentConfig) -> Result<()> {
    let cohort_path = config
        .cohort_path
        .as_ref()
        .ok_or_else(|| Error::config("missing cohort path (set cohort.path)"))?;
    let out = config
        .out
        .as_ref()
        .ok_or_else(|| Error::config("run needs an output directory (--out or out)"))?;
    let cohort = load_cohort(cohort_path)?;
    if cohort.is_empty() {
        return Err(Error::config(format!(
            "cohort {} is empty",
            cohort_path.display()
        )));
    }
    let schema = load_schema(config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(out.join("config.resolved.txt"), config.to_config_string())
        .map_err(|e| Error::io(out.join("config.resolved.txt"), e))?;

    let report = run_experiment(&cohort, &config.spec(), &schema, Some(out))?;
    for cell in &report.cells {
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.3}"),
            None => "n/a".to_string(),
        };
        println!(
            "{} {} {} {} {}: AUROC {} ({}), AUPRC {} ({})",
            cell.task,
            cell.encoder,
            cell.loss,
            cell.window,
            cell.regime,
            fmt(cell.auroc_mean),
            fmt(cell.auroc_std),
            fmt(cell.auprc_mean),
            fmt(cell.auprc_std),
        );
    }
    println!("report: {}", out.join("report.json").display());
    Ok(())
}

fn checkpoint_holdout(
    config: &ExperimentConfig,
    ckpt: &Checkpoint,
) -> Result<(Vec<crate::cohort::BinnedSequence>, Vec<String>, Vec<bool>)> {
    let cohort_path = config
        .cohort_path
        .as_ref()
        .ok_or_else(|| Error::config("missing cohort path (set cohort.path)"))?;
    let cohort = load_cohort(cohort_path)?;
    holdout_inputs_from_checkpoint(&cohort, ckpt)
}

/// Heatmap + ranking CSVs for a trained attention checkpoint over its
/// held-out fold.
pub fn cmd_importance(config: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.encoder != EncoderKind::Retain {
        return Err(Error::contract(format!(
            "feature importance needs the attention encoder; checkpoint was trained with `{}`",
            ckpt.encoder
        )));
    }
    let out = config
        .out
        .as_ref()
        .ok_or_else(|| Error::config("importance needs an output directory (--out or out)"))?;
    let (sequences, _, _) = checkpoint_holdout(config, &ckpt)?;
    let model = ckpt.to_model()?;
    let heatmap = holdout_heatmap(&model, &sequences)?;
    let schema = load_schema(config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_heatmap_csv(out.join("heatmap.csv"), &heatmap, ckpt.window)?;
    write_ranking_csv(out.join("ranking.csv"), &heatmap, &schema)?;
    println!(
        "heatmap over {} held-out patients ({} {} {} fold {})",
        sequences.len(),
        ckpt.task,
        ckpt.loss,
        ckpt.window,
        ckpt.fold
    );
    for (rank, &feature) in heatmap.ranking.iter().take(5).enumerate() {
        println!(
            "  #{} {} (feature {feature}, score {:.3})",
            rank + 1,
            schema.name(feature),
            heatmap.feature_scores[feature]
        );
    }
    Ok(())
}

/// Held-out embedding CSV for a trained checkpoint.
pub fn cmd_embed(config: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let out = config
        .out
        .as_ref()
        .ok_or_else(|| Error::config("embed needs an output directory (--out or out)"))?;
    let (sequences, ids, labels) = checkpoint_holdout(config, &ckpt)?;
    let model = ckpt.to_model()?;
    let embeddings: Vec<Vec<f64>> = sequences
        .iter()
        .map(|s| model.representation(s).data().to_vec())
        .collect();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("embeddings.csv");
    crate::eval::export_embeddings(&path, &ids, &labels, &embeddings)?;
    println!(
        "wrote {} embeddings ({} columns) to {}",
        ids.len(),
        2 + ckpt.latent,
        path.display()
    );
    Ok(())
}
