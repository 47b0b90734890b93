//! `ppghr` command-line interface.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ppghr::augment::{expand_dataset, parse_grid, AugmentationSpec};
use ppghr::ingest::{export_container, import_container, Source};
use ppghr::model::{render_table, Checkpoint, Variant};
use ppghr::pipeline::{
    evaluate_series_dir, finetune_over_plan, ingest_source, load_baselines, load_containers,
    pretrain_from_containers, run_pipeline, validate_config, ExperimentConfig, StageOutcome,
};
use ppghr::train::make_loso_folds;
use ppghr::util::derive_seed;

#[derive(Parser)]
#[command(
    name = "ppghr",
    about = "Wrist PPG heart-rate estimation: ingest, augment, pretrain, finetune, evaluate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert vendor archives into per-subject windowed containers.
    Ingest {
        /// Dataset kind: dalia, wesad or unlabeled.
        #[arg(long)]
        source: String,
        /// Directory holding the vendor .pkl archives.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory for .ppgw containers.
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand a container (or a directory of containers) with the
    /// frequency-scaling grid.
    Augment {
        /// Input container file or directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output container file (for a file input) or directory.
        #[arg(long)]
        out: PathBuf,
        /// Transform grid, e.g. divide:2,multiply:1.2-2.0:0.1
        #[arg(long, default_value = "divide:2,multiply:1.2-2.0:0.1")]
        grid: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Self-supervised pre-training on one or more containers.
    Pretrain {
        /// Comma-separated container files or directories.
        #[arg(long)]
        data: String,
        /// Experiment config file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// LOSO fine-tuning; emits one checkpoint and prediction series per
    /// test subject.
    Finetune {
        /// Labeled container file or directory (raw, unnormalized).
        #[arg(long)]
        data: PathBuf,
        /// Pre-trained autoencoder checkpoint.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Fold plan JSON (derived from the subjects when omitted).
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Post-process prediction series and render the MAE report.
    Evaluate {
        /// Directory with *.series.json prediction files.
        #[arg(long)]
        pred: PathBuf,
        /// Labeled container supplying ground truth for series without labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// JSON file of named per-subject baseline rows.
        #[arg(long)]
        baselines: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full pipeline (or a subset of stages) from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated stage subset (default: all).
        #[arg(long)]
        stages: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model inspection utilities.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Print the per-layer parameter / MAC table.
    Describe(DescribeArgs),
}

#[derive(Args)]
struct DescribeArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the variant: estimator or autoencoder.
    #[arg(long)]
    variant: Option<String>,
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(validate_config(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { source, input, out } => {
            let kind: Source = source.parse()?;
            let outputs = ingest_source(kind, &input, &out)?;
            println!("wrote {} containers to {}", outputs.len(), out.display());
        }
        Command::Augment { input, out, grid, seed } => {
            let spec = AugmentationSpec { transforms: parse_grid(&grid)?, rng_seed: seed };
            if input.is_dir() {
                std::fs::create_dir_all(&out)?;
                let mut count = 0usize;
                for entry in std::fs::read_dir(&input)? {
                    let path = entry?.path();
                    if path.extension().map(|e| e == "ppgw").unwrap_or(false) {
                        let ds = import_container(&path)?;
                        let expanded = expand_dataset(&ds, &spec)?;
                        export_container(&expanded, &out.join(path.file_name().unwrap()))?;
                        count += 1;
                    }
                }
                println!("augmented {count} containers ({}x)", spec.expansion_factor());
            } else {
                let ds = import_container(&input)?;
                let expanded = expand_dataset(&ds, &spec)?;
                export_container(&expanded, &out)?;
                println!(
                    "augmented {} -> {} windows ({}x)",
                    ds.len(),
                    expanded.len(),
                    spec.expansion_factor()
                );
            }
        }
        Command::Pretrain { data, config, out, seed } => {
            let cfg = load_config(&config)?;
            let mut pt_cfg = cfg.pretrain.clone();
            if let Some(s) = seed {
                pt_cfg.seed = derive_seed(s, "pretrain");
            }
            let files: Vec<PathBuf> = data.split(',').map(PathBuf::from).collect();
            let model_cfg = cfg.model.clone().autoencoder();
            let (ckpt, log) = pretrain_from_containers(&files, &pt_cfg, &model_cfg)?;
            ckpt.save(&out)?;
            let log_path = out.with_extension("log.jsonl");
            std::fs::write(&log_path, log.to_jsonl())?;
            println!(
                "pre-trained to val MSE {:.6} (epoch {}); checkpoint at {}",
                log.best_val,
                log.best_epoch,
                out.display()
            );
        }
        Command::Finetune { data, pretrained, plan, config, out, seed } => {
            let cfg = load_config(&config)?;
            let mut ft_cfg = cfg.finetune.clone();
            if let Some(s) = seed {
                ft_cfg.seed = derive_seed(s, "finetune");
            }
            let ckpt = pretrained.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
            if ckpt.is_none() {
                ft_cfg.init = ppghr::train::InitMode::Random;
            }
            let dataset = load_containers(&data)?;
            let plan = match plan {
                Some(p) => ppghr::train::FoldPlan::load(&p)?,
                None => make_loso_folds(
                    &dataset.subject_ids(),
                    cfg.data.n_folds,
                    derive_seed(seed.unwrap_or(cfg.seed), "folds"),
                )?,
            };
            std::fs::create_dir_all(&out)?;
            plan.save(&out.join("plan.json"))?;
            let outputs =
                finetune_over_plan(&dataset, ckpt.as_ref(), &ft_cfg, &cfg.model, &plan, &out)?;
            println!("wrote {} artifacts to {}", outputs.len() + 1, out.display());
        }
        Command::Evaluate { pred, labels, baselines, out, config } => {
            let cfg = load_config(&config)?;
            if let Some(container) = labels {
                attach_labels(&pred, &container)?;
            }
            let baselines = match baselines.or(cfg.evaluate.baselines.clone()) {
                Some(p) => load_baselines(&p)?,
                None => Vec::new(),
            };
            let report = evaluate_series_dir(
                &pred,
                cfg.evaluate.clip_history,
                cfg.evaluate.clip_tol,
                &baselines,
            )?;
            report.check_consistency()?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            let table = ppghr::eval::render_table(&report, &cfg.evaluate.method_name);
            std::fs::write(out.join("table.tsv"), &table)?;
            std::fs::write(
                out.join("chart.svg"),
                ppghr::eval::render_chart(&report, &cfg.evaluate.method_name),
            )?;
            println!("{table}");
            println!("mean MAE {:.2} BPM", report.mean_mae);
        }
        Command::Run { config, stages, seed, out } => {
            let mut cfg = validate_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let stages: Vec<String> = stages
                .map(|s| s.split(',').map(|p| p.trim().to_string()).collect())
                .unwrap_or_default();
            let outcomes = run_pipeline(&cfg, &stages)?;
            for (stage, outcome) in outcomes {
                println!(
                    "{stage}: {}",
                    match outcome {
                        StageOutcome::Ran => "ran",
                        StageOutcome::Cached => "cached (inputs unchanged)",
                    }
                );
            }
        }
        Command::Model { command: ModelCommand::Describe(args) } => {
            let cfg = load_config(&args.config)?;
            let mut model_cfg = cfg.model.clone();
            match args.variant.as_deref() {
                Some("estimator") => model_cfg.variant = Variant::Estimator,
                Some("autoencoder") => model_cfg.variant = Variant::Autoencoder,
                Some(other) => bail!("unknown variant `{other}`"),
                None => {}
            }
            print!("{}", render_table(&model_cfg)?);
        }
    }
    Ok(())
}

/// Copy per-subject labels from a container into series files lacking them.
fn attach_labels(pred_dir: &PathBuf, container: &PathBuf) -> anyhow::Result<()> {
    let data = load_containers(container)?;
    for entry in std::fs::read_dir(pred_dir)? {
        let path = entry?.path();
        let is_series = path
            .file_name()
            .map(|n| n.to_string_lossy().ends_with(".series.json"))
            .unwrap_or(false);
        if !is_series {
            continue;
        }
        let mut series = ppghr::eval::HRSeries::load(&path)?;
        if series.labels.is_some() {
            continue;
        }
        let labels: Vec<f64> = data
            .windows
            .iter()
            .filter(|w| w.subject_id == series.subject_id)
            .map(|w| w.label.context("labels container lacks labels"))
            .collect::<anyhow::Result<_>>()?;
        if labels.len() != series.predictions.len() {
            bail!(
                "subject {}: {} labels vs {} predictions",
                series.subject_id,
                labels.len(),
                series.predictions.len()
            );
        }
        series.labels = Some(labels);
        series.save(&path)?;
    }
    Ok(())
}
