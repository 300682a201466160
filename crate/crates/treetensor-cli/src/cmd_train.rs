//! `train` subcommand: one training run per seed, per-seed metrics and
//! checkpoints, and a mean/std summary across seeds.

use std::io::Write;
use std::path::PathBuf;

use treetensor::agg::{param_count, AggregatorKind, CountConvention};
use treetensor::checkpoint;
use treetensor::data::TaskKind;
use treetensor::lstm::UpdateActivation;
use treetensor::train::{Corpus, TrainConfig, TrainOutputs, Trainer};

use crate::config::{CliError, Overlay};
use crate::opts::TrainArgs;

pub struct SeedOutcome {
    pub seed: u64,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let overlay = Overlay::load(args.config.as_deref())?;

    let task: TaskKind = overlay
        .require::<String>("task", args.task.clone())?
        .parse()
        .map_err(CliError::Usage)?;
    let aggregator: AggregatorKind = overlay
        .require::<String>("aggregator", args.aggregator.clone())?
        .parse()
        .map_err(CliError::Usage)?;
    let c: usize = overlay.require("c", args.c)?;
    let rank: Option<usize> = match args.r {
        Some(r) => Some(r),
        None => overlay.lookup("r")?,
    };
    if aggregator == AggregatorKind::Hosvd && rank.is_none() {
        return Err(CliError::usage("hosvd requires --r"));
    }
    if aggregator != AggregatorKind::Hosvd && rank.is_some() {
        return Err(CliError::usage("--r is only meaningful for hosvd"));
    }

    let mut cfg = TrainConfig::new(task, aggregator, c, rank);
    cfg.batch_size = overlay.resolve("batch_size", args.batch_size, cfg.batch_size)?;
    cfg.l2_weight = overlay.resolve("l2_weight", args.l2_weight, cfg.l2_weight)?;
    cfg.l2_exempt_biases =
        overlay.resolve("l2_exempt_biases", args.l2_exempt_biases, cfg.l2_exempt_biases)?;
    cfg.max_epochs = overlay.resolve("max_epochs", args.max_epochs, cfg.max_epochs)?;
    cfg.patience = overlay.resolve("patience", args.patience, cfg.patience)?;
    cfg.rho = overlay.resolve("rho", args.rho, cfg.rho)?;
    cfg.epsilon = overlay.resolve("epsilon", args.epsilon, cfg.epsilon)?;
    cfg.threads = overlay.resolve("threads", args.threads, cfg.threads)?;
    cfg.lrt_head_units = overlay.resolve("head_units", args.head_units, cfg.lrt_head_units)?;
    let update: String = overlay.resolve(
        "update_activation",
        args.update_activation.clone(),
        "tanh".to_string(),
    )?;
    cfg.update_activation = update.parse::<UpdateActivation>().map_err(CliError::Usage)?;

    let train_path: PathBuf = overlay.require("train", args.train.clone())?;
    let val_path: PathBuf = overlay.require("val", args.val.clone())?;
    let out_dir: PathBuf = overlay.require("out_dir", args.out_dir.clone())?;
    let seeds = parse_seeds(&overlay.resolve("seeds", args.seeds.clone(), "1,2,3".to_string())?)?;

    let train_set = Corpus::read_file(task, &train_path)?;
    let val_set = Corpus::read_file(task, &val_path)?;

    let outcomes = run_seeds(&cfg, &seeds, &train_set, &val_set, &out_dir, args.resume)?;

    let accs: Vec<f64> = outcomes.iter().map(|o| o.best_val_accuracy).collect();
    let (mean, std) = mean_std(&accs);
    for o in &outcomes {
        println!(
            "seed {}: best val accuracy {:.4} (epoch {} of {})",
            o.seed, o.best_val_accuracy, o.best_epoch, o.epochs_run
        );
    }
    println!(
        "{} c={}{} over {} seeds: val accuracy {:.2} ({:.2})",
        aggregator.name(),
        c,
        rank.map(|r| format!(" r={r}")).unwrap_or_default(),
        seeds.len(),
        100.0 * mean,
        100.0 * std
    );

    if let Some(csv) = &args.csv {
        append_csv(csv, &cfg, mean, std)?;
    }
    Ok(())
}

/// Trains each seed into `out_dir/seed<N>/`, returning best accuracies.
/// Shared with the acceptance suite.
pub fn run_seeds(
    cfg: &TrainConfig,
    seeds: &[u64],
    train_set: &Corpus,
    val_set: &Corpus,
    out_dir: &std::path::Path,
    resume: bool,
) -> Result<Vec<SeedOutcome>, CliError> {
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let seed_dir = out_dir.join(format!("seed{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        let last_ck = seed_dir.join("last.ck");
        let best_ck = seed_dir.join("best.ck");
        let metrics_path = seed_dir.join("metrics.jsonl");

        let mut trainer = if resume && last_ck.exists() {
            let mut t = checkpoint::load(&last_ck)?;
            t.cfg.max_epochs = cfg.max_epochs;
            t.cfg.patience = cfg.patience;
            t
        } else {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = seed;
            Trainer::new(run_cfg)
        };

        let mut metrics_file = std::io::BufWriter::new(if resume && last_ck.exists() {
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&metrics_path)?
        } else {
            std::fs::File::create(&metrics_path)?
        });
        let result = trainer.run(
            train_set,
            val_set,
            &mut TrainOutputs {
                metrics: Some(&mut metrics_file),
                best_checkpoint: Some(&best_ck),
                last_checkpoint: Some(&last_ck),
            },
        )?;
        metrics_file.flush()?;
        outcomes.push(SeedOutcome {
            seed,
            best_val_accuracy: result.best_val_accuracy,
            best_epoch: result.best_epoch,
            epochs_run: result.epochs_run,
        });
    }
    Ok(outcomes)
}

pub fn parse_seeds(input: &str) -> Result<Vec<u64>, CliError> {
    let seeds: Result<Vec<u64>, _> = input
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect();
    let seeds = seeds.map_err(|e| CliError::usage(format!("bad seed list {input:?}: {e}")))?;
    if seeds.is_empty() {
        return Err(CliError::usage("seed list is empty"));
    }
    Ok(seeds)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn append_csv(path: &std::path::Path, cfg: &TrainConfig, mean: f64, std: f64) -> Result<(), CliError> {
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(file, "model,c,r,param_count,val_accuracy_mean,val_accuracy_std")?;
    }
    writeln!(
        file,
        "{},{},{},{},{:.4},{:.4}",
        cfg.aggregator.name(),
        cfg.hidden_dim,
        cfg.rank.map(|r| r.to_string()).unwrap_or_default(),
        param_count(&cfg.aggregator_spec(), CountConvention::PaperTable),
        100.0 * mean,
        100.0 * std
    )?;
    Ok(())
}
