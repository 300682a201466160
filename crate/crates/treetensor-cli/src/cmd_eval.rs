//! `eval` subcommand: loads a checkpoint, checks any config flags the
//! caller wants verified, and reports split accuracy and mean NLL.

use treetensor::checkpoint;
use treetensor::train::{evaluate, Corpus};

use crate::config::CliError;
use crate::opts::EvalArgs;

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let trainer = checkpoint::load(&args.checkpoint)?;
    let cfg = &trainer.cfg;

    if let Some(task) = &args.task {
        if task.to_ascii_lowercase() != cfg.task.name() {
            return Err(CliError::usage(format!(
                "task mismatch: checkpoint was trained on {}, got --task {}",
                cfg.task.name(),
                task
            )));
        }
    }
    if let Some(c) = args.c {
        if c != cfg.hidden_dim {
            return Err(CliError::usage(format!(
                "hidden size mismatch: checkpoint has c={}, got --c {c}",
                cfg.hidden_dim
            )));
        }
    }
    if let Some(r) = args.r {
        if Some(r) != cfg.rank {
            return Err(CliError::usage(format!(
                "rank mismatch: checkpoint has r={:?}, got --r {r}",
                cfg.rank
            )));
        }
    }
    if let Some(agg) = &args.aggregator {
        if agg.to_ascii_lowercase() != cfg.aggregator.name() {
            return Err(CliError::usage(format!(
                "aggregator mismatch: checkpoint has {}, got --aggregator {agg}",
                cfg.aggregator.name()
            )));
        }
    }

    let corpus = Corpus::read_file(cfg.task, &args.data)?;
    let stats = evaluate(&trainer.model, &corpus, args.threads)?;
    println!(
        "checkpoint: {} (task={} aggregator={} c={}{} epoch={} best_val={:.4})",
        args.checkpoint.display(),
        cfg.task.name(),
        cfg.aggregator.name(),
        cfg.hidden_dim,
        cfg.rank.map(|r| format!(" r={r}")).unwrap_or_default(),
        trainer.epoch,
        trainer.best_val_accuracy
    );
    println!(
        "{}: accuracy {:.4} mean_nll {:.6} ({} samples)",
        args.split, stats.accuracy, stats.mean_nll, stats.count
    );
    Ok(())
}
