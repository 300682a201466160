//! `gen` subcommand: writes train/val/test files with disjoint sample
//! streams, re-checks every label against the task oracle, and prints
//! corpus statistics.

use std::collections::HashSet;
use std::path::Path;

use treetensor::data::{histogram_line, listops, lrt};
use treetensor::rng::derive_seed;
use treetensor::tree::Tree;

use crate::config::CliError;
use crate::opts::{GenListopsArgs, GenLrtArgs};

const TRAIN_STREAM: u64 = 0;
const VAL_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

pub fn run_listops(args: &GenListopsArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out_dir)?;
    let eval_depth = args.eval_max_depth.unwrap_or(args.max_depth);
    let mut seen: HashSet<String> = HashSet::new();

    let splits = [
        ("train", args.train_count, args.max_depth, TRAIN_STREAM),
        ("val", args.val_count, eval_depth, VAL_STREAM),
        ("test", args.test_count, eval_depth, TEST_STREAM),
    ];
    for (name, count, depth, stream) in splits {
        let cfg = listops::GenConfig::new(derive_seed(args.seed, stream), count, depth);
        let samples = listops::generate(&cfg, &seen);
        listops::verify(&samples).map_err(|e| CliError::runtime(e.to_string()))?;
        let path = args.out_dir.join(format!("{name}.txt"));
        listops::write_file(&path, &samples)?;
        for s in &samples {
            seen.insert(s.render());
        }

        let trees: Vec<&Tree> = samples.iter().map(|s| &s.tree).collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.label as usize).collect();
        print_split_stats(name, &path, &trees, &labels, listops::NUM_CLASSES);
    }
    Ok(())
}

pub fn run_lrt(args: &GenLrtArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out_dir)?;
    let eval_ops = args.eval_max_operators.unwrap_or(args.max_operators);
    let mut seen: HashSet<String> = HashSet::new();

    let splits = [
        ("train", args.train_count, args.max_operators, TRAIN_STREAM),
        ("val", args.val_count, eval_ops, VAL_STREAM),
        ("test", args.test_count, eval_ops, TEST_STREAM),
    ];
    for (name, count, max_ops, stream) in splits {
        let cfg = lrt::GenConfig::new(derive_seed(args.seed, stream), count, max_ops);
        let samples = lrt::generate(&cfg, &seen);
        lrt::verify(&samples).map_err(|e| CliError::runtime(e.to_string()))?;
        let path = args.out_dir.join(format!("{name}.txt"));
        lrt::write_file(&path, &samples)?;
        for s in &samples {
            seen.insert(s.render());
        }

        let trees: Vec<&Tree> = samples
            .iter()
            .flat_map(|s| [&s.left, &s.right])
            .collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.relation.index()).collect();
        println!(
            "lrt {name}: {} pairs -> {}",
            samples.len(),
            path.display()
        );
        println!("  depth histogram: {}", depth_histogram(&trees));
        let classes: Vec<(String, usize)> = class_histogram(&labels, lrt::NUM_CLASSES)
            .into_iter()
            .enumerate()
            .map(|(i, n)| (lrt::RELATIONS[i].name().to_string(), n))
            .collect();
        println!("  class histogram: {}", histogram_line(&classes));
        println!("  oracle check: 100% ({} verified)", samples.len());
    }
    Ok(())
}

fn print_split_stats(name: &str, path: &Path, trees: &[&Tree], labels: &[usize], classes: usize) {
    println!("listops {name}: {} samples -> {}", labels.len(), path.display());
    println!("  depth histogram: {}", depth_histogram(trees));
    let counts: Vec<(String, usize)> = class_histogram(labels, classes)
        .into_iter()
        .enumerate()
        .map(|(i, n)| (i.to_string(), n))
        .collect();
    println!("  class histogram: {}", histogram_line(&counts));
    println!("  oracle check: 100% ({} verified)", labels.len());
}

fn depth_histogram(trees: &[&Tree]) -> String {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for t in trees {
        let d = t.depth();
        match counts.iter_mut().find(|(k, _)| *k == d) {
            Some((_, n)) => *n += 1,
            None => counts.push((d, 1)),
        }
    }
    counts.sort_unstable();
    histogram_line(&counts)
}

fn class_histogram(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}
