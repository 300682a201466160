//! `gradcheck` subcommand: builds a small random model and a fixed-shape
//! probe tree per task, then compares analytic gradients of the full
//! training loss (NLL + L2) against central finite differences.

use rand::{Rng, RngExt};
use treetensor::agg::AggregatorKind;
use treetensor::autodiff::finite_diff_check;
use treetensor::data::{listops, lrt, TaskKind};
use treetensor::rng::{derive_seed, pcg};
use treetensor::train::{Model, SampleRef, TrainConfig};
use treetensor::tree::Tree;

use crate::config::CliError;
use crate::opts::GradcheckArgs;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_L2: f64 = 0.01;

pub fn run(args: &GradcheckArgs) -> Result<(), CliError> {
    let task: TaskKind = args.task.parse().map_err(CliError::Usage)?;
    let aggregator: AggregatorKind = args.aggregator.parse().map_err(CliError::Usage)?;
    if aggregator == AggregatorKind::Hosvd && args.r.is_none() {
        return Err(CliError::usage("hosvd requires --r"));
    }
    let err = max_relative_error(task, aggregator, args.c, args.r, args.depth, args.eps, args.seed)?;
    println!(
        "gradcheck task={} aggregator={} c={}{} depth={} eps={:e}",
        task.name(),
        aggregator.name(),
        args.c,
        args.r.map(|r| format!(" r={r}")).unwrap_or_default(),
        args.depth,
        args.eps
    );
    println!("max relative error: {err:e}");
    if err <= GRADCHECK_TOLERANCE {
        println!("PASS (tolerance {GRADCHECK_TOLERANCE:e})");
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "max relative error {err:e} exceeds {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

/// Builds the model and probe sample, returning the finite-difference
/// error of the full loss. Shared with the acceptance suite.
pub fn max_relative_error(
    task: TaskKind,
    aggregator: AggregatorKind,
    c: usize,
    r: Option<usize>,
    depth: usize,
    eps: f64,
    seed: u64,
) -> Result<f64, CliError> {
    let mut cfg = TrainConfig::new(task, aggregator, c, r);
    cfg.seed = seed;
    let mut model = Model::new(&cfg);
    let mut rng = pcg(derive_seed(seed, 0x6772_6164));

    let err = match task {
        TaskKind::Listops => {
            let tree = listops_probe(&mut rng, depth);
            let label = listops::eval(&tree).expect("probe tree evaluates") as usize;
            let sample = listops::Sample {
                tree,
                label: label as u8,
            };
            check(&mut model, SampleRef::Listops(&sample), eps)?
        }
        TaskKind::Lrt => {
            let left = lrt_probe(&mut rng, depth, false);
            let right = lrt_probe(&mut rng, depth, true);
            let relation =
                lrt::relation(&left, &right).map_err(|e| CliError::runtime(e.to_string()))?;
            let sample = lrt::Sample {
                left,
                right,
                relation,
            };
            check(&mut model, SampleRef::Lrt(&sample), eps)?
        }
    };
    Ok(err)
}

fn check(model: &mut Model, sample: SampleRef<'_>, eps: f64) -> Result<f64, CliError> {
    let Model {
        store, bank, head, ..
    } = model;
    let ids: Vec<_> = store.ids().collect();
    finite_diff_check(store, eps, |tape| {
        let logits = treetensor::train::record_logits(bank, head, tape, sample)
            .expect("probe sample matches model");
        let nll = tape.softmax_cross_entropy(logits, sample.class());
        let mut acc = nll;
        for &id in &ids {
            let p = tape.param(id);
            let sq = tape.sum_squares(p);
            let reg = tape.scale(sq, GRADCHECK_L2);
            acc = tape.add(acc, reg);
        }
        acc
    })
    .map_err(|e| CliError::runtime(e.to_string()))
}

/// Full 5-ary tree with `depth` operator levels; operators cycle so every
/// cell receives gradient.
fn listops_probe(rng: &mut impl Rng, depth: usize) -> Tree {
    fn build(rng: &mut impl Rng, level: usize, depth: usize, op: &mut usize) -> Tree {
        if level >= depth {
            return Tree::leaf(listops::encode_digit(rng.random_range(0..=9) as u8));
        }
        let this_op = *op % listops::OPERATORS.len();
        *op += 1;
        let children = (0..listops::CONTEXT_SIZE)
            .map(|_| build(rng, level + 1, depth, op))
            .collect();
        Tree::internal(this_op, children)
    }
    let mut op = 0;
    build(rng, 0, depth, &mut op)
}

/// Binary formula with `depth` operator levels; a negation wraps the
/// root when `negate` is set so all three operators appear.
fn lrt_probe(rng: &mut impl Rng, depth: usize, negate: bool) -> Tree {
    fn build(rng: &mut impl Rng, level: usize, depth: usize, flip: &mut usize) -> Tree {
        if level >= depth {
            return Tree::leaf(lrt::encode_var(rng.random_range(0..lrt::INPUT_DIM)));
        }
        let op = if (*flip).is_multiple_of(2) { lrt::OP_AND } else { lrt::OP_OR };
        *flip += 1;
        Tree::internal(
            op,
            vec![
                build(rng, level + 1, depth, flip),
                build(rng, level + 1, depth, flip),
            ],
        )
    }
    let mut flip = 0;
    let core = build(rng, 1, depth, &mut flip);
    if negate {
        Tree::internal(lrt::OP_NOT, vec![core])
    } else {
        core
    }
}
