//! List-operations task: nested MIN/MAX/MED/SM expressions over digits in
//! prefix notation, five operand slots per operator with `_` marking a
//! missing operand.
//!
//! Line format: `<digit>\t<expr>` with
//! `expr := '(' OP child child child child child ')'`,
//! `child := digit | '_' | expr`.

use std::collections::HashSet;

use rand::{Rng, RngExt};
use thiserror::Error;

use super::{ParseError, Tokens};
use crate::rng::sample_rng;
use crate::tree::{Tree, TreeNode};

pub const OPERATORS: [&str; 4] = ["MIN", "MAX", "MED", "SM"];
pub const OP_MIN: usize = 0;
pub const OP_MAX: usize = 1;
pub const OP_MED: usize = 2;
pub const OP_SM: usize = 3;

/// Operand slots per operator (`L`).
pub const CONTEXT_SIZE: usize = 5;
/// Leaf payload dimension (`m`).
pub const INPUT_DIM: usize = 10;
pub const NUM_CLASSES: usize = 10;

/// Probability that a non-maximal-depth operand expands into a nested
/// expression rather than a digit.
const BRANCH_PROB: f64 = 0.5;
/// Candidate redraws per sample when avoiding cross-split duplicates.
const MAX_ATTEMPTS: usize = 200;

/// Digit `k` maps to ten entries with the first `k+1` set to one.
pub fn encode_digit(d: u8) -> Vec<f64> {
    debug_assert!(d <= 9);
    let mut v = vec![0.0; INPUT_DIM];
    for e in v.iter_mut().take(d as usize + 1) {
        *e = 1.0;
    }
    v
}

/// The missing operand is informationally inert: all zeros.
pub fn encode_bottom() -> Vec<f64> {
    vec![0.0; INPUT_DIM]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafToken {
    Digit(u8),
    Bottom,
}

/// Exact inverse of the leaf encoding.
pub fn decode_leaf(payload: &[f64]) -> Option<LeafToken> {
    if payload.len() != INPUT_DIM {
        return None;
    }
    let ones = payload.iter().take_while(|&&v| v == 1.0).count();
    if payload[ones..].iter().all(|&v| v == 0.0) {
        match ones {
            0 => Some(LeafToken::Bottom),
            k => Some(LeafToken::Digit(k as u8 - 1)),
        }
    } else {
        None
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("node {node}: no present operands")]
    NoOperands { node: usize },
    #[error("node {node}: leaf payload does not decode to a digit or _")]
    InvalidLeaf { node: usize },
}

/// Evaluates an expression tree: MIN/MAX take the extremum of present
/// operands, MED the lower median, SM the sum modulo 10. `_` operands
/// are absent.
pub fn eval(tree: &Tree) -> Result<u8, EvalError> {
    // value per node: Some(digit) or None for bottom leaves
    let mut values: Vec<Option<u8>> = vec![None; tree.len()];
    for idx in tree.postorder() {
        values[idx] = match tree.node(idx) {
            TreeNode::Leaf { payload } => match decode_leaf(payload) {
                Some(LeafToken::Digit(d)) => Some(d),
                Some(LeafToken::Bottom) => None,
                None => return Err(EvalError::InvalidLeaf { node: idx }),
            },
            TreeNode::Internal { op, children } => {
                let mut present: Vec<u8> =
                    children.iter().filter_map(|&c| values[c]).collect();
                if present.is_empty() {
                    return Err(EvalError::NoOperands { node: idx });
                }
                let v = match *op {
                    OP_MIN => *present.iter().min().unwrap(),
                    OP_MAX => *present.iter().max().unwrap(),
                    OP_MED => {
                        present.sort_unstable();
                        present[(present.len() - 1) / 2]
                    }
                    OP_SM => {
                        (present.iter().map(|&d| d as u32).sum::<u32>() % 10) as u8
                    }
                    other => panic!("operator id {other} out of range"),
                };
                Some(v)
            }
        };
    }
    values[tree.root()].ok_or(EvalError::NoOperands { node: tree.root() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tree: Tree,
    pub label: u8,
}

impl Sample {
    pub fn render(&self) -> String {
        format!("{}\t{}", self.label, render_expr(&self.tree, self.tree.root()))
    }
}

fn render_expr(tree: &Tree, idx: usize) -> String {
    match tree.node(idx) {
        TreeNode::Leaf { payload } => match decode_leaf(payload) {
            Some(LeafToken::Digit(d)) => d.to_string(),
            Some(LeafToken::Bottom) => "_".to_string(),
            None => panic!("unrenderable leaf payload"),
        },
        TreeNode::Internal { op, children } => {
            let mut s = format!("( {}", OPERATORS[*op]);
            for &c in children {
                s.push(' ');
                s.push_str(&render_expr(tree, c));
            }
            s.push_str(" )");
            s
        }
    }
}

pub fn parse_line(line: &str) -> Result<Sample, ParseError> {
    let (label_str, expr) = line.split_once('\t').ok_or_else(|| ParseError {
        offset: line.len(),
        msg: "missing TAB between label and expression".into(),
    })?;
    let label: u8 = label_str
        .parse()
        .ok()
        .filter(|&d| d <= 9)
        .ok_or_else(|| ParseError {
            offset: 0,
            msg: format!("label {label_str:?} is not a digit"),
        })?;
    let mut tokens = Tokens::new(expr, label_str.len() + 1)?;
    let tree = parse_expr(&mut tokens)?;
    tokens.finish()?;
    Ok(Sample { tree, label })
}

fn parse_expr(tokens: &mut Tokens<'_>) -> Result<Tree, ParseError> {
    tokens.expect("(")?;
    let (op_tok, op_off) = tokens.next().ok_or_else(|| ParseError {
        offset: tokens.end_offset(),
        msg: "expected operator, found end of line".into(),
    })?;
    let op = OPERATORS
        .iter()
        .position(|&o| o == op_tok)
        .ok_or_else(|| ParseError {
            offset: op_off,
            msg: format!("unknown operator {op_tok:?}"),
        })?;
    let mut children = Vec::with_capacity(CONTEXT_SIZE);
    for _ in 0..CONTEXT_SIZE {
        children.push(parse_child(tokens)?);
    }
    tokens.expect(")")?;
    Ok(Tree::internal(op, children))
}

fn parse_child(tokens: &mut Tokens<'_>) -> Result<Tree, ParseError> {
    match tokens.peek() {
        Some(("(", _)) => parse_expr(tokens),
        Some(("_", _)) => {
            tokens.next();
            Ok(Tree::leaf(encode_bottom()))
        }
        Some((tok, off)) => {
            let d: u8 = tok.parse().ok().filter(|&d| d <= 9).ok_or(ParseError {
                offset: off,
                msg: format!("expected digit, '_' or '(', found {tok:?}"),
            })?;
            tokens.next();
            Ok(Tree::leaf(encode_digit(d)))
        }
        None => Err(ParseError {
            offset: tokens.end_offset(),
            msg: "expected operand, found end of line".into(),
        }),
    }
}

/// Generation parameters. `operand_weights[i]` is the relative weight of
/// drawing `i + 1` present operands per node.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    /// Expression nesting depth; 1 means all operands are digit leaves.
    pub max_depth: usize,
    pub operand_weights: [f64; CONTEXT_SIZE],
}

impl GenConfig {
    pub fn new(seed: u64, count: usize, max_depth: usize) -> Self {
        Self {
            seed,
            count,
            max_depth,
            // uniform over 2..=5 present operands
            operand_weights: [0.0, 1.0, 1.0, 1.0, 1.0],
        }
    }
}

/// Deterministic corpus generation. Each sample draws from its own
/// seeded stream; candidates whose rendered line appears in `exclude`
/// are redrawn (capped), keeping splits disjoint.
pub fn generate(cfg: &GenConfig, exclude: &HashSet<String>) -> Vec<Sample> {
    assert!(cfg.max_depth >= 1, "max_depth must be at least 1");
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut rng = sample_rng(cfg.seed, i as u64);
        let mut sample = gen_sample(&mut rng, cfg);
        if !exclude.is_empty() {
            let mut attempts = 1;
            while attempts < MAX_ATTEMPTS && exclude.contains(&sample.render()) {
                sample = gen_sample(&mut rng, cfg);
                attempts += 1;
            }
        }
        out.push(sample);
    }
    out
}

fn gen_sample(rng: &mut impl Rng, cfg: &GenConfig) -> Sample {
    let tree = gen_expr(rng, 1, cfg);
    let label = eval(&tree).expect("generated trees always have present operands");
    Sample { tree, label }
}

fn gen_expr(rng: &mut impl Rng, depth: usize, cfg: &GenConfig) -> Tree {
    let op = rng.random_range(0..OPERATORS.len());
    let operands = weighted_count(rng, &cfg.operand_weights);
    let slots = choose_slots(rng, operands);
    let children = (0..CONTEXT_SIZE)
        .map(|s| {
            if !slots[s] {
                Tree::leaf(encode_bottom())
            } else if depth < cfg.max_depth && rng.random_bool(BRANCH_PROB) {
                gen_expr(rng, depth + 1, cfg)
            } else {
                Tree::leaf(encode_digit(rng.random_range(0..=9) as u8))
            }
        })
        .collect();
    Tree::internal(op, children)
}

/// Draws an operand count in `1..=CONTEXT_SIZE` from the weight table.
fn weighted_count(rng: &mut impl Rng, weights: &[f64; CONTEXT_SIZE]) -> usize {
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "operand weights must not all be zero");
    let mut draw = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if draw < w {
            return i + 1;
        }
        draw -= w;
    }
    CONTEXT_SIZE
}

/// Uniform subset of `n` slots out of `CONTEXT_SIZE` (partial shuffle,
/// then sorted back into slot order).
fn choose_slots(rng: &mut impl Rng, n: usize) -> [bool; CONTEXT_SIZE] {
    let mut idx = [0usize, 1, 2, 3, 4];
    for i in 0..n {
        let j = rng.random_range(i..CONTEXT_SIZE);
        idx.swap(i, j);
    }
    let mut slots = [false; CONTEXT_SIZE];
    for &s in &idx[..n] {
        slots[s] = true;
    }
    slots
}

/// Re-checks every label against the evaluator.
pub fn verify(samples: &[Sample]) -> Result<(), EvalError> {
    for s in samples {
        let v = eval(&s.tree)?;
        assert_eq!(v, s.label, "label mismatch against oracle");
    }
    Ok(())
}

pub fn write_file(path: &std::path::Path, samples: &[Sample]) -> std::io::Result<()> {
    super::write_lines(path, samples.iter().map(|s| s.render()))
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<Sample>, super::DataError> {
    super::read_lines(path)?
        .into_iter()
        .map(|(line_no, line)| {
            parse_line(&line).map_err(|source| super::DataError::Parse {
                line: line_no,
                source,
            })
        })
        .collect()
}
