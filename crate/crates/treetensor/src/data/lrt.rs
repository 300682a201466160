//! Logical-relations task: pairs of propositional formulas over six
//! boolean variables, labeled with one of seven set-theoretic relations
//! between their satisfying assignments.
//!
//! Line format: `<relation>\t<formula>\t<formula>` with
//! `formula := var | '(' 'not' formula ')' | '(' formula ('and'|'or') formula ')'`.

use std::collections::HashSet;

use rand::{Rng, RngExt};
use thiserror::Error;

use super::{ParseError, Tokens};
use crate::rng::sample_rng;
use crate::tree::{Tree, TreeNode};

pub const OPERATORS: [&str; 3] = ["and", "or", "not"];
pub const OP_AND: usize = 0;
pub const OP_OR: usize = 1;
pub const OP_NOT: usize = 2;

pub const VARIABLES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
/// Leaf payload dimension (`m`): one-hot over the six variables.
pub const INPUT_DIM: usize = 6;
/// The logical operators are at most binary (`L`).
pub const CONTEXT_SIZE: usize = 2;
pub const NUM_CLASSES: usize = 7;

/// Candidate pair redraws per sample (class cap, degenerate formulas,
/// cross-split duplicates).
const MAX_ATTEMPTS: usize = 200;

/// The seven natural-logic relations between satisfying sets `A`, `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    /// `A == B`
    Equiv,
    /// `A` strictly contained in `B`
    Fwd,
    /// `B` strictly contained in `A`
    Rev,
    /// disjoint and exhaustive
    Neg,
    /// disjoint, not exhaustive
    Alt,
    /// overlapping and exhaustive, neither contained
    Cov,
    /// everything else
    Indep,
}

pub const RELATIONS: [Relation; NUM_CLASSES] = [
    Relation::Equiv,
    Relation::Fwd,
    Relation::Rev,
    Relation::Neg,
    Relation::Alt,
    Relation::Cov,
    Relation::Indep,
];

impl Relation {
    pub fn name(self) -> &'static str {
        match self {
            Relation::Equiv => "equiv",
            Relation::Fwd => "fwd",
            Relation::Rev => "rev",
            Relation::Neg => "neg",
            Relation::Alt => "alt",
            Relation::Cov => "cov",
            Relation::Indep => "indep",
        }
    }

    /// Class index used for logits and histograms.
    pub fn index(self) -> usize {
        RELATIONS.iter().position(|&r| r == self).unwrap()
    }
}

impl std::str::FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RELATIONS
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown relation {s:?}"))
    }
}

pub fn var_index(token: &str) -> Option<usize> {
    VARIABLES.iter().position(|&v| v == token)
}

pub fn encode_var(index: usize) -> Vec<f64> {
    let mut v = vec![0.0; INPUT_DIM];
    v[index] = 1.0;
    v
}

pub fn decode_var(payload: &[f64]) -> Option<usize> {
    if payload.len() != INPUT_DIM {
        return None;
    }
    let mut hot = None;
    for (i, &v) in payload.iter().enumerate() {
        match v {
            0.0 => {}
            1.0 if hot.is_none() => hot = Some(i),
            _ => return None,
        }
    }
    hot
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("node {node}: leaf payload is not a one-hot variable")]
    InvalidLeaf { node: usize },
    #[error("node {node}: operator {op} expects {expected} children, has {got}")]
    Arity {
        node: usize,
        op: usize,
        expected: usize,
        got: usize,
    },
}

/// Satisfying assignments as a 64-bit mask: bit `s` is set when the
/// formula holds under assignment `s`, where variable `v` is true iff
/// `s >> v & 1 == 1`. The 64 assignments fill a `u64` exactly, so
/// negation is plain complement.
pub fn satisfying_mask(tree: &Tree) -> Result<u64, FormulaError> {
    let mut masks: Vec<u64> = vec![0; tree.len()];
    for idx in tree.postorder() {
        masks[idx] = match tree.node(idx) {
            TreeNode::Leaf { payload } => {
                let v = decode_var(payload).ok_or(FormulaError::InvalidLeaf { node: idx })?;
                let mut m = 0u64;
                for s in 0..64u64 {
                    if (s >> v) & 1 == 1 {
                        m |= 1 << s;
                    }
                }
                m
            }
            TreeNode::Internal { op, children } => {
                let expected = if *op == OP_NOT { 1 } else { 2 };
                if children.len() != expected {
                    return Err(FormulaError::Arity {
                        node: idx,
                        op: *op,
                        expected,
                        got: children.len(),
                    });
                }
                match *op {
                    OP_AND => masks[children[0]] & masks[children[1]],
                    OP_OR => masks[children[0]] | masks[children[1]],
                    OP_NOT => !masks[children[0]],
                    other => panic!("operator id {other} out of range"),
                }
            }
        };
    }
    Ok(masks[tree.root()])
}

/// Relation between two formulas, decided on the full 64-assignment
/// truth table. Checked in order: equivalence, the two strict
/// containments, negation, alternation, cover, independence.
pub fn relation(left: &Tree, right: &Tree) -> Result<Relation, FormulaError> {
    let a = satisfying_mask(left)?;
    let b = satisfying_mask(right)?;
    Ok(relation_of_masks(a, b))
}

fn relation_of_masks(a: u64, b: u64) -> Relation {
    if a == b {
        Relation::Equiv
    } else if a & b == a {
        Relation::Fwd
    } else if a & b == b {
        Relation::Rev
    } else if a & b == 0 && a | b == u64::MAX {
        Relation::Neg
    } else if a & b == 0 {
        Relation::Alt
    } else if a | b == u64::MAX {
        Relation::Cov
    } else {
        Relation::Indep
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub left: Tree,
    pub right: Tree,
    pub relation: Relation,
}

impl Sample {
    pub fn render(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.relation.name(),
            render_formula(&self.left, self.left.root()),
            render_formula(&self.right, self.right.root())
        )
    }
}

fn render_formula(tree: &Tree, idx: usize) -> String {
    match tree.node(idx) {
        TreeNode::Leaf { payload } => {
            VARIABLES[decode_var(payload).expect("unrenderable leaf payload")].to_string()
        }
        TreeNode::Internal { op, children } => match *op {
            OP_NOT => format!("( not {} )", render_formula(tree, children[0])),
            OP_AND | OP_OR => format!(
                "( {} {} {} )",
                render_formula(tree, children[0]),
                OPERATORS[*op],
                render_formula(tree, children[1])
            ),
            other => panic!("operator id {other} out of range"),
        },
    }
}

pub fn parse_line(line: &str) -> Result<Sample, ParseError> {
    let mut fields = line.splitn(3, '\t');
    let rel_str = fields.next().unwrap_or("");
    let left_str = fields.next().ok_or_else(|| ParseError {
        offset: line.len(),
        msg: "missing TAB after relation".into(),
    })?;
    let right_str = fields.next().ok_or_else(|| ParseError {
        offset: line.len(),
        msg: "missing second formula field".into(),
    })?;
    let relation: Relation = rel_str.parse().map_err(|msg| ParseError { offset: 0, msg })?;

    let left_base = rel_str.len() + 1;
    let mut tokens = Tokens::new(left_str, left_base)?;
    let left = parse_formula(&mut tokens)?;
    tokens.finish()?;

    let right_base = left_base + left_str.len() + 1;
    let mut tokens = Tokens::new(right_str, right_base)?;
    let right = parse_formula(&mut tokens)?;
    tokens.finish()?;

    Ok(Sample {
        left,
        right,
        relation,
    })
}

fn parse_formula(tokens: &mut Tokens<'_>) -> Result<Tree, ParseError> {
    match tokens.next() {
        Some(("(", _)) => {
            if let Some(("not", _)) = tokens.peek() {
                tokens.next();
                let inner = parse_formula(tokens)?;
                tokens.expect(")")?;
                return Ok(Tree::internal(OP_NOT, vec![inner]));
            }
            let left = parse_formula(tokens)?;
            let (conn, conn_off) = tokens.next().ok_or_else(|| ParseError {
                offset: tokens.end_offset(),
                msg: "expected 'and' or 'or', found end of line".into(),
            })?;
            let op = match conn {
                "and" => OP_AND,
                "or" => OP_OR,
                other => {
                    return Err(ParseError {
                        offset: conn_off,
                        msg: format!("expected 'and' or 'or', found {other:?}"),
                    })
                }
            };
            let right = parse_formula(tokens)?;
            tokens.expect(")")?;
            Ok(Tree::internal(op, vec![left, right]))
        }
        Some((tok, off)) => {
            let v = var_index(tok).ok_or(ParseError {
                offset: off,
                msg: format!("expected variable or '(', found {tok:?}"),
            })?;
            Ok(Tree::leaf(encode_var(v)))
        }
        None => Err(ParseError {
            offset: tokens.end_offset(),
            msg: "expected formula, found end of line".into(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    /// Maximum number of logical operators per formula.
    pub max_operators: usize,
}

impl GenConfig {
    pub fn new(seed: u64, count: usize, max_operators: usize) -> Self {
        Self {
            seed,
            count,
            max_operators,
        }
    }
}

/// Deterministic pair generation. Tautologies and contradictions on
/// either side are rejected (they collapse several relation
/// definitions); capped per-sample redraws keep every class at or below
/// half the corpus and rendered lines out of `exclude`.
pub fn generate(cfg: &GenConfig, exclude: &HashSet<String>) -> Vec<Sample> {
    let mut out: Vec<Sample> = Vec::with_capacity(cfg.count);
    let mut class_counts = [0usize; NUM_CLASSES];
    for i in 0..cfg.count {
        let mut rng = sample_rng(cfg.seed, i as u64);
        let mut chosen = None;
        for attempt in 0..MAX_ATTEMPTS {
            let left = gen_formula(&mut rng, cfg.max_operators);
            let right = gen_formula(&mut rng, cfg.max_operators);
            let a = satisfying_mask(&left).expect("generated formulas are well-formed");
            let b = satisfying_mask(&right).expect("generated formulas are well-formed");
            if a == 0 || a == u64::MAX || b == 0 || b == u64::MAX {
                continue;
            }
            let relation = relation_of_masks(a, b);
            let sample = Sample {
                left,
                right,
                relation,
            };
            if !exclude.is_empty() && exclude.contains(&sample.render()) {
                continue;
            }
            let cap = (out.len() + 1).div_ceil(2); // ceil(50% of corpus after acceptance)
            let last_attempt = attempt == MAX_ATTEMPTS - 1;
            if class_counts[relation.index()] < cap.max(1) || last_attempt {
                chosen = Some(sample);
                break;
            }
        }
        let sample = chosen.expect("attempt cap always yields a candidate");
        class_counts[sample.relation.index()] += 1;
        out.push(sample);
    }
    out
}

/// Recursive grammar expansion under an operator budget. A zero budget
/// forces a bare variable.
fn gen_formula(rng: &mut impl Rng, budget: usize) -> Tree {
    if budget == 0 {
        return Tree::leaf(encode_var(rng.random_range(0..INPUT_DIM)));
    }
    match rng.random_range(0..4) {
        0 => Tree::leaf(encode_var(rng.random_range(0..INPUT_DIM))),
        1 => Tree::internal(OP_NOT, vec![gen_formula(rng, budget - 1)]),
        conn => {
            let left_budget = rng.random_range(0..budget);
            let right_budget = budget - 1 - left_budget;
            let op = if conn == 2 { OP_AND } else { OP_OR };
            Tree::internal(
                op,
                vec![gen_formula(rng, left_budget), gen_formula(rng, right_budget)],
            )
        }
    }
}

/// Re-checks every relation against the truth-table oracle.
pub fn verify(samples: &[Sample]) -> Result<(), FormulaError> {
    for s in samples {
        let r = relation(&s.left, &s.right)?;
        assert_eq!(r, s.relation, "relation mismatch against oracle");
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
