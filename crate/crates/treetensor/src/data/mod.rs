//! Grammar-driven dataset generation, parsing, serialization, and exact
//! oracles for the two tree-classification tasks.
//!
//! File format (both tasks): UTF-8 text, one sample per line,
//! TAB-separated fields, single-space token separation inside
//! expressions. Generation is deterministic per seed via per-sample
//! PCG32 streams.

pub mod listops;
pub mod lrt;

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

/// Which task a model, dataset, or token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Listops,
    Lrt,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Listops => "listops",
            TaskKind::Lrt => "lrt",
        }
    }

    /// Leaf payload dimension `m`.
    pub fn input_dim(self) -> usize {
        match self {
            TaskKind::Listops => listops::INPUT_DIM,
            TaskKind::Lrt => lrt::INPUT_DIM,
        }
    }

    /// Maximum outdegree `L`.
    pub fn context_size(self) -> usize {
        match self {
            TaskKind::Listops => listops::CONTEXT_SIZE,
            TaskKind::Lrt => lrt::CONTEXT_SIZE,
        }
    }

    pub fn num_operators(self) -> usize {
        match self {
            TaskKind::Listops => listops::OPERATORS.len(),
            TaskKind::Lrt => lrt::OPERATORS.len(),
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            TaskKind::Listops => listops::NUM_CLASSES,
            TaskKind::Lrt => lrt::NUM_CLASSES,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "listops" => Ok(TaskKind::Listops),
            "lrt" => Ok(TaskKind::Lrt),
            other => Err(format!("unknown task {other:?} (expected listops|lrt)")),
        }
    }
}

/// Payload vector for a leaf token of the given task.
pub fn encode_leaf(task: TaskKind, token: &str) -> Result<Vec<f64>, ParseError> {
    match task {
        TaskKind::Listops => match token {
            "_" => Ok(listops::encode_bottom()),
            t => t
                .parse::<u8>()
                .ok()
                .filter(|&d| d <= 9)
                .map(listops::encode_digit)
                .ok_or_else(|| ParseError {
                    offset: 0,
                    msg: format!("unknown leaf token {token:?}"),
                }),
        },
        TaskKind::Lrt => lrt::var_index(token)
            .map(lrt::encode_var)
            .ok_or_else(|| ParseError {
                offset: 0,
                msg: format!("unknown variable {token:?}"),
            }),
    }
}

/// Malformed input line: byte offset of the offending token plus reason.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("byte {offset}: {msg}")]
pub struct ParseError {
    pub offset: usize,
    pub msg: String,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
}

/// Single-space tokenizer tracking byte offsets for error reporting.
pub(crate) struct Tokens<'a> {
    items: Vec<(&'a str, usize)>,
    pos: usize,
    end: usize,
}

impl<'a> Tokens<'a> {
    pub fn new(s: &'a str, base_offset: usize) -> Result<Self, ParseError> {
        let mut items = Vec::new();
        let mut offset = 0;
        for tok in s.split(' ') {
            if tok.is_empty() {
                return Err(ParseError {
                    offset: base_offset + offset,
                    msg: "empty token (stray space)".into(),
                });
            }
            items.push((tok, base_offset + offset));
            offset += tok.len() + 1;
        }
        Ok(Self {
            items,
            pos: 0,
            end: base_offset + s.len(),
        })
    }

    pub fn next(&mut self) -> Option<(&'a str, usize)> {
        let item = self.items.get(self.pos).copied();
        if item.is_some() {
            self.pos += 1;
        }
        item
    }

    pub fn peek(&self) -> Option<(&'a str, usize)> {
        self.items.get(self.pos).copied()
    }

    pub fn expect(&mut self, tok: &str) -> Result<(), ParseError> {
        match self.next() {
            Some((t, _)) if t == tok => Ok(()),
            Some((t, off)) => Err(ParseError {
                offset: off,
                msg: format!("expected {tok:?}, found {t:?}"),
            }),
            None => Err(ParseError {
                offset: self.end,
                msg: format!("expected {tok:?}, found end of line"),
            }),
        }
    }

    pub fn finish(&mut self) -> Result<(), ParseError> {
        match self.next() {
            None => Ok(()),
            Some((t, off)) => Err(ParseError {
                offset: off,
                msg: format!("trailing token {t:?}"),
            }),
        }
    }

    pub fn end_offset(&self) -> usize {
        self.end
    }
}

/// Writes one rendered line per sample.
pub fn write_lines<I>(path: &Path, lines: I) -> std::io::Result<()>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_ref().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads non-empty lines with 1-based line numbers.
pub fn read_lines(path: &Path) -> std::io::Result<Vec<(usize, String)>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if !line.is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Histogram rendering shared by corpus statistics output.
pub fn histogram_line<K: std::fmt::Display>(pairs: &[(K, usize)]) -> String {
    let mut s = String::new();
    for (i, (k, n)) in pairs.iter().enumerate() {
        if i > 0 {
            s.push_str("  ");
        }
        let _ = write!(s, "{k}:{n}");
    }
    s
}
