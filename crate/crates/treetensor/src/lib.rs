//! Tensor-based recursive state transitions for tree-structured data.
//!
//! The crate provides three child-state aggregation functions behind one
//! interface — a full augmented-tensor multi-affine map, its weighted-sum
//! specialization, and a Tucker-factored approximation — embedded in
//! Tree-LSTM encoders, together with reverse-mode autodiff over per-tree
//! computation graphs, grammar-driven dataset generation with exact
//! oracles, and an AdaDelta training/evaluation harness.

pub mod agg;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod lstm;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod tree;
