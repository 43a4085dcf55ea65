//! Training and evaluation engine for self-supervised collaborative filtering
//! on implicit feedback.
//!
//! The framework trains a shared encoder (matrix factorization or light graph
//! convolution) through two branches: an online branch with a linear predictor
//! head and a gradient-stopped target branch whose embeddings are perturbed by
//! one of three schemes (historical momentum mixing, embedding dropout, edge
//! pruning). The loss is a symmetrized negative cosine similarity between the
//! branches. A supervised pairwise-ranking baseline over the same encoders is
//! included for comparison, along with a full-ranking top-K evaluator.
//!
//! Everything is 64-bit floats and deterministic per seed: identical config
//! and seed reproduce identical logs, checkpoints, and reports byte for byte.

pub mod baselines;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod graph;
pub mod numerics;
pub mod rng;
pub mod selfcf;
pub mod synth;

pub use error::{Error, Result};
