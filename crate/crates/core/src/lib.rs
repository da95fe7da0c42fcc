//! Fine-grained entity typing over distantly supervised data with
//! graph-refined mention representations.
//!
//! The pipeline runs in two phases. Phase-I produces a noisy representation
//! for every mention from its own sentence ([`encoder`]). Phase-II builds a
//! corpus-level graph that links mentions whose contextual embeddings sit
//! close to the same type pivot ([`graph`]), and refines the Phase-I rows with
//! a two-layer edge-weighted graph convolution ([`gcn`]). Refined rows are
//! scored against label embeddings with margin losses ([`typing`]), trained
//! with Adam ([`training`]) and decoded top-down through the type hierarchy
//! ([`infer`]).
//!
//! With the default `parallel` feature the per-mention and per-row loops run
//! on rayon. Without it every loop runs sequentially; both builds produce
//! bitwise-identical results.

pub mod checkpoint;
pub mod corpus;
pub mod embed;
pub mod encoder;
pub mod exec;
pub mod gcn;
pub mod graph;
pub mod infer;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod synthetic;
pub mod training;
pub mod typing;

mod error;

pub use error::{Error, Result};
