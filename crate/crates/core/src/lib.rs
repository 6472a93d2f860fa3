//! Deterministic simulator and library for privacy-preserving federated
//! embedding learning.
//!
//! Clients contrastively train local linear text encoders on synthetic
//! query–chunk corpora, exchange additively-encrypted parameter updates
//! with a similarity-distillation penalty, and the resulting models are
//! scored with a full retrieval- and generation-metric harness.
//!
//! Module map:
//!
//! * [`tensor`] — dense `f64` vectors/matrices, the numeric substrate
//! * [`corpus`] — seeded synthetic corpora with a hidden token bijection
//! * [`embedder`] — hashed features, linear encoder, contrastive and
//!   distillation losses with analytic gradients
//! * [`he`] — Paillier-style additive homomorphic encryption with a
//!   fixed-point codec for real-vector aggregation
//! * [`fed`] — the federated round loop and the five training strategies
//! * [`retrieval`] — exact k-NN and the retrieval metric suite
//! * [`texteval`] — n-gram / edit-distance generation metrics

pub mod corpus;
pub mod embedder;
pub mod error;
pub mod fed;
pub mod he;
pub mod io;
pub mod retrieval;
pub mod tensor;
pub mod texteval;
mod util;

pub use error::{Error, Result};
