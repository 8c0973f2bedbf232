//! Uncertainty-aware multi-label evidential classification at desk scale.
//!
//! The crate trains a toy action-unit detector end to end: multi-scale
//! temporal-difference features, probabilistic per-AU embeddings, graph
//! attention across facial regions, and Beta-evidential prediction heads
//! optimized with an asymmetric evidential loss. Every closed-form loss is
//! paired with an independent numerical oracle (adaptive quadrature, finite
//! differences, Monte Carlo) so the desk-scale pipeline is verifiable.

pub mod config;
pub mod cvae;
pub mod evidence;
pub mod harness;
pub mod loss;
pub mod motion;
pub mod quadrature;
pub mod region;
pub mod relation;
pub mod rng;
pub mod special;
pub mod tensor;
pub mod verify;
