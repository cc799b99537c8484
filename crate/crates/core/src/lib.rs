//! Neural ensemble search: build a pool of networks with varying
//! architectures, then greedily select an ensemble from it.
//!
//! Pools come from random search ([`search::nes_rs`]) or regularized
//! evolution ([`search::nes_re`]), and deep-ensemble baselines sit alongside
//! them. Evaluators supply predictions from a tabular benchmark, a planted
//! synthetic benchmark or a small trainer. See the crate's `examples/`.

// `!(x > 0.0)` style checks are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod search;
pub mod selection;
pub mod space;
pub mod store;
pub mod synthetic;
pub mod tabular;
pub mod trainer;
