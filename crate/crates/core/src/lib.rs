//! Partial fitting of procedural models to point clouds.
//!
//! Models are sampled hierarchically, scored against a query cloud with
//! measure-weighted similarity metrics, and fitted by Metropolis-Hastings
//! with early rejection and parallel tempering.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod experiments;
pub mod geometry;
pub mod grammar;
pub mod io;
pub mod metrics;
pub mod spatial_index;
