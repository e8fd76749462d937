//! Auditing toolkit for video moment retrieval benchmarks: corpus loading,
//! verb statistics, location priors, video-blind baselines, multi-reference
//! metrics and a segment-shuffle sensitivity test.

pub mod baselines;
pub mod blindtan;
pub mod corpus;
pub mod density;
pub mod error;
pub mod io;
pub mod lexicon;
pub mod metrics;
pub mod seed;
pub mod shuffle;
pub mod synthetic;

pub use error::{Error, Result};
