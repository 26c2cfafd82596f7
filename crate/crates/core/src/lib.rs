//! Configuration-driven training of small neural networks on audio tasks.
//!
//! The workflow has five stages, each backed by a module and exposed through
//! the `audpipe` binary:
//!
//! | stage         | module                     |
//! |---------------|----------------------------|
//! | `fetch`       | [`manifest`]               |
//! | `preprocess`  | [`dsp`], [`pipeline`]      |
//! | `train`       | [`nn`], [`train`]          |
//! | `postprocess` | [`postprocess`]            |
//! | `inference`   | [`inference`]              |
//!
//! Every run is fully determined by one composed [`config::ConfigNode`] and
//! the master seed it contains. All randomness flows through
//! [`rng::derive_seed`] and [`rng::Rng`], so two executions of the same
//! configuration produce byte-identical logs and checkpoints.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod cli;
pub mod config;
pub mod dsp;
pub mod error;
pub mod features;
pub mod inference;
pub mod manifest;
pub mod nn;
pub mod pipeline;
pub mod postprocess;
pub mod rng;
pub mod train;

pub use config::ConfigNode;
pub use error::{Error, Result};
pub use features::FeatureArray;
pub use rng::{derive_seed, Rng};
