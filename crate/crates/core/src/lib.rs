//! Bracketed raw image restoration with high/low frequency decomposition.
//!
//! The crate covers the full pipeline: exposure normalization and gamma
//! pairing of a raw bracket ([`imaging`]), frequency primitives
//! ([`freqops`]), learnable blocks built on a small reverse-mode autodiff
//! engine ([`autograd`], [`blocks`]), the recurrent multi-frame network
//! ([`model`]), a synthetic degradation simulator ([`simdata`]), μ-law
//! domain training and metrics ([`training`]), and a checksummed tensor
//! container ([`container`]).

pub mod autograd;
pub mod blocks;
pub mod config;
pub mod container;
pub mod error;
pub mod freqops;
pub mod gradcheck;
pub mod gradsuite;
pub mod imaging;
pub mod model;
pub mod params;
pub mod rng;
pub mod simdata;
pub mod training;

pub use error::{ContainerError, Error, Result};

/// `(batch, channel, height, width)` array.
pub type FeatureMap<T = f32> = ndarray::Array4<T>;
