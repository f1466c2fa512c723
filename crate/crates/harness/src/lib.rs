//! Toy-scene generation, training, sampling and evaluation around
//! `mvdit-core`.

pub mod config;
pub mod data;
pub mod eval;
pub mod formats;
pub mod model_io;
pub mod overfit;
pub mod sample;
pub mod scene;
pub mod sweep;
pub mod train;

pub use config::{RunConfig, Variant};
