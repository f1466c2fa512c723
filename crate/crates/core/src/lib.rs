//! Core algorithms for a camera-conditioned multi-view diffusion transformer.
//!
//! Everything here is `no_std` with `alloc`; file formats, the CLI and
//! scene generation live in the `mvdit` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod autograd;
pub mod camera;
pub mod consistency;
pub mod error;
pub mod float;
pub mod grid;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::Grid;
pub use tensor::Tensor;
