//! The multi-view diffusion transformer.

pub mod codec;
pub mod config;
pub mod inputs;
mod mvdit;
pub mod patch;
pub mod posenc;
pub mod siren;

pub use codec::{latent_codec_decode, latent_codec_encode};
pub use config::{ControlInputs, Injection, Mode, ModelConfig, PluckerEncoding};
pub use inputs::{
    Conditioning, ControlSignal, GlobalEmbedding, GlobalSource, ModelInput, Role, Segment, ViewConditioning,
    ViewTokenBatch,
};
pub use mvdit::{decode_latent, encode_image, Mvdit, CAMERA_PREFIX, CONTROL_PREFIX};
pub use patch::{patchify, unpatchify};
pub use posenc::{posenc_2d, sinusoidal_posenc};
pub use siren::siren_encode;
