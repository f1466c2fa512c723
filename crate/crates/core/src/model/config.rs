use alloc::format;

use crate::error::{Error, Result};

/// How the post-training control reaches the transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    /// Per-block scale and shift from the control MLP.
    Modulation,
    /// A learned additive positional encoding on target tokens.
    PositionalEncoding,
    /// Per-view cross-attention from target tokens to control tokens.
    CrossAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PluckerEncoding {
    None,
    Raw,
    Siren,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlInputs {
    pub plucker: PluckerEncoding,
    pub anchor: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Camera-token conditioning.
    Midtrain,
    /// Plücker and spatial-anchor control.
    Posttrain { injection: Injection, inputs: ControlInputs },
}

impl Mode {
    pub fn posttrain(injection: Injection, plucker: PluckerEncoding, anchor: bool) -> Self {
        Mode::Posttrain {
            injection,
            inputs: ControlInputs { plucker, anchor },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch: usize,
    pub latent_downsample: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub max_views: usize,
    pub mlp_ratio: usize,
    pub siren_features: usize,
    pub siren_omega0: f64,
    pub global_embedding: bool,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            dim: 128,
            heads: 4,
            patch: 2,
            latent_downsample: 2,
            image_height: 32,
            image_width: 32,
            channels: 3,
            max_views: 8,
            mlp_ratio: 4,
            siren_features: 32,
            siren_omega0: 30.0,
            global_embedding: true,
            mode: Mode::Midtrain,
        }
    }
}

/// Side of the mean-pool grid used by the toy global encoder.
pub const GLOBAL_POOL: usize = 4;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidArgument(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.dim % 4 != 0 {
            return bad(format!("dim {} must be a multiple of 4 for 2D positional encoding", self.dim));
        }
        if self.patch == 0 {
            return bad("patch must be at least 1".into());
        }
        if ![1, 2, 4, 8].contains(&self.latent_downsample) {
            return bad(format!("latent_downsample {} not in {{1, 2, 4, 8}}", self.latent_downsample));
        }
        let f = self.latent_downsample * self.patch;
        for (name, v) in [("height", self.image_height), ("width", self.image_width)] {
            if v % f != 0 {
                return Err(Error::NotDivisible { dim: v, factor: f });
            }
            if self.global_embedding && v % GLOBAL_POOL != 0 {
                return bad(format!("image {name} {v} not divisible by {GLOBAL_POOL}"));
            }
        }
        if self.channels == 0 || self.max_views == 0 || self.mlp_ratio == 0 || self.siren_features == 0 {
            return bad("channels, max_views, mlp_ratio and siren_features must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn latent_height(&self) -> usize {
        self.image_height / self.latent_downsample
    }

    pub fn latent_width(&self) -> usize {
        self.image_width / self.latent_downsample
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.latent_height() / self.patch, self.latent_width() / self.patch)
    }

    pub fn tokens_per_view(&self) -> usize {
        let (h, w) = self.token_grid();
        h * w
    }

    /// Width of one raw (unprojected) patch token.
    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Sequence length for `views` targets plus the given extra images.
    pub fn sequence_len(&self, views: usize, reference: bool, face: bool) -> usize {
        (views + reference as usize + face as usize) * self.tokens_per_view()
    }
}
