//! A parameter-free stand-in for a latent autoencoder: area-average down,
//! nearest-neighbour up.

use crate::error::{Error, Result};
use crate::grid::Grid;

pub fn latent_codec_encode(image: &Grid, factor: usize) -> Result<Grid> {
    area_downsample(image, factor)
}

pub fn latent_codec_decode(latent: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 {
        return Err(Error::InvalidArgument("codec factor must be positive".into()));
    }
    let mut out = Grid::zeros(latent.height * factor, latent.width * factor, latent.channels);
    for r in 0..out.height {
        for c in 0..out.width {
            for ch in 0..out.channels {
                out.set(r, c, ch, latent.get(r / factor, c / factor, ch));
            }
        }
    }
    Ok(out)
}

pub fn area_downsample(grid: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be positive".into()));
    }
    for dim in [grid.height, grid.width] {
        if dim % factor != 0 {
            return Err(Error::NotDivisible { dim, factor });
        }
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let (h, w) = (grid.height / factor, grid.width / factor);
    let mut out = Grid::zeros(h, w, grid.channels);
    let inv = 1.0 / (factor * factor) as f64;
    for r in 0..h {
        for c in 0..w {
            for ch in 0..grid.channels {
                // Mean as first sample plus mean deviation, exact on flat blocks.
                let first = grid.get(r * factor, c * factor, ch);
                let mut s = 0.0;
                for dr in 0..factor {
                    for dc in 0..factor {
                        s += grid.get(r * factor + dr, c * factor + dc, ch) - first;
                    }
                }
                out.set(r, c, ch, first + s * inv);
            }
        }
    }
    Ok(out)
}
