//! Patch tokenization as index maps, so the same layout can be used on
//! constants and inside the autodiff graph.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::tensor::Tensor;

/// Gather index taking an `h×w×c` grid (flattened HWC) to
/// `(h/p)(w/p)` tokens of width `c·p²`. Tokens are in row-major patch order;
/// within a token, values are ordered by patch row, patch column, channel.
pub fn patch_index(h: usize, w: usize, c: usize, p: usize) -> Result<Vec<u32>> {
    if p == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    for dim in [h, w] {
        if dim % p != 0 {
            return Err(Error::NotDivisible { dim, factor: p });
        }
    }
    let mut idx = Vec::with_capacity(h * w * c);
    for ty in 0..h / p {
        for tx in 0..w / p {
            for py in 0..p {
                for px in 0..p {
                    let base = ((ty * p + py) * w + tx * p + px) * c;
                    idx.extend((0..c).map(|ch| (base + ch) as u32));
                }
            }
        }
    }
    Ok(idx)
}

/// Raw patch tokens of a latent grid, one row per token.
pub fn patchify(latent: &Grid, p: usize) -> Result<Tensor> {
    let idx = patch_index(latent.height, latent.width, latent.channels, p)?;
    let n = (latent.height / p) * (latent.width / p);
    let data = idx.iter().map(|&i| latent.data[i as usize]).collect();
    Tensor::from_vec(n, latent.channels * p * p, data)
}

pub fn unpatchify(tokens: &Tensor, h: usize, w: usize, c: usize, p: usize) -> Result<Grid> {
    let idx = patch_index(h, w, c, p)?;
    if tokens.len() != idx.len() || tokens.cols() != c * p * p {
        return Err(crate::error::shape_err(idx.len(), tokens.len()));
    }
    let mut out = Grid::zeros(h, w, c);
    for (&i, &v) in idx.iter().zip(tokens.data()) {
        out.data[i as usize] = v;
    }
    Ok(out)
}

/// `(f²·c) × c` matrix averaging the rows produced by
/// `patch_index(.., c, f)` into an `f×` area-downsampled grid.
pub fn area_pool_matrix(c: usize, f: usize) -> Tensor {
    let mut m = Tensor::zeros(f * f * c, c);
    let inv = 1.0 / (f * f) as f64;
    for k in 0..f * f {
        for ch in 0..c {
            m.set(k * c + ch, ch, inv);
        }
    }
    m
}
