use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::float;
use crate::tensor::Tensor;

/// Standard transformer encoding: `[sin(p·ω₀), cos(p·ω₀), sin(p·ω₁), ...]`
/// with `ωᵢ = 10000^(−2i/dim)`.
pub fn sinusoidal_posenc(position: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("positional encoding width {dim} is odd")));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = float::powf(10000.0, -((2 * i) as f64) / dim as f64);
        out.push(float::sin(position * freq));
        out.push(float::cos(position * freq));
    }
    Ok(out)
}

/// Row-major `gh × gw` token grid: the first half of each vector encodes the
/// row, the second half the column.
pub fn posenc_2d(gh: usize, gw: usize, dim: usize) -> Result<Tensor> {
    if dim % 4 != 0 {
        return Err(Error::InvalidArgument(format!("2D encoding width {dim} not a multiple of 4")));
    }
    let half = dim / 2;
    let rows: Vec<Vec<f64>> = (0..gh).map(|r| sinusoidal_posenc(r as f64, half)).collect::<Result<_>>()?;
    let cols: Vec<Vec<f64>> = (0..gw).map(|c| sinusoidal_posenc(c as f64, half)).collect::<Result<_>>()?;
    let mut out = Tensor::zeros(gh * gw, dim);
    for r in 0..gh {
        for c in 0..gw {
            let row = out.row_mut(r * gw + c);
            row[..half].copy_from_slice(&rows[r]);
            row[half..].copy_from_slice(&cols[c]);
        }
    }
    Ok(out)
}
