use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};

/// Dense `height × width × channels` array, row-major with channels last.
/// Used for images, latents and per-pixel feature maps alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(shape_err(height * width * channels, data.len()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = self.index(row, col, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Concatenates grids of identical spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Grid]) -> Result<Grid> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("at least one grid", 0))?;
        let (h, w) = (first.height, first.width);
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut out = Grid::zeros(h, w, channels);
        for p in parts {
            if p.height != h || p.width != w {
                return Err(shape_err(
                    alloc::format!("{h}x{w}"),
                    alloc::format!("{}x{}", p.height, p.width),
                ));
            }
        }
        for r in 0..h {
            for c in 0..w {
                let mut off = out.index(r, c, 0);
                for p in parts {
                    let src = p.pixel(r, c);
                    out.data[off..off + src.len()].copy_from_slice(src);
                    off += src.len();
                }
            }
        }
        Ok(out)
    }
}
