use std::path::Path;

use image::{ImageBuffer, Rgb};
use mvdit_core::Grid;

use super::{FormatError, Result};

pub fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 3-channel grid with values in `[0, 1]` as 8-bit RGB.
pub fn write_png(path: &Path, grid: &Grid) -> Result<()> {
    if grid.channels != 3 {
        return Err(FormatError::parse(path, format!("expected 3 channels, got {}", grid.channels)));
    }
    let bytes: Vec<u8> = grid.data.iter().map(|&x| quantize(x)).collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(grid.width as u32, grid.height as u32, bytes)
        .ok_or_else(|| FormatError::parse(path, "buffer size"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| FormatError::parse(path, e.to_string()))
}

pub fn read_png(path: &Path) -> Result<Grid> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => FormatError::io(path, io),
        other => FormatError::parse(path, other.to_string()),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Grid::from_vec(h as usize, w as usize, 3, data).map_err(|e| FormatError::parse(path, e.to_string()))
}

/// Reads a PNG and checks its size.
pub fn read_png_sized(path: &Path, height: usize, width: usize) -> Result<Grid> {
    let g = read_png(path)?;
    if (g.height, g.width) != (height, width) {
        return Err(FormatError::Resolution {
            path: path.into(),
            found: (g.height, g.width),
            expected: (height, width),
        });
    }
    Ok(g)
}
