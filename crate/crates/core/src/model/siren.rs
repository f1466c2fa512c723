use crate::camera::PluckerGrid;
use crate::error::{shape_err, Result};
use crate::float;
use crate::grid::Grid;
use crate::model::codec::area_downsample;
use crate::tensor::Tensor;

/// `sin(ω₀·(W·p + b))` per pixel, then area-downsampled by `downsample`.
/// `w` is `6 × F` and `b` is `1 × F`.
pub fn siren_encode(plucker: &PluckerGrid, w: &Tensor, b: &Tensor, omega0: f64, downsample: usize) -> Result<Grid> {
    if w.rows() != 6 || b.shape() != (1, w.cols()) {
        return Err(shape_err("6xF weights and 1xF bias", alloc::format!("{:?} and {:?}", w.shape(), b.shape())));
    }
    let f = w.cols();
    let mut out = Grid::zeros(plucker.height, plucker.width, f);
    for (i, p) in plucker.iter().enumerate() {
        for j in 0..f {
            let mut pre = b.get(0, j);
            for (k, pk) in p.iter().enumerate() {
                pre += w.get(k, j) * pk;
            }
            out.data[i * f + j] = float::sin(omega0 * pre);
        }
    }
    area_downsample(&out, downsample)
}
