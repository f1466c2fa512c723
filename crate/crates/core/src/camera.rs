//! Pinhole cameras, Plücker ray fields and spatial-anchor rasterization.
//!
//! Poses are stored world-to-camera (`x_c = R·X + t`) with row-major 3×3
//! rotations. The camera frame is x right, y down, z forward.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Matrix3x4, Vector3};

use crate::error::{Error, Result};
use crate::float;
use crate::grid::Grid;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Depth at or below which a point counts as behind the camera.
pub const BEHIND_EPS: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

/// Outcome of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64 },
    BehindCamera,
}

impl Projection {
    pub fn pixel(self) -> Option<(f64, f64)> {
        match self {
            Projection::Pixel { u, v } => Some((u, v)),
            Projection::BehindCamera => None,
        }
    }
}

fn check_rotation(r: &Mat3, what: &str) -> Result<()> {
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    if !(err <= ORTHO_TOL) {
        return Err(Error::InvalidCamera(format!(
            "{what} not orthonormal (max |RᵀR - I| = {err:e})"
        )));
    }
    let det = r.determinant();
    if !((det - 1.0).abs() <= ORTHO_TOL) {
        return Err(Error::InvalidCamera(format!("{what} determinant {det} != +1")));
    }
    Ok(())
}

impl CameraParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidCamera(format!(
                "image size {}x{} below 8x8",
                self.width, self.height
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.translation.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("camera parameters"));
        }
        check_rotation(&self.rotation, "rotation")
    }

    /// Camera center in world coordinates, `-Rᵀ·t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction (+z of the camera frame) in world coordinates.
    pub fn optical_axis(&self) -> Vec3 {
        self.rotation.transpose() * Vec3::z()
    }

    /// Normalizer for pixel errors: the larger image side.
    pub fn resolution(&self) -> f64 {
        self.width.max(self.height) as f64
    }

    pub fn intrinsics(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K·[R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        self.intrinsics() * rt
    }

    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// Flattened intrinsics followed by row-major `[R | t]`: 16 numbers.
    /// Intrinsics are divided by the image size so the values stay O(1).
    pub fn flat16(&self) -> [f64; 16] {
        let (w, h) = (self.width as f64, self.height as f64);
        let mut out = [0.0; 16];
        out[0] = self.fx / w;
        out[1] = self.fy / h;
        out[2] = self.cx / w;
        out[3] = self.cy / h;
        for r in 0..3 {
            for c in 0..3 {
                out[4 + r * 4 + c] = self.rotation[(r, c)];
            }
            out[4 + r * 4 + 3] = self.translation[r];
        }
        out
    }
}

pub fn project_point(cam: &CameraParams, x: &Vec3) -> Projection {
    let xc = cam.to_camera(x);
    if xc.z <= BEHIND_EPS {
        return Projection::BehindCamera;
    }
    Projection::Pixel {
        u: cam.fx * xc.x / xc.z + cam.cx,
        v: cam.fy * xc.y / xc.z + cam.cy,
    }
}

/// World-frame ray through continuous pixel coordinates `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

pub fn ray_for_pixel(cam: &CameraParams, u: f64, v: f64) -> Ray {
    let local = Vec3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    let local = local / float::sqrt(local.dot(&local));
    Ray {
        origin: cam.center(),
        direction: cam.rotation.transpose() * local,
    }
}

/// Per-pixel `(d, m)` with unit direction `d` and moment `m = o × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerGrid {
    pub height: usize,
    pub width: usize,
    data: Vec<[f64; 6]>,
}

impl PluckerGrid {
    pub fn get(&self, row: usize, col: usize) -> [f64; 6] {
        self.data[row * self.width + col]
    }

    pub fn direction(&self, row: usize, col: usize) -> Vec3 {
        let p = self.get(row, col);
        Vec3::new(p[0], p[1], p[2])
    }

    pub fn moment(&self, row: usize, col: usize) -> Vec3 {
        let p = self.get(row, col);
        Vec3::new(p[3], p[4], p[5])
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64; 6]> {
        self.data.iter()
    }

    /// The ray field as a 6-channel grid.
    pub fn to_grid(&self) -> Grid {
        let data = self.data.iter().flat_map(|p| p.iter().copied()).collect();
        Grid {
            height: self.height,
            width: self.width,
            channels: 6,
            data,
        }
    }
}

pub fn plucker_grid(cam: &CameraParams, height: usize, width: usize) -> PluckerGrid {
    let mut data = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let ray = ray_for_pixel(cam, col as f64 + 0.5, row as f64 + 0.5);
            let m = ray.origin.cross(&ray.direction);
            let d = ray.direction;
            data.push([d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    PluckerGrid {
        height,
        width,
        data,
    }
}

/// Oriented 3D point `[R | t]`; columns of `R` are the anchor's axes in world
/// coordinates and `t` its position.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAnchor {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl SpatialAnchor {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, "anchor rotation")?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// The anchor's facing direction (third axis).
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Azimuth in degrees `[0, 360)` of a camera around the anchor, measured
    /// about the anchor's second axis. A camera looking straight at the
    /// anchor's front reads 0°.
    pub fn azimuth_deg(&self, cam: &CameraParams) -> f64 {
        // Direction from anchor toward the viewer, in anchor coordinates.
        let toward_viewer = self.rotation.transpose() * (-cam.optical_axis());
        let deg = float::atan2(toward_viewer.x, toward_viewer.z).to_degrees();
        let deg = deg % 360.0;
        let deg = if deg < 0.0 { deg + 360.0 } else { deg };
        if deg >= 360.0 {
            0.0
        } else {
            deg
        }
    }
}

/// Rasterized anchor: red, green and blue segments along the three anchor
/// axes on a black background.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorImage(pub Grid);

impl AnchorImage {
    pub fn is_black(&self) -> bool {
        self.0.data.iter().all(|&x| x == 0.0)
    }
}

pub const DEFAULT_AXIS_LEN: f64 = 0.1;
const NEAR_PLANE: f64 = 1e-6;
const AXIS_COLORS: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn render_anchor_image(
    anchor: &SpatialAnchor,
    cam: &CameraParams,
    height: usize,
    width: usize,
    axis_len: f64,
) -> Result<AnchorImage> {
    if !(axis_len > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "axis length must be positive, got {axis_len}"
        )));
    }
    let mut img = Grid::zeros(height, width, 3);
    let start = cam.to_camera(&anchor.translation);
    for (k, color) in AXIS_COLORS.iter().enumerate() {
        let end_world = anchor.translation + anchor.rotation.column(k) * axis_len;
        let end = cam.to_camera(&end_world);
        let Some((a, b)) = clip_near(start, end) else {
            continue;
        };
        let pa = (cam.fx * a.x / a.z + cam.cx, cam.fy * a.y / a.z + cam.cy);
        let pb = (cam.fx * b.x / b.z + cam.cx, cam.fy * b.y / b.z + cam.cy);
        if let Some((pa, pb)) = clip_rect(pa, pb, width as f64, height as f64) {
            draw_segment(&mut img, pa, pb, color);
        }
    }
    Ok(AnchorImage(img))
}

fn clip_near(a: Vec3, b: Vec3) -> Option<(Vec3, Vec3)> {
    match (a.z >= NEAR_PLANE, b.z >= NEAR_PLANE) {
        (true, true) => Some((a, b)),
        (false, false) => None,
        (true, false) => {
            let s = (a.z - NEAR_PLANE) / (a.z - b.z);
            Some((a, a + (b - a) * s))
        }
        (false, true) => {
            let s = (b.z - NEAR_PLANE) / (b.z - a.z);
            Some((b + (a - b) * s, b))
        }
    }
}

/// Liang–Barsky clip of a 2D segment to `[0, w] × [0, h]`.
fn clip_rect(a: (f64, f64), b: (f64, f64), w: f64, h: f64) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-dx, a.0), (dx, w - a.0), (-dy, a.1), (dy, h - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    Some((
        (a.0 + t0 * dx, a.1 + t0 * dy),
        (a.0 + t1 * dx, a.1 + t1 * dy),
    ))
}

fn draw_segment(img: &mut Grid, a: (f64, f64), b: (f64, f64), color: &[f64; 3]) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let steps = float::ceil(2.0 * dx.abs().max(dy.abs())) as usize + 1;
    for i in 0..=steps {
        let s = i as f64 / steps as f64;
        let (u, v) = (a.0 + s * dx, a.1 + s * dy);
        let (col, row) = (float::floor(u), float::floor(v));
        if col < 0.0 || row < 0.0 {
            continue;
        }
        let (col, row) = (col as usize, row as usize);
        if col >= img.width || row >= img.height {
            continue;
        }
        for (ch, &c) in color.iter().enumerate() {
            img.set(row, col, ch, c);
        }
    }
}

/// Camera at `eye` looking at `target`, with image-up roughly along `up`.
#[allow(clippy::too_many_arguments)]
pub fn look_at_camera(
    eye: Vec3,
    target: Vec3,
    up: Vec3,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
) -> Result<CameraParams> {
    let forward = target - eye;
    let dist = float::sqrt(forward.dot(&forward));
    if !(dist > 1e-12) {
        return Err(Error::DegenerateLookAt);
    }
    let z = forward / dist;
    let right = z.cross(&up);
    let right_norm = float::sqrt(right.dot(&right));
    let up_norm = float::sqrt(up.dot(&up));
    if !(right_norm > 1e-9 * up_norm.max(1e-300)) || up_norm == 0.0 {
        return Err(Error::DegenerateLookAt);
    }
    let x = right / right_norm;
    let y = z.cross(&x);
    let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let translation = -(rotation * eye);
    CameraParams::new(fx, fy, cx, cy, rotation, translation, width, height)
}
