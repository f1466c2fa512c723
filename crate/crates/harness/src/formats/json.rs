use std::path::Path;

use mvdit_core::camera::{CameraParams, Mat3, SpatialAnchor, Vec3};
use serde::{Deserialize, Serialize};

use super::{FormatError, Result};

/// One camera as stored in `cameras.json`. `rotation` is the row-major
/// world-to-camera rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&CameraParams> for CameraRecord {
    fn from(c: &CameraParams) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: row_major(&c.rotation),
            translation: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> mvdit_core::Result<CameraParams> {
        CameraParams::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            Mat3::from_row_slice(&self.rotation),
            Vec3::from(self.translation),
            self.width,
            self.height,
        )
    }
}

/// `anchor.json`: rotation columns are the anchor axes, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

fn row_major(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FormatError::parse(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| FormatError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FormatError::parse(path, e.to_string()))
}

pub fn write_cameras(path: &Path, cams: &[CameraParams]) -> Result<()> {
    let recs: Vec<CameraRecord> = cams.iter().map(CameraRecord::from).collect();
    write_json(path, &recs)
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraParams>> {
    let recs: Vec<CameraRecord> = read_json(path)?;
    recs.iter()
        .enumerate()
        .map(|(i, r)| r.to_camera().map_err(|e| FormatError::parse(path, format!("camera {i}: {e}"))))
        .collect()
}

pub fn write_anchor(path: &Path, anchor: &SpatialAnchor) -> Result<()> {
    let t = anchor.translation;
    write_json(
        path,
        &AnchorRecord {
            rotation: row_major(&anchor.rotation),
            translation: [t.x, t.y, t.z],
        },
    )
}

pub fn read_anchor(path: &Path) -> Result<SpatialAnchor> {
    let r: AnchorRecord = read_json(path)?;
    SpatialAnchor::new(Mat3::from_row_slice(&r.rotation), Vec3::from(r.translation))
        .map_err(|e| FormatError::parse(path, e.to_string()))
}
