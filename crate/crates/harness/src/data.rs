//! Loading scene directories and building model conditioning from them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mvdit_core::camera::{plucker_grid, render_anchor_image, CameraParams, SpatialAnchor, Vec3};
use mvdit_core::model::{encode_image, Mode, ModelConfig, PluckerEncoding, ViewConditioning};
use mvdit_core::Grid;

use crate::formats::{json, png, text};
use crate::scene::view_file_name;

#[derive(Debug, Clone)]
pub struct SceneData {
    pub dir: PathBuf,
    pub cameras: Vec<CameraParams>,
    pub images: Vec<Grid>,
    pub anchor: SpatialAnchor,
    pub points: Option<Vec<Vec3>>,
}

impl SceneData {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let cameras = json::read_cameras(&dir.join("cameras.json"))?;
        let anchor = json::read_anchor(&dir.join("anchor.json"))?;
        let mut images = Vec::with_capacity(cameras.len());
        for (v, cam) in cameras.iter().enumerate() {
            images.push(png::read_png_sized(&dir.join(view_file_name(v)), cam.height, cam.width)?);
        }
        let pts = dir.join("points3d.txt");
        let points = if pts.exists() { Some(text::read_points(&pts)?) } else { None };
        Ok(Self { dir: dir.to_path_buf(), cameras, images, anchor, points })
    }

    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }
}

fn is_scene(dir: &Path) -> bool {
    dir.join("cameras.json").is_file()
}

/// A single scene directory or a directory of scene subdirectories, in
/// lexicographic order.
pub fn load_dataset(path: &Path) -> anyhow::Result<Vec<SceneData>> {
    if is_scene(path) {
        return Ok(vec![SceneData::load(path)?]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading dataset {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_scene(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no scenes under {}", path.display());
    }
    dirs.iter().map(|d| SceneData::load(d)).collect()
}

/// Conditioning for one target view under the model's mode. Only the
/// inputs the mode reads are built.
pub fn view_conditioning(cfg: &ModelConfig, cam: &CameraParams, anchor: &SpatialAnchor, axis_len: f64) -> anyhow::Result<ViewConditioning> {
    let mut vc = ViewConditioning { camera: Some(cam.clone()), ..Default::default() };
    if let Mode::Posttrain { inputs, .. } = cfg.mode {
        if inputs.plucker != PluckerEncoding::None {
            vc.plucker = Some(plucker_grid(cam, cfg.image_height, cfg.image_width));
        }
        if inputs.anchor {
            vc.anchor = Some(render_anchor_image(anchor, cam, cfg.image_height, cfg.image_width, axis_len)?);
        }
    }
    Ok(vc)
}

pub fn conditioning(cfg: &ModelConfig, scene: &SceneData, views: &[usize], axis_len: f64) -> anyhow::Result<Vec<ViewConditioning>> {
    views
        .iter()
        .map(|&v| view_conditioning(cfg, &scene.cameras[v], &scene.anchor, axis_len))
        .collect()
}

/// Clean latents for the listed views.
pub fn latents(cfg: &ModelConfig, scene: &SceneData, views: &[usize]) -> anyhow::Result<Vec<Grid>> {
    views
        .iter()
        .map(|&v| {
            let img = &scene.images[v];
            if (img.height, img.width) != (cfg.image_height, cfg.image_width) {
                bail!(
                    "{}: view {v} is {}x{}, model expects {}x{}",
                    scene.dir.display(),
                    img.height,
                    img.width,
                    cfg.image_height,
                    cfg.image_width
                );
            }
            Ok(encode_image(img, cfg.latent_downsample)?)
        })
        .collect()
}
