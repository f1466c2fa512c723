//! Procedural toy scenes: a few colored spheres and boxes seen from a ring
//! of cameras.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mvdit_core::camera::{look_at_camera, project_point, ray_for_pixel, CameraParams, Mat3, SpatialAnchor, Vec3};
use mvdit_core::rng::{self, RngExt};
use mvdit_core::Grid;

use crate::formats::{json, png, text};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("need at least 4 views, got {0}")]
    TooFewViews(usize),
    #[error("object count {0} outside 2..=8")]
    ObjectCount(usize),
    #[error("resolution {resolution} not divisible by latent factor {factor}")]
    Resolution { resolution: usize, factor: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub seed: u64,
    pub n_views: usize,
    pub resolution: usize,
    pub n_objects: usize,
    pub n_points: usize,
    pub camera_radius: f64,
    pub focal_scale: f64,
    /// Downsampling factor times patch size; the resolution must divide by it.
    pub latent_factor: usize,
}

impl SceneParams {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        Self {
            seed: cfg.seed,
            n_views: cfg.n_views,
            resolution: cfg.image_size,
            n_objects: cfg.n_objects,
            n_points: cfg.n_points,
            camera_radius: cfg.camera_radius,
            focal_scale: cfg.focal_scale,
            latent_factor: cfg.latent_downsample * cfg.patch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Object {
    pub shape: Shape,
    pub color: [f64; 3],
}

impl Object {
    pub fn center(&self) -> Vec3 {
        match self.shape {
            Shape::Sphere { center, .. } => center,
            Shape::Box { min, max } => (min + max) * 0.5,
        }
    }

    pub fn volume(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius, .. } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            Shape::Box { min, max } => (max - min).product(),
        }
    }

    /// Nearest hit distance along a unit ray and the outward normal there.
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3)> {
        const EPS: f64 = 1e-9;
        match self.shape {
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let b = oc.dot(d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > EPS { -b - s } else { -b + s };
                (t > EPS).then(|| (t, (o + d * t - center) / radius))
            }
            Shape::Box { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min[k] - o[k]) / d[k], (max[k] - o[k]) / d[k]);
                    let (a, b) = if a < b { (a, b) } else { (b, a) };
                    if a > t0 {
                        t0 = a;
                        axis = k;
                    }
                    t1 = t1.min(b);
                }
                if t0 > t1 || t0 <= EPS {
                    return None;
                }
                let mut n = Vec3::zeros();
                n[axis] = -d[axis].signum();
                Some((t0, n))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub params: SceneParams,
    pub objects: Vec<Object>,
    pub cameras: Vec<CameraParams>,
    pub anchor: SpatialAnchor,
}

const LIGHT: [f64; 3] = [0.4, -0.8, -0.45];
const SUPERSAMPLE: usize = 2;

fn light() -> Vec3 {
    Vec3::from(LIGHT).normalize()
}

impl Scene {
    pub fn generate(params: SceneParams) -> Result<Self, SceneError> {
        if params.n_views < 4 {
            return Err(SceneError::TooFewViews(params.n_views));
        }
        if !(2..=8).contains(&params.n_objects) {
            return Err(SceneError::ObjectCount(params.n_objects));
        }
        if params.latent_factor == 0 || params.resolution % params.latent_factor != 0 {
            return Err(SceneError::Resolution {
                resolution: params.resolution,
                factor: params.latent_factor,
            });
        }
        let mut rng = rng::stream(params.seed, 0);
        let mut objects = Vec::with_capacity(params.n_objects);
        for i in 0..params.n_objects {
            let center = Vec3::new(
                rng.gen_range(-0.7..0.7),
                rng.gen_range(-0.35..0.35),
                rng.gen_range(-0.7..0.7),
            );
            // Saturated colors keep objects distinct.
            let hue: f64 = rng.gen_range(0.0..1.0);
            let color = hue_to_rgb(hue, rng.gen_range(0.6..1.0));
            let shape = if i % 2 == 0 {
                Shape::Sphere { center, radius: rng.gen_range(0.2..0.45) }
            } else {
                let half = Vec3::new(rng.gen_range(0.15..0.4), rng.gen_range(0.15..0.4), rng.gen_range(0.15..0.4));
                Shape::Box { min: center - half, max: center + half }
            };
            objects.push(Object { shape, color });
        }

        let res = params.resolution;
        let f = params.focal_scale * res as f64;
        let c = res as f64 / 2.0;
        let cameras = (0..params.n_views)
            .map(|i| {
                let az = std::f64::consts::TAU * i as f64 / params.n_views as f64;
                let el = (20.0 + 12.0 * ((i % 3) as f64 - 1.0)).to_radians();
                let r = params.camera_radius;
                let eye = Vec3::new(r * el.cos() * az.sin(), r * el.sin(), -r * el.cos() * az.cos());
                look_at_camera(eye, Vec3::zeros(), Vec3::y(), f, f, c, c, res, res)
                    .expect("ring cameras never look along the up axis")
            })
            .collect::<Vec<_>>();

        let largest = objects
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.volume().total_cmp(&b.1.volume()).then(b.0.cmp(&a.0)))
            .map(|(_, o)| *o)
            .expect("at least two objects");
        let pos = largest.center();
        let fwd = (cameras[0].center() - pos).normalize();
        let x = Vec3::y().cross(&fwd).normalize();
        let y = fwd.cross(&x);
        let anchor = SpatialAnchor::new(Mat3::from_columns(&[x, y, fwd]), pos).expect("orthonormal by construction");
        Ok(Self { params, objects, cameras, anchor })
    }

    fn hit(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3, [f64; 3])> {
        self.objects
            .iter()
            .filter_map(|ob| ob.intersect(o, d).map(|(t, n)| (t, n, ob.color)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    fn shade(&self, o: &Vec3, d: &Vec3) -> [f64; 3] {
        match self.hit(o, d) {
            Some((_, n, col)) => {
                let lambert = n.dot(&-light()).max(0.0);
                let k = 0.3 + 0.7 * lambert;
                [col[0] * k, col[1] * k, col[2] * k]
            }
            None => {
                // Faint vertical gradient so the horizon is visible.
                let g = 0.12 + 0.08 * (-d.y).clamp(-1.0, 1.0);
                [g, g, g + 0.02]
            }
        }
    }

    /// Ray-cast render with flat lambertian shading and 2×2 supersampling.
    pub fn render(&self, view: usize) -> Grid {
        let cam = &self.cameras[view];
        let (h, w) = (cam.height, cam.width);
        let mut img = Grid::zeros(h, w, 3);
        let s = SUPERSAMPLE as f64;
        let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        for row in 0..h {
            for col in 0..w {
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let u = col as f64 + (sx as f64 + 0.5) / s;
                        let v = row as f64 + (sy as f64 + 0.5) / s;
                        let ray = ray_for_pixel(cam, u, v);
                        let c = self.shade(&ray.origin, &ray.direction);
                        acc.iter_mut().zip(c).for_each(|(a, c)| *a += c * inv);
                    }
                }
                for (k, a) in acc.into_iter().enumerate() {
                    img.set(row, col, k, a);
                }
            }
        }
        img
    }

    fn visible(&self, p: &Vec3, n: &Vec3, cam: &CameraParams) -> bool {
        let Some((u, v)) = project_point(cam, p).pixel() else {
            return false;
        };
        if u < 0.0 || v < 0.0 || u > cam.width as f64 || v > cam.height as f64 {
            return false;
        }
        let o = cam.center();
        let to_p = p - o;
        if n.dot(&to_p) >= 0.0 {
            return false;
        }
        let dist = to_p.norm();
        let d = to_p / dist;
        matches!(self.hit(&o, &d), Some((t, _, _)) if t >= dist - 1e-6)
    }

    /// Random surface samples that at least two cameras see unoccluded.
    pub fn surface_points(&self) -> Vec<Vec3> {
        let mut rng = rng::stream(self.params.seed, 1);
        let target = self.params.n_points;
        let mut out = Vec::with_capacity(target);
        let areas: Vec<f64> = self.objects.iter().map(surface_area).collect();
        let total: f64 = areas.iter().sum();
        let mut tries = 0;
        while out.len() < target && tries < 50 * target.max(1) {
            tries += 1;
            let mut pick = rng.gen_range(0.0..total);
            let mut idx = 0;
            while idx + 1 < areas.len() && pick >= areas[idx] {
                pick -= areas[idx];
                idx += 1;
            }
            let (p, n) = sample_surface(&self.objects[idx], &mut rng);
            // Nudge off the surface so the occlusion test does not self-hit.
            let seen = self.cameras.iter().filter(|c| self.visible(&(p + n * 1e-7), &n, c)).count();
            if seen >= 2 {
                out.push(p);
            }
        }
        out
    }

    pub fn describe(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", p.seed);
        let _ = writeln!(s, "n_views={}", p.n_views);
        let _ = writeln!(s, "resolution={}", p.resolution);
        let _ = writeln!(s, "n_objects={}", p.n_objects);
        let _ = writeln!(s, "n_points={}", p.n_points);
        let _ = writeln!(s, "camera_radius={}", p.camera_radius);
        let _ = writeln!(s, "focal_scale={}", p.focal_scale);
        for (i, o) in self.objects.iter().enumerate() {
            let c = o.color;
            match o.shape {
                Shape::Sphere { center, radius } => {
                    let _ = writeln!(
                        s,
                        "object.{i}=sphere center {:?} {:?} {:?} radius {radius:?} color {:?} {:?} {:?}",
                        center.x, center.y, center.z, c[0], c[1], c[2]
                    );
                }
                Shape::Box { min, max } => {
                    let _ = writeln!(
                        s,
                        "object.{i}=box min {:?} {:?} {:?} max {:?} {:?} {:?} color {:?} {:?} {:?}",
                        min.x, min.y, min.z, max.x, max.y, max.z, c[0], c[1], c[2]
                    );
                }
            }
        }
        s
    }

    /// Writes `scene.txt`, `cameras.json`, `anchor.json`, `points3d.txt`
    /// and `view_XXX.png` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("scene.txt"), self.describe())?;
        json::write_cameras(&dir.join("cameras.json"), &self.cameras)?;
        json::write_anchor(&dir.join("anchor.json"), &self.anchor)?;
        text::write_points(&dir.join("points3d.txt"), &self.surface_points())?;
        for v in 0..self.cameras.len() {
            png::write_png(&dir.join(view_file_name(v)), &self.render(v))?;
        }
        Ok(())
    }
}

pub fn view_file_name(v: usize) -> String {
    format!("view_{v:03}.png")
}

fn surface_area(o: &Object) -> f64 {
    match o.shape {
        Shape::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        Shape::Box { min, max } => {
            let e = max - min;
            2.0 * (e.x * e.y + e.y * e.z + e.x * e.z)
        }
    }
}

fn sample_surface(o: &Object, rng: &mut rng::Rng) -> (Vec3, Vec3) {
    match o.shape {
        Shape::Sphere { center, radius } => {
            let n = loop {
                let v = Vec3::new(rng::normal(rng), rng::normal(rng), rng::normal(rng));
                let len = v.norm();
                if len > 1e-9 {
                    break v / len;
                }
            };
            (center + n * radius, n)
        }
        Shape::Box { min, max } => {
            let e = max - min;
            let faces = [e.y * e.z, e.y * e.z, e.x * e.z, e.x * e.z, e.x * e.y, e.x * e.y];
            let mut pick = rng.gen_range(0.0..faces.iter().sum::<f64>());
            let mut face = 0;
            while face < 5 && pick >= faces[face] {
                pick -= faces[face];
                face += 1;
            }
            let axis = face / 2;
            let mut p = Vec3::new(
                rng.gen_range(min.x..max.x),
                rng.gen_range(min.y..max.y),
                rng.gen_range(min.z..max.z),
            );
            let mut n = Vec3::zeros();
            if face % 2 == 0 {
                p[axis] = min[axis];
                n[axis] = -1.0;
            } else {
                p[axis] = max[axis];
                n[axis] = 1.0;
            }
            (p, n)
        }
    }
}

fn hue_to_rgb(h: f64, v: f64) -> [f64; 3] {
    let k = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        v * (1.0 - (k.min(4.0 - k).clamp(0.0, 1.0)))
    };
    [k(5.0), k(3.0), k(1.0)]
}

/// Output directories for a scene set: the root itself for one scene,
/// `scene_000`, `scene_001`, … below it otherwise.
pub fn scene_dirs(root: &Path, n_scenes: usize) -> Vec<PathBuf> {
    if n_scenes <= 1 {
        vec![root.to_path_buf()]
    } else {
        (0..n_scenes).map(|i| root.join(format!("scene_{i:03}"))).collect()
    }
}

/// Generates `n_scenes` scenes with seeds `seed, seed + 1, …`.
pub fn gen_scenes(root: &Path, params: &SceneParams, n_scenes: usize) -> anyhow::Result<Vec<PathBuf>> {
    let dirs = scene_dirs(root, n_scenes);
    for (i, dir) in dirs.iter().enumerate() {
        let p = SceneParams { seed: params.seed.wrapping_add(i as u64), ..params.clone() };
        Scene::generate(p)?.write(dir)?;
    }
    Ok(dirs)
}
