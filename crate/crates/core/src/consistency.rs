//! Ground-truth-free 3D consistency: triangulate matched landmarks from
//! known cameras, reproject them, and report the resolution-normalized pixel
//! error averaged over randomly formed view pairs.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::camera::{project_point, CameraParams, Vec3};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub view_a: usize,
    pub view_b: usize,
    pub p_a: (f64, f64),
    pub p_b: (f64, f64),
    pub confidence: f64,
}

/// All matches between one ordered pair of views.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub view_a: usize,
    pub view_b: usize,
    matches: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(view_a: usize, view_b: usize) -> Result<Self> {
        if view_a == view_b {
            return Err(Error::InvalidArgument(alloc::format!(
                "correspondence pair needs two distinct views, got {view_a} twice"
            )));
        }
        Ok(Self {
            view_a,
            view_b,
            matches: Vec::new(),
        })
    }

    pub fn push(&mut self, p_a: (f64, f64), p_b: (f64, f64), confidence: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(alloc::format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        self.matches.push(Correspondence {
            view_a: self.view_a,
            view_b: self.view_b,
            p_a,
            p_b,
            confidence,
        });
        Ok(())
    }

    pub fn matches(&self) -> &[Correspondence] {
        &self.matches
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// The same matches with the roles of the two views exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            view_a: self.view_b,
            view_b: self.view_a,
            matches: self
                .matches
                .iter()
                .map(|m| Correspondence {
                    view_a: m.view_b,
                    view_b: m.view_a,
                    p_a: m.p_b,
                    p_b: m.p_a,
                    confidence: m.confidence,
                })
                .collect(),
        }
    }

    /// Matches with confidence strictly above `threshold`.
    pub fn filtered(&self, threshold: f64) -> Self {
        Self {
            view_a: self.view_a,
            view_b: self.view_b,
            matches: self
                .matches
                .iter()
                .filter(|m| m.confidence > threshold)
                .copied()
                .collect(),
        }
    }

    /// Checks that every match lies inside both images.
    pub fn validate(&self, cam_a: &CameraParams, cam_b: &CameraParams) -> Result<()> {
        let inside = |p: (f64, f64), cam: &CameraParams| {
            p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= cam.width as f64 && p.1 <= cam.height as f64
        };
        for m in &self.matches {
            if !inside(m.p_a, cam_a) || !inside(m.p_b, cam_b) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "match {:?} -> {:?} outside image bounds",
                    m.p_a,
                    m.p_b
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Triangulation {
    /// Raw pixel coordinates.
    #[default]
    Plain,
    /// Hartley-style similarity normalization of each view's pixels first.
    Normalized,
}

/// Homogeneous DLT system: rows `u·P₃ − P₁` and `v·P₃ − P₂` per view.
pub fn dlt_system(observations: &[(&CameraParams, (f64, f64))], method: Triangulation) -> DMatrix<f64> {
    let mut a = DMatrix::<f64>::zeros(2 * observations.len(), 4);
    for (i, (cam, (u, v))) in observations.iter().enumerate() {
        let mut p = cam.projection_matrix();
        let (mut u, mut v) = (*u, *v);
        if method == Triangulation::Normalized {
            let (ox, oy) = (cam.width as f64 / 2.0, cam.height as f64 / 2.0);
            let s = core::f64::consts::SQRT_2 / crate::float::sqrt(ox * ox + oy * oy);
            let t = nalgebra::Matrix3::new(s, 0.0, -s * ox, 0.0, s, -s * oy, 0.0, 0.0, 1.0);
            p = t * p;
            u = s * (u - ox);
            v = s * (v - oy);
        }
        a.row_mut(2 * i).copy_from(&(p.row(2) * u - p.row(0)));
        a.row_mut(2 * i + 1).copy_from(&(p.row(2) * v - p.row(1)));
    }
    a
}

/// Unit null vector of a DLT system, dehomogenized.
pub fn solve_dlt_system(a: DMatrix<f64>) -> Result<Vec3> {
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(Error::DegenerateTriangulation("singular value decomposition failed"))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    if sv.len() < 4 {
        return Err(Error::DegenerateTriangulation("fewer than four equations"));
    }
    let (smallest, second, largest) = (order[0], order[1], order[order.len() - 1]);
    if !(sv[second] > 1e-12 * sv[largest]) {
        return Err(Error::DegenerateTriangulation("rank-deficient system"));
    }
    let x = v_t.row(smallest);
    let norm = x.norm();
    let w = x[3] / norm;
    if !(w.abs() >= 1e-12) {
        return Err(Error::DegenerateTriangulation("point at infinity"));
    }
    Ok(Vec3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]))
}

pub fn dlt_triangulate(observations: &[(&CameraParams, (f64, f64))]) -> Result<Vec3> {
    dlt_triangulate_with(observations, Triangulation::Plain)
}

pub fn dlt_triangulate_with(
    observations: &[(&CameraParams, (f64, f64))],
    method: Triangulation,
) -> Result<Vec3> {
    if observations.len() < 2 {
        return Err(Error::DegenerateTriangulation("need at least two observations"));
    }
    let centers: Vec<Vec3> = observations.iter().map(|(c, _)| c.center()).collect();
    let scale = centers.iter().map(|c| c.norm()).fold(1.0, f64::max);
    let spread = centers
        .iter()
        .map(|c| (c - centers[0]).norm())
        .fold(0.0, f64::max);
    if spread <= 1e-12 * scale {
        return Err(Error::DegenerateTriangulation("no parallax between cameras"));
    }
    solve_dlt_system(dlt_system(observations, method))
}

fn reprojection_error(cam: &CameraParams, x: &Vec3, p: (f64, f64)) -> Option<f64> {
    let (u, v) = project_point(cam, x).pixel()?;
    let (du, dv) = (u - p.0, v - p.1);
    Some(crate::float::sqrt(du * du + dv * dv) / cam.resolution())
}

/// Mean normalized reprojection error over the matches of one view pair.
/// Matches that fail to triangulate, or whose point lands behind either
/// camera, are skipped.
pub fn pair_re(matches: &CorrespondenceSet, cam_a: &CameraParams, cam_b: &CameraParams) -> Result<f64> {
    pair_re_with(matches, cam_a, cam_b, Triangulation::Plain).map(|(re, _)| re)
}

/// Like [`pair_re`], also returning how many matches contributed.
pub fn pair_re_with(
    matches: &CorrespondenceSet,
    cam_a: &CameraParams,
    cam_b: &CameraParams,
    method: Triangulation,
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut used = 0usize;
    for m in matches.matches() {
        let Ok(x) = dlt_triangulate_with(&[(cam_a, m.p_a), (cam_b, m.p_b)], method) else {
            continue;
        };
        let (Some(ea), Some(eb)) = (
            reprojection_error(cam_a, &x, m.p_a),
            reprojection_error(cam_b, &x, m.p_b),
        ) else {
            continue;
        };
        total += 0.5 * (ea + eb);
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllMatchesDegenerate);
    }
    Ok((total / used as f64, used))
}

/// Seeded random partition of `0..n_views` into disjoint pairs. With an odd
/// count one view is left out.
pub fn partition_pairs(n_views: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n_views).collect();
    order.shuffle(&mut rng::seeded(seed));
    order
        .chunks_exact(2)
        .map(|c| (c[0].min(c[1]), c[0].max(c[1])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReOptions {
    pub conf_threshold: f64,
    pub min_matches: usize,
    pub seed: u64,
    pub method: Triangulation,
}

impl Default for ReOptions {
    fn default() -> Self {
        Self {
            conf_threshold: 0.2,
            min_matches: 5,
            seed: 0,
            method: Triangulation::Plain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// No correspondence set was supplied for the pair.
    Missing,
    /// Too few matches survived the confidence threshold.
    TooFewMatches(usize),
    /// Every surviving match failed to triangulate.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub view_a: usize,
    pub view_b: usize,
    pub n_matches: usize,
    pub pair_re: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReReport {
    pub mean_re: f64,
    pub per_pair: Vec<PairReport>,
    pub rejected: Vec<(usize, usize, Rejection)>,
}

impl ReReport {
    pub fn n_rejected_pairs(&self) -> usize {
        self.rejected.len()
    }

    pub fn pairs_used(&self) -> usize {
        self.per_pair.len()
    }
}

pub fn dataset_re(
    sets: &[CorrespondenceSet],
    cameras: &[CameraParams],
    opts: &ReOptions,
) -> Result<ReReport> {
    if cameras.len() < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "need at least two views, got {}",
            cameras.len()
        )));
    }
    let mut per_pair = Vec::new();
    let mut rejected = Vec::new();
    for (a, b) in partition_pairs(cameras.len(), opts.seed) {
        let set = sets.iter().find_map(|s| {
            if (s.view_a, s.view_b) == (a, b) {
                Some(s.clone())
            } else if (s.view_a, s.view_b) == (b, a) {
                Some(s.swapped())
            } else {
                None
            }
        });
        let Some(set) = set else {
            rejected.push((a, b, Rejection::Missing));
            continue;
        };
        let kept = set.filtered(opts.conf_threshold);
        if kept.len() < opts.min_matches {
            rejected.push((a, b, Rejection::TooFewMatches(kept.len())));
            continue;
        }
        match pair_re_with(&kept, &cameras[a], &cameras[b], opts.method) {
            Ok((re, _)) => per_pair.push(PairReport {
                view_a: a,
                view_b: b,
                n_matches: kept.len(),
                pair_re: re,
            }),
            Err(_) => rejected.push((a, b, Rejection::Degenerate)),
        }
    }
    if per_pair.is_empty() {
        return Err(Error::NoValidPairs);
    }
    let mean_re = per_pair.iter().map(|p| p.pair_re).sum::<f64>() / per_pair.len() as f64;
    Ok(ReReport {
        mean_re,
        per_pair,
        rejected,
    })
}

/// Synthetic matcher: projects known scene points into both views and adds
/// independent Gaussian pixel noise. Points behind either camera or landing
/// outside either image are dropped.
pub fn oracle_correspondences(
    points: &[Vec3],
    (view_a, cam_a): (usize, &CameraParams),
    (view_b, cam_b): (usize, &CameraParams),
    pixel_sigma: f64,
    seed: u64,
) -> Result<CorrespondenceSet> {
    let mut rng = rng::seeded(seed);
    let mut set = CorrespondenceSet::new(view_a, view_b)?;
    let inside = |p: (f64, f64), cam: &CameraParams| {
        p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= cam.width as f64 && p.1 <= cam.height as f64
    };
    for x in points {
        let (Some(pa), Some(pb)) = (
            project_point(cam_a, x).pixel(),
            project_point(cam_b, x).pixel(),
        ) else {
            continue;
        };
        let pa = (
            pa.0 + pixel_sigma * rng::normal(&mut rng),
            pa.1 + pixel_sigma * rng::normal(&mut rng),
        );
        let pb = (
            pb.0 + pixel_sigma * rng::normal(&mut rng),
            pb.1 + pixel_sigma * rng::normal(&mut rng),
        );
        if inside(pa, cam_a) && inside(pb, cam_b) {
            set.push(pa, pb, 1.0)?;
        }
    }
    Ok(set)
}
