//! Image fidelity and reprojection-error evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mvdit_core::camera::CameraParams;
use mvdit_core::consistency::{dataset_re, oracle_correspondences, CorrespondenceSet, ReOptions, ReReport, Rejection};
use mvdit_core::Grid;

use crate::config::RunConfig;
use crate::formats::csv::{self, Table};
use crate::formats::{json, png, text, FormatError};

pub const PSNR_CAP: f64 = 99.0;

/// `10·log₁₀(1 / MSE)` on `[0, 1]` pixels, capped at 99 dB.
pub fn psnr(a: &Grid, b: &Grid) -> Result<f64, FormatError> {
    if !a.same_shape(b) {
        return Err(FormatError::Resolution {
            path: PathBuf::new(),
            found: (b.height, b.width),
            expected: (a.height, a.width),
        });
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// PSNR after 8-bit quantization of both images, as they would be on disk.
pub fn psnr_quantized(a: &Grid, b: &Grid) -> Result<f64, FormatError> {
    let q = |g: &Grid| g.map(|x| png::quantize(x) as f64 / 255.0);
    psnr(&q(a), &q(b))
}

fn pngs(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnrReport {
    pub per_view: Vec<(String, f64)>,
    pub mean: f64,
}

/// Compares every PNG in `generated` with the same-named file in `truth`.
pub fn eval_psnr(generated: &Path, truth: &Path) -> anyhow::Result<PsnrReport> {
    let names = pngs(generated)?;
    if names.is_empty() {
        bail!("no PNG files in {}", generated.display());
    }
    let mut per_view = Vec::with_capacity(names.len());
    for name in names {
        let a = png::read_png(&generated.join(&name))?;
        let gt_path = truth.join(&name);
        if !gt_path.exists() {
            bail!("{} has no counterpart {}", name, gt_path.display());
        }
        let b = png::read_png(&gt_path)?;
        let p = psnr(&a, &b).map_err(|_| FormatError::Resolution {
            path: gt_path.clone(),
            found: (b.height, b.width),
            expected: (a.height, a.width),
        })?;
        per_view.push((name, p));
    }
    let mean = per_view.iter().map(|p| p.1).sum::<f64>() / per_view.len() as f64;
    Ok(PsnrReport { per_view, mean })
}

pub fn psnr_table(r: &PsnrReport) -> Table {
    let mut t = Table::new(&["file", "psnr"]);
    for (n, p) in &r.per_view {
        t.push(vec![n.clone(), csv::f(*p)]);
    }
    t.push(vec!["mean".into(), csv::f(r.mean)]);
    t
}

pub fn eval_psnr_cmd(generated: &Path, truth: &Path, out: &Path) -> anyhow::Result<PsnrReport> {
    let r = eval_psnr(generated, truth)?;
    std::fs::create_dir_all(out)?;
    psnr_table(&r).write(&out.join("psnr.csv"))?;
    Ok(r)
}

/// Where correspondences come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ReSource {
    /// Projections of known scene points with optional pixel noise.
    Oracle { points: PathBuf, sigma: f64 },
    /// `matches_<a>_<b>.txt` files in a directory.
    Matches(PathBuf),
}

fn match_files(dir: &Path) -> anyhow::Result<Vec<(usize, usize, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for e in std::fs::read_dir(dir)? {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some((a, b)) = text::parse_matches_name(&name) {
            out.push((a, b, e.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// External matches win when present, else oracle mode when scene points
/// are available.
pub fn detect_source(dir: &Path, points: Option<&Path>, sigma: f64) -> anyhow::Result<ReSource> {
    if !match_files(dir)?.is_empty() {
        return Ok(ReSource::Matches(dir.to_path_buf()));
    }
    let candidates = [points.map(Path::to_path_buf), Some(dir.join("points3d.txt"))];
    for p in candidates.into_iter().flatten() {
        if p.is_file() {
            return Ok(ReSource::Oracle { points: p, sigma });
        }
    }
    bail!(
        "{}: neither matches_<a>_<b>.txt files nor points3d.txt found",
        dir.display()
    )
}

pub fn correspondences(source: &ReSource, cameras: &[CameraParams], seed: u64) -> anyhow::Result<Vec<CorrespondenceSet>> {
    match source {
        ReSource::Matches(dir) => match_files(dir)?
            .into_iter()
            .map(|(a, b, p)| Ok(text::read_matches(&p, a, b)?))
            .collect(),
        ReSource::Oracle { points, sigma } => {
            let pts = text::read_points(points)?;
            let n = cameras.len();
            let mut sets = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    let s = seed ^ ((a as u64) << 32 | b as u64);
                    sets.push(oracle_correspondences(&pts, (a, &cameras[a]), (b, &cameras[b]), *sigma, s)?);
                }
            }
            Ok(sets)
        }
    }
}

pub fn re_options(cfg: &RunConfig) -> ReOptions {
    ReOptions {
        conf_threshold: cfg.re_conf_threshold,
        min_matches: cfg.re_min_matches,
        seed: cfg.seed,
        ..ReOptions::default()
    }
}

pub fn report_text(r: &ReReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mean_re={:.9e}", r.mean_re);
    let _ = writeln!(s, "pairs_used={}", r.pairs_used());
    let _ = writeln!(s, "n_rejected_pairs={}", r.n_rejected_pairs());
    for p in &r.per_pair {
        let _ = writeln!(s, "pair {} {} matches={} re={:.9e}", p.view_a, p.view_b, p.n_matches, p.pair_re);
    }
    for (a, b, why) in &r.rejected {
        let why = match why {
            Rejection::Missing => "missing".to_string(),
            Rejection::TooFewMatches(k) => format!("too_few_matches {k}"),
            Rejection::Degenerate => "degenerate".to_string(),
        };
        let _ = writeln!(s, "rejected {a} {b} {why}");
    }
    s
}

/// `eval-re` command: `re_report.txt` and `re.csv` in `out`.
pub fn eval_re_cmd(cfg: &RunConfig, dir: &Path, cameras: Option<&Path>, points: Option<&Path>, out: &Path) -> anyhow::Result<ReReport> {
    let cam_path = match cameras {
        Some(p) => p.to_path_buf(),
        None => {
            let local = dir.join("cameras.json");
            match (&cfg.dataset, local.exists()) {
                (_, true) => local,
                (Some(d), false) => d.join("cameras.json"),
                (None, false) => bail!("no cameras.json in {} and no dataset set", dir.display()),
            }
        }
    };
    let cams = json::read_cameras(&cam_path)?;
    let source = detect_source(dir, points, cfg.re_sigma)?;
    let sets = correspondences(&source, &cams, cfg.seed)?;
    let report = dataset_re(&sets, &cams, &re_options(cfg))?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("re_report.txt"), report_text(&report))?;
    let mut t = Table::new(&["mean_re", "pairs_used", "pairs_rejected"]);
    t.push(vec![format!("{:.9e}", report.mean_re), csv::cell(report.pairs_used()), csv::cell(report.n_rejected_pairs())]);
    t.write(&out.join("re.csv"))?;
    Ok(report)
}
