//! Whitespace-separated text lists. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use mvdit_core::camera::Vec3;
use mvdit_core::consistency::CorrespondenceSet;

use super::{FormatError, Result};

fn rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FormatError::parse(path, format!("line {}: {e}", i + 1)))?;
        if vals.len() != width {
            return Err(FormatError::parse(
                path,
                format!("line {}: expected {width} values, found {}", i + 1, vals.len()),
            ));
        }
        out.push(vals);
    }
    Ok(out)
}

pub fn write_points(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut s = String::from("# x y z\n");
    for p in points {
        let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    std::fs::write(path, s).map_err(|e| FormatError::io(path, e))
}

pub fn read_points(path: &Path) -> Result<Vec<Vec3>> {
    Ok(rows(path, 3)?.into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
}

pub fn matches_file_name(a: usize, b: usize) -> String {
    format!("matches_{a}_{b}.txt")
}

/// Parses `matches_<a>_<b>.txt` into its view indices.
pub fn parse_matches_name(name: &str) -> Option<(usize, usize)> {
    let stem = name.strip_prefix("matches_")?.strip_suffix(".txt")?;
    let (a, b) = stem.split_once('_')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

pub fn write_matches(path: &Path, set: &CorrespondenceSet) -> Result<()> {
    let mut s = String::from("# ua va ub vb conf\n");
    for m in set.matches() {
        let _ = writeln!(s, "{:?} {:?} {:?} {:?} {:?}", m.p_a.0, m.p_a.1, m.p_b.0, m.p_b.1, m.confidence);
    }
    std::fs::write(path, s).map_err(|e| FormatError::io(path, e))
}

pub fn read_matches(path: &Path, view_a: usize, view_b: usize) -> Result<CorrespondenceSet> {
    let mut set = CorrespondenceSet::new(view_a, view_b).map_err(|e| FormatError::parse(path, e.to_string()))?;
    for r in rows(path, 5)? {
        set.push((r[0], r[1]), (r[2], r[3]), r[4])
            .map_err(|e| FormatError::parse(path, e.to_string()))?;
    }
    Ok(set)
}
