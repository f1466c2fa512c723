use std::fmt::Display;
use std::path::Path;

use super::{FormatError, Result};

/// In-memory CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| FormatError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| FormatError::parse(path, "empty CSV"))?;
        let mut t = Table {
            header: header.split(',').map(String::from).collect(),
            rows: Vec::new(),
        };
        for l in lines.filter(|l| !l.is_empty()) {
            let row: Vec<String> = l.split(',').map(String::from).collect();
            if row.len() != t.header.len() {
                return Err(FormatError::parse(path, format!("row {l:?} has {} fields", row.len())));
            }
            t.rows.push(row);
        }
        Ok(t)
    }

    /// Column values of `name`, if present.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

/// Fixed-precision float cell so tables are stable across platforms.
pub fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn cell(x: impl Display) -> String {
    x.to_string()
}
