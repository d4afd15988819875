//! Minimal CSV emission and parsing for the numeric artifacts.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips every `f64` exactly. Files may begin with `#` comment lines.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// In-memory CSV document.
#[derive(Debug, Clone, Default)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(comment: Option<&str>, header: &[&str]) -> Self {
        let mut text = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                let _ = writeln!(text, "# {line}");
            }
        }
        let _ = writeln!(text, "{}", header.join(","));
        Self { text, columns: header.len() }
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        debug_assert_eq!(fields.len(), self.columns, "row width must match header");
        let line: Vec<&str> = fields.iter().map(AsRef::as_ref).collect();
        let _ = writeln!(self.text, "{}", line.join(","));
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, &self.text)
    }
}

/// Header and rows of a CSV document, skipping `#` comments and blank lines.
pub fn parse(text: &str) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let split = |l: &str| l.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>();
    let header = split(lines.next()?);
    Some((header, lines.map(split).collect()))
}
