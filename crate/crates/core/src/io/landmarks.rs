//! Landmark text files: one whitespace-separated triple per line.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::{LandmarkFrame, LandmarkSet};
use crate::geometry::Grid3;

/// Parse landmark triples. Blank lines and `#` comments are skipped;
/// commas count as whitespace.
pub fn parse_landmarks(text: &str, path: &Path) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let vals: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("'{t}' is not a number"))))
            .collect::<Result<_>>()?;
        if vals.len() != 3 {
            return Err(err(format!("expected 3 values, got {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite coordinate".into()));
        }
        out.push([vals[0], vals[1], vals[2]]);
    }
    Ok(out)
}

pub fn read_landmarks(path: impl AsRef<Path>, frame: LandmarkFrame, image_grid: &Grid3) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    LandmarkSet::from_frame(&parse_landmarks(&text, path)?, frame, image_grid)
}

pub fn write_landmarks(points: &[[f64; 3]], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text: String = points.iter().map(|p| format!("{:?} {:?} {:?}\n", p[0], p[1], p[2])).collect();
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
