//! Points files:
//!
//! ```text
//! version: 1
//! n_points: 2
//! {
//! 1.5 2
//! 3 4.25
//! }
//! ```

use std::path::Path;

use crate::codec::{LandmarkSet, Point};

use super::{DataError, Result};

pub fn parse_pts(text: &str) -> Result<LandmarkSet> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |expected: &'static str| lines.next().ok_or(DataError::PtsHeader { line: 0, expected });

    let (ln, l) = next("version: 1")?;
    if l != "version: 1" {
        return Err(DataError::PtsHeader { line: ln, expected: "version: 1" });
    }
    let (ln, l) = next("n_points: <K>")?;
    let declared: usize = l
        .strip_prefix("n_points:")
        .and_then(|v| v.trim().parse().ok())
        .ok_or(DataError::PtsHeader { line: ln, expected: "n_points: <K>" })?;
    let (ln, l) = next("{")?;
    if l != "{" {
        return Err(DataError::PtsHeader { line: ln, expected: "{" });
    }
    let mut points = Vec::with_capacity(declared);
    let mut last_line = ln;
    for (ln, l) in lines {
        last_line = ln;
        if l == "}" {
            if points.len() != declared {
                return Err(DataError::PtsCount { line: ln, declared, found: points.len() });
            }
            return Ok(LandmarkSet::new(points)?);
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(DataError::PtsArity { line: ln });
        }
        let num = |t: &str| t.parse::<f64>().map_err(|_| DataError::PtsNumber { line: ln, token: t.to_string() });
        points.push(Point::new(num(toks[0])?, num(toks[1])?));
    }
    Err(DataError::PtsHeader { line: last_line + 1, expected: "}" })
}

pub fn load_pts(path: &Path) -> Result<LandmarkSet> {
    parse_pts(&std::fs::read_to_string(path)?)
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_pts(lm: &LandmarkSet) -> String {
    let mut s = format!("version: 1\nn_points: {}\n{{\n", lm.len());
    for p in lm.points() {
        s.push_str(&format!("{} {}\n", p.x, p.y));
    }
    s.push_str("}\n");
    s
}

pub fn write_pts(path: &Path, lm: &LandmarkSet) -> Result<()> {
    Ok(std::fs::write(path, format_pts(lm))?)
}
