use serde::{Deserialize, Serialize};

use super::{CodecError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ordered landmarks of one face, in pixels of the frame they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl TryFrom<Vec<Point>> for LandmarkSet {
    type Error = CodecError;

    fn try_from(points: Vec<Point>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<LandmarkSet> for Vec<Point> {
    fn from(l: LandmarkSet) -> Self {
        l.points
    }
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(CodecError::TooFewLandmarks(points.len()));
        }
        if let Some(i) = points.iter().position(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(CodecError::NonFinite(i));
        }
        Ok(Self { points })
    }

    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self> {
        Self::new(xy.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn get(&self, i: usize) -> Point {
        self.points[i]
    }

    /// Applies `f` to every point. `f` must keep coordinates finite.
    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Self { points: self.points.iter().map(|&p| f(p)).collect() }
    }

    /// Reorders points: output `i` is input `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        Self { points: perm.iter().map(|&j| self.points[j]).collect() }
    }

    /// Tight axis-aligned box around the points.
    pub fn extent(&self) -> BBox {
        let (mut x1, mut y1, mut x2, mut y2) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in &self.points {
            x1 = x1.min(p.x);
            y1 = y1.min(p.y);
            x2 = x2.max(p.x);
            y2 = y2.max(p.y);
        }
        BBox { x1, y1, x2, y2 }
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
        Point::new(sx / n, sy / n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0) || !self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn check(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(CodecError::DegenerateBox(self.as_array()))
        } else {
            Ok(())
        }
    }

    /// Grows each dimension by `frac` in total, split evenly on both sides.
    pub fn enlarge(&self, frac: f64) -> Self {
        let (dx, dy) = (self.width() * frac / 2.0, self.height() * frac / 2.0);
        Self::new(self.x1 - dx, self.y1 - dy, self.x2 + dx, self.y2 + dy)
    }

    /// Moves the top edge down by `frac` of the height.
    pub fn reduce_top(&self, frac: f64) -> Self {
        Self::new(self.x1, self.y1 + self.height() * frac, self.x2, self.y2)
    }

    /// Maps a point into the unit square spanned by the box.
    pub fn normalize(&self, p: Point) -> Point {
        Point::new((p.x - self.x1) / self.width(), (p.y - self.y1) / self.height())
    }

    pub fn denormalize(&self, p: Point) -> Point {
        Point::new(self.x1 + p.x * self.width(), self.y1 + p.y * self.height())
    }
}
