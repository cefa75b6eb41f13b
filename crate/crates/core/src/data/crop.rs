use serde::{Deserialize, Serialize};

use crate::codec::{BBox, Point};

use super::{DataError, Result, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropConfig {
    /// Total growth of each box dimension, as a fraction.
    pub enlarge: f64,
    /// Fraction of the (enlarged) box height removed from the top.
    pub top_reduce: f64,
    pub out_size: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self { enlarge: 0.1, top_reduce: 0.0, out_size: 64 }
    }
}

/// Axis-aligned map from the source frame into the crop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub region: BBox,
    pub out_size: usize,
}

impl CropTransform {
    pub fn forward(&self, p: Point) -> Point {
        let q = self.region.normalize(p);
        Point::new(q.x * self.out_size as f64, q.y * self.out_size as f64)
    }

    pub fn inverse(&self, p: Point) -> Point {
        let s = self.out_size as f64;
        self.region.denormalize(Point::new(p.x / s, p.y / s))
    }
}

/// Enlarges the sample's box, trims its top, and resamples that region to a
/// square `out_size` crop. Pixels outside the source frame read as 0.
pub fn crop_face(sample: &Sample, cfg: &CropConfig) -> Result<(Sample, CropTransform)> {
    sample.bbox.check()?;
    if cfg.out_size == 0 || !(cfg.enlarge > -1.0) || !(0.0..1.0).contains(&cfg.top_reduce) {
        return Err(DataError::Config(format!("invalid crop settings {cfg:?}")));
    }
    let region = sample.bbox.enlarge(cfg.enlarge).reduce_top(cfg.top_reduce);
    let t = CropTransform { region, out_size: cfg.out_size };
    let image = sample.image.warp(cfg.out_size, cfg.out_size, |x, y| {
        let p = t.inverse(Point::new(x, y));
        (p.x, p.y)
    });
    let landmarks = sample.landmarks.map(|p| t.forward(p));
    let a = t.forward(Point::new(sample.bbox.x1, sample.bbox.y1));
    let b = t.forward(Point::new(sample.bbox.x2, sample.bbox.y2));
    let bbox = BBox::new(a.x, a.y.max(0.0), b.x, b.y);
    Ok((Sample { image, landmarks, bbox, domain: sample.domain.clone(), labeled: sample.labeled }, t))
}
