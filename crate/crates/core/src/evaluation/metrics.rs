use serde::{Deserialize, Serialize};

use crate::codec::{BBox, LandmarkSet};

use super::{EvalError, Result};

/// Normalization distance of the error metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NormMode {
    /// Distance between two ground-truth landmarks (the outer eye corners).
    InterOcular(usize, usize),
    /// Geometric mean of the image sides.
    ImageSize { width: usize, height: usize },
    /// Diagonal of the face box.
    Diagonal(BBox),
}

impl NormMode {
    pub fn name(&self) -> &'static str {
        match self {
            NormMode::InterOcular(..) => "inter_ocular",
            NormMode::ImageSize { .. } => "image_size",
            NormMode::Diagonal(_) => "diagonal",
        }
    }

    pub fn distance(&self, gt: &LandmarkSet) -> Result<f64> {
        let d = match *self {
            NormMode::InterOcular(a, b) => {
                if a == b || a >= gt.len() || b >= gt.len() {
                    return Err(EvalError::Config(format!("invalid eye indices ({a}, {b}) for {} landmarks", gt.len())));
                }
                gt.get(a).dist(&gt.get(b))
            }
            NormMode::ImageSize { width, height } => ((width * height) as f64).sqrt(),
            NormMode::Diagonal(b) => b.diagonal(),
        };
        if !(d > 0.0) {
            return Err(EvalError::ZeroNorm(self.name()));
        }
        Ok(d)
    }
}

fn check_pair(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(EvalError::Config(format!("{} predicted vs {} ground-truth landmarks", pred.len(), gt.len())));
    }
    Ok(())
}

/// Per-landmark normalized error, in percent.
pub fn landmark_errors(pred: &LandmarkSet, gt: &LandmarkSet, mode: &NormMode) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    let d = mode.distance(gt)?;
    Ok(pred.points().iter().zip(gt.points()).map(|(p, g)| 100.0 * p.dist(g) / d).collect())
}

/// Mean normalized landmark error, in percent.
pub fn nme(pred: &LandmarkSet, gt: &LandmarkSet, mode: &NormMode) -> Result<f64> {
    let e = landmark_errors(pred, gt, mode)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

fn unbiased_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// Spread of one image's normalized error vectors: the unbiased variance of
/// the x and y components over landmarks, averaged over the two axes.
pub fn point_var(pred: &LandmarkSet, gt: &LandmarkSet, mode: &NormMode) -> Result<f64> {
    check_pair(pred, gt)?;
    if gt.len() < 2 {
        return Err(EvalError::Config("point variance needs at least 2 landmarks".into()));
    }
    let d = mode.distance(gt)?;
    let (dx, dy): (Vec<f64>, Vec<f64>) =
        pred.points().iter().zip(gt.points()).map(|(p, g)| ((p.x - g.x) / d, (p.y - g.y) / d)).unzip();
    Ok((unbiased_var(&dx) + unbiased_var(&dy)) / 2.0)
}
