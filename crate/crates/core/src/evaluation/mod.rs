//! Landmark error metrics, grid classification accuracy, and the implicit
//! prior probes on faceless inputs.

mod metrics;
mod prior;

pub use metrics::{landmark_errors, nme, point_var, NormMode};
pub use prior::{black_train, nonface_test, PriorResult};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{positive_grid, LandmarkSet};
use crate::data::{DataError, GrayImage, Overlay, Sample};
use crate::networks::Tap;
use crate::training::{LandmarkModel, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Config(String),
    #[error("{0} normalization distance is zero")]
    ZeroNorm(&'static str),
    #[error(transparent)]
    Model(Box<TrainError>),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Model(Box::new(e))
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Normalization choice independent of any particular sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NormKind {
    InterOcular(usize, usize),
    ImageSize,
    Diagonal,
}

impl NormKind {
    /// Resolves to a concrete mode for a sample in a `width` x `height` image.
    pub fn mode_for(&self, s: &Sample, width: usize, height: usize) -> NormMode {
        match *self {
            NormKind::InterOcular(a, b) => NormMode::InterOcular(a, b),
            NormKind::ImageSize => NormMode::ImageSize { width, height },
            NormKind::Diagonal => NormMode::Diagonal(s.bbox),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub norm: String,
    pub count: usize,
    /// Mean NME over samples, percent.
    pub nme: f64,
    pub point_var: f64,
    /// `point_var` in units of 1e-4.
    pub point_var_e4: f64,
    /// Fraction of landmarks whose base score map peaks at the right grid.
    pub grid_accuracy: Option<f64>,
    /// Mean and standard deviation of each landmark's error, percent.
    pub per_landmark: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn per_landmark_csv(&self) -> String {
        let mut s = String::from("landmark,mean,std\n");
        for (i, (m, d)) in self.per_landmark.iter().enumerate() {
            s.push_str(&format!("{i},{m},{d}\n"));
        }
        s
    }
}

/// Metrics of precomputed predictions against `samples`.
pub fn score_predictions(
    preds: &[LandmarkSet],
    samples: &[Sample],
    norm: NormKind,
    image_size: (usize, usize),
) -> Result<EvalReport> {
    if samples.is_empty() || preds.len() != samples.len() {
        return Err(EvalError::Config(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let n = samples[0].landmarks.len();
    let mut per: Vec<Vec<f64>> = vec![Vec::with_capacity(samples.len()); n];
    let (mut nme_sum, mut pv_sum) = (0.0, 0.0);
    for (p, s) in preds.iter().zip(samples) {
        let mode = norm.mode_for(s, image_size.0, image_size.1);
        let errs = landmark_errors(p, &s.landmarks, &mode)?;
        if errs.len() != n {
            return Err(EvalError::Config("samples disagree on the landmark count".into()));
        }
        nme_sum += errs.iter().sum::<f64>() / n as f64;
        pv_sum += point_var(p, &s.landmarks, &mode)?;
        for (acc, e) in per.iter_mut().zip(errs) {
            acc.push(e);
        }
    }
    let count = samples.len();
    let per_landmark = per
        .iter()
        .map(|v| {
            let m = v.iter().sum::<f64>() / count as f64;
            let var = v.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / count as f64;
            (m, var.sqrt())
        })
        .collect();
    let point_var = pv_sum / count as f64;
    let report = EvalReport {
        norm: norm.mode_for(&samples[0], image_size.0, image_size.1).name().to_string(),
        count,
        nme: nme_sum / count as f64,
        point_var,
        point_var_e4: point_var * 1e4,
        grid_accuracy: None,
        per_landmark,
    };
    if !report.nme.is_finite() || !report.point_var.is_finite() {
        return Err(EvalError::Config("non-finite metric".into()));
    }
    Ok(report)
}

/// Full evaluation of a model on cropped samples. Grid accuracy is reported
/// for PIP heads.
pub fn evaluate(model: &LandmarkModel, samples: &[Sample], norm: NormKind) -> Result<EvalReport> {
    let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
    let preds = model.predict(&images)?;
    let mut report = score_predictions(&preds, samples, norm, model.input_size())?;
    if model.kind().is_pip() {
        report.grid_accuracy = Some(grid_accuracy(model, samples, Tap::Score)?);
    }
    Ok(report)
}

/// Fraction of (sample, landmark) pairs whose score-tap argmax is the
/// landmark's positive grid at that tap's stride.
pub fn grid_accuracy(model: &LandmarkModel, samples: &[Sample], tap: Tap) -> Result<f64> {
    if samples.is_empty() {
        return Err(EvalError::Config("grid accuracy of an empty set".into()));
    }
    let shape = model.net.tap_shape(tap).map_err(TrainError::from)?.to_vec();
    let (h, w) = (shape[1], shape[2]);
    let stride = model.tap_stride(tap)?;
    let (iw, ih) = model.input_size();
    let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
    let cells = model.score_argmax(&images, tap)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (s, c) in samples.iter().zip(cells) {
        let lm = crate::codec::clamp_to_frame(&s.landmarks, iw, ih);
        for (p, got) in lm.points().iter().zip(c) {
            hit += usize::from(positive_grid(*p, stride, h, w) == got);
            total += 1;
        }
    }
    Ok(hit as f64 / total as f64)
}

const GREEN: [u8; 3] = [0, 220, 0];
const RED: [u8; 3] = [230, 0, 0];

/// Writes one PNG per image: ground truth green (when given), prediction red.
pub fn write_overlays(
    dir: &Path,
    images: &[&GrayImage],
    preds: &[LandmarkSet],
    truth: Option<&[LandmarkSet]>,
    scale: usize,
) -> Result<Vec<PathBuf>> {
    if preds.len() != images.len() || truth.is_some_and(|t| t.len() != images.len()) {
        return Err(EvalError::Config("overlay inputs differ in length".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(images.len());
    for (i, (img, p)) in images.iter().zip(preds).enumerate() {
        let mut o = Overlay::from_gray(img, scale);
        if let Some(t) = truth {
            for q in t[i].points() {
                o.dot(q.x, q.y, scale, GREEN);
            }
        }
        for q in p.points() {
            o.dot(q.x, q.y, scale, RED);
        }
        let path = dir.join(format!("{i:05}.png"));
        o.save(&path)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{BBox, Point};

    fn sample(lm: LandmarkSet) -> Sample {
        Sample {
            image: GrayImage::zeros(64, 64),
            landmarks: lm,
            bbox: BBox::new(0.0, 0.0, 64.0, 64.0),
            domain: "A".into(),
            labeled: true,
        }
    }

    #[test]
    fn per_landmark_mean_matches_nme() {
        let gt = LandmarkSet::from_xy(&[(10.0, 10.0), (30.0, 10.0), (20.0, 40.0)]).unwrap();
        let samples = vec![sample(gt.clone()), sample(gt.map(|p| Point::new(p.x + 1.0, p.y)))];
        let preds = vec![
            gt.map(|p| Point::new(p.x + 3.0, p.y + 4.0)),
            LandmarkSet::from_xy(&[(12.0, 10.0), (31.0, 11.0), (20.0, 40.0)]).unwrap(),
        ];
        let r = score_predictions(&preds, &samples, NormKind::InterOcular(0, 1), (64, 64)).unwrap();
        let mean = r.per_landmark.iter().map(|p| p.0).sum::<f64>() / 3.0;
        assert!((mean - r.nme).abs() < 1e-9);
        assert_eq!(r.count, 2);
        assert_eq!(r.norm, "inter_ocular");
        assert_eq!(r.per_landmark_csv().lines().count(), 4);
    }
}
