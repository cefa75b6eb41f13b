use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{LandmarkSet, Point};
use crate::data::{AugmentConfig, GrayImage, Sample};
use crate::networks::HeadKind;
use crate::tensor::SeededRng;
use crate::training::{train_supervised, LandmarkModel, ModelSpec, TrainReport, TrainSchedule};

use super::{nme, write_overlays, EvalError, NormMode, Result};

/// Outcome of training one head on black images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorResult {
    pub kind: HeadKind,
    /// Per-coordinate mean of the training labels, in pixels.
    pub label_mean: LandmarkSet,
    pub prediction: LandmarkSet,
    /// Whether every black probe (alone and batched) gave the same output.
    pub identical: bool,
    /// Image-size NME between the prediction and `label_mean`.
    pub nme_to_mean: f64,
    pub report: TrainReport,
}

fn label_mean(samples: &[Sample]) -> Result<LandmarkSet> {
    let n = samples[0].landmarks.len();
    let mut acc = vec![(0.0, 0.0); n];
    for s in samples {
        if s.landmarks.len() != n {
            return Err(EvalError::Config("samples disagree on the landmark count".into()));
        }
        for (a, p) in acc.iter_mut().zip(s.landmarks.points()) {
            a.0 += p.x;
            a.1 += p.y;
        }
    }
    let k = samples.len() as f64;
    Ok(LandmarkSet::new(acc.into_iter().map(|(x, y)| Point::new(x / k, y / k)).collect())
        .map_err(crate::training::TrainError::from)?)
}

/// Trains a `spec` model on all-black copies of `labeled` (keeping their
/// labels) and probes it with black images.
pub fn black_train(spec: &ModelSpec, labeled: &[Sample], sched: &TrainSchedule) -> Result<PriorResult> {
    if labeled.is_empty() {
        return Err(EvalError::Config("no training labels".into()));
    }
    let black: Vec<Sample> = labeled
        .iter()
        .map(|s| Sample { image: GrayImage::zeros(s.image.width(), s.image.height()), ..s.clone() })
        .collect();
    let mut rng = SeededRng::new(sched.seed);
    let mut model = LandmarkModel::new(spec, &black, &mut rng)?;
    let report = train_supervised(&mut model, &black, sched, &AugmentConfig::none(), None)?;
    let (w, h) = model.input_size();
    let probe = GrayImage::zeros(w, h);
    let other = GrayImage::zeros(w, h);
    let single = model.predict(&[&probe])?;
    let batched = model.predict(&[&other, &probe, &other])?;
    let identical = batched.iter().all(|p| *p == single[0]);
    let mean = label_mean(labeled)?;
    let nme_to_mean = nme(&single[0], &mean, &NormMode::ImageSize { width: w, height: h })?;
    Ok(PriorResult { kind: spec.kind, label_mean: mean, prediction: single[0].clone(), identical, nme_to_mean, report })
}

/// Runs a trained model on faceless images and renders each prediction.
pub fn nonface_test(model: &LandmarkModel, images: &[GrayImage], dir: &Path) -> Result<Vec<PathBuf>> {
    let refs: Vec<&GrayImage> = images.iter().collect();
    let preds = model.predict(&refs)?;
    write_overlays(dir, &refs, &preds, None, 4)
}
