use serde::{Deserialize, Serialize};

use crate::codec::{
    build_neighbor_table, decode_pip, decode_pip_nrm, decode_quarter, mean_shape, HeadConfig, LandmarkSet,
    MeanShape, NeighborTable, Point,
};
use crate::data::{crop_face, CropConfig, GrayImage, Sample};
use crate::networks::{attach_aux_heads, attach_head, build_backbone, BackboneConfig, HeadKind, NetworkGraph, Tap};
use crate::tensor::{SeededRng, Tensor};

use super::{coefficient_table, Result, StrideLadder, TrainError};

/// Everything needed to rebuild a model's architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub backbone: BackboneConfig,
    pub kind: HeadKind,
    pub num_landmarks: usize,
    /// Neighbors per landmark for the neighbor head.
    pub num_neighbors: usize,
    /// Output stride of a heatmap head; other heads use the feature stride.
    pub map_stride: usize,
    /// Loss weights; looked up from the stride when absent.
    pub alpha_beta: Option<(f64, f64)>,
    pub aux: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            kind: HeadKind::PipNrm,
            num_landmarks: 16,
            num_neighbors: 2,
            map_stride: 2,
            alpha_beta: None,
            aux: false,
        }
    }
}

impl ModelSpec {
    pub fn head_config(&self) -> Result<HeadConfig> {
        let bb = &self.backbone;
        bb.validate()?;
        let stride = match self.kind {
            HeadKind::Map => self.map_stride,
            _ => bb.stride(),
        };
        let (alpha, beta) = match self.alpha_beta {
            Some(ab) => ab,
            None if self.kind.is_pip() => coefficient_table(stride, StrideLadder::Toy)?,
            None => (1.0, 1.0),
        };
        let num_neighbors = if self.kind == HeadKind::PipNrm { self.num_neighbors } else { 0 };
        let h = HeadConfig {
            num_landmarks: self.num_landmarks,
            num_neighbors,
            stride,
            input_h: bb.input_h,
            input_w: bb.input_w,
            alpha,
            beta,
        };
        h.validate()?;
        Ok(h)
    }
}

/// Gaussian label radius, in grid units, for a heatmap at `stride` on a
/// 64-pixel input: one input pixel at every stride.
pub fn gaussian_radius(stride: usize) -> f64 {
    1.0 / stride as f64
}

/// Crops samples to the network input with `crop`, keeping the face box in
/// crop coordinates.
pub fn prepare_samples(samples: &[Sample], crop: &CropConfig) -> Result<Vec<Sample>> {
    samples.iter().map(|s| Ok(crop_face(s, crop)?.0)).collect()
}

/// A network together with the landmark-specific state its head needs.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkModel {
    pub spec: ModelSpec,
    pub head: HeadConfig,
    pub net: NetworkGraph<f32>,
    pub table: Option<NeighborTable>,
    pub mean: MeanShape,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Decoded<'a> {
    Pip { score: &'a [f64], offset: &'a [f64], neighbor: Option<&'a [f64]> },
    Map(&'a [f64]),
    Coords(&'a [f64]),
}

impl LandmarkModel {
    /// Builds an untrained model. The mean shape and neighbor table come
    /// from `train`, which must be the training split only.
    pub fn new(spec: &ModelSpec, train: &[Sample], rng: &mut SeededRng) -> Result<Self> {
        let pairs: Vec<_> = train.iter().map(|s| (s.landmarks.clone(), s.bbox)).collect();
        let (mean, _) = mean_shape(&pairs)?;
        if mean.len() != spec.num_landmarks {
            return Err(TrainError::Config(format!(
                "samples have {} landmarks, model expects {}",
                mean.len(),
                spec.num_landmarks
            )));
        }
        let head = spec.head_config()?;
        let table = match spec.kind {
            HeadKind::PipNrm => Some(build_neighbor_table(&mean, spec.num_neighbors)?),
            _ => None,
        };
        let net = build_backbone(&spec.backbone, rng)?;
        let mut net = attach_head(net, spec.kind, head, rng)?;
        if spec.aux {
            net = attach_aux_heads(net, rng)?;
        }
        Ok(Self { spec: spec.clone(), head, net, table, mean })
    }

    /// Rebuilds the architecture around a stored mean shape and neighbor
    /// table. Parameters are freshly initialized.
    pub fn from_state(spec: &ModelSpec, mean: MeanShape, table: Option<NeighborTable>) -> Result<Self> {
        let head = spec.head_config()?;
        if mean.len() != spec.num_landmarks {
            return Err(TrainError::Config(format!("mean shape has {} points, model expects {}", mean.len(), spec.num_landmarks)));
        }
        if (spec.kind == HeadKind::PipNrm) != table.is_some() {
            return Err(TrainError::Config(format!("neighbor table presence does not match a {} head", spec.kind)));
        }
        if let Some(t) = &table {
            if t.num_landmarks() != spec.num_landmarks || t.num_neighbors() != spec.num_neighbors {
                return Err(TrainError::Config("neighbor table does not match the model".into()));
            }
        }
        let mut rng = SeededRng::new(0);
        let net = build_backbone(&spec.backbone, &mut rng)?;
        let mut net = attach_head(net, spec.kind, head, &mut rng)?;
        if spec.aux {
            net = attach_aux_heads(net, &mut rng)?;
        }
        Ok(Self { spec: spec.clone(), head, net, table, mean })
    }

    pub fn kind(&self) -> HeadKind {
        self.spec.kind
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.head.input_w, self.head.input_h)
    }

    /// Stride of a score-like tap.
    pub fn tap_stride(&self, tap: Tap) -> Result<usize> {
        let shape = self.net.tap_shape(tap)?;
        Ok(self.head.input_h / shape[shape.len() - 2])
    }

    /// Taps read by the decoder.
    pub fn decode_taps(&self) -> Vec<Tap> {
        match self.spec.kind {
            HeadKind::Pip => vec![Tap::Score, Tap::Offset],
            HeadKind::PipNrm => vec![Tap::Score, Tap::Offset, Tap::Neighbor],
            HeadKind::Map => vec![Tap::Heatmap],
            HeadKind::Coord => vec![Tap::Coords],
        }
    }

    pub(crate) fn input_tensor(&self, images: &[&GrayImage]) -> Result<Tensor<f32>> {
        let (w, h) = self.input_size();
        let mut data = Vec::with_capacity(images.len() * w * h);
        for img in images {
            if (img.width(), img.height()) != (w, h) {
                return Err(TrainError::Config(format!(
                    "image is {}x{}, model takes {w}x{h}",
                    img.width(),
                    img.height()
                )));
            }
            data.extend_from_slice(img.data());
        }
        Ok(Tensor::new(&[images.len(), 1, h, w], data)?)
    }

    pub(crate) fn decode(&self, maps: Decoded<'_>) -> Result<LandmarkSet> {
        let h = &self.head;
        Ok(match maps {
            Decoded::Pip { score, offset, neighbor: None } => decode_pip(score, offset, h)?,
            Decoded::Pip { score, offset, neighbor: Some(nb) } => {
                let table = self.table.as_ref().ok_or_else(|| TrainError::Config("missing neighbor table".into()))?;
                decode_pip_nrm(score, offset, nb, table, h)?
            }
            Decoded::Map(m) => decode_quarter(m, h.num_landmarks, h.map_h(), h.map_w(), h.stride)?,
            Decoded::Coords(c) => {
                let (w, hh) = (h.input_w as f64, h.input_h as f64);
                LandmarkSet::new(c.chunks(2).map(|p| Point::new(p[0] * w, p[1] * hh)).collect())?
            }
        })
    }

    /// Batched tap values as `f64`, one slice per sample.
    pub fn tap_values(&self, images: &[&GrayImage], taps: &[Tap]) -> Result<Vec<Vec<Vec<f64>>>> {
        let x = self.input_tensor(images)?;
        let out = self.net.infer(x, taps)?;
        let b = images.len();
        let per_tap: Vec<Vec<f64>> = taps.iter().map(|t| out[t].to_f64_vec()).collect();
        Ok((0..b)
            .map(|i| {
                per_tap
                    .iter()
                    .map(|v| {
                        let n = v.len() / b;
                        v[i * n..(i + 1) * n].to_vec()
                    })
                    .collect()
            })
            .collect())
    }

    pub fn predict(&self, images: &[&GrayImage]) -> Result<Vec<LandmarkSet>> {
        let taps = self.decode_taps();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            for maps in self.tap_values(chunk, &taps)? {
                let d = match self.spec.kind {
                    HeadKind::Pip => Decoded::Pip { score: &maps[0], offset: &maps[1], neighbor: None },
                    HeadKind::PipNrm => Decoded::Pip { score: &maps[0], offset: &maps[1], neighbor: Some(&maps[2]) },
                    HeadKind::Map => Decoded::Map(&maps[0]),
                    HeadKind::Coord => Decoded::Coords(&maps[0]),
                };
                out.push(self.decode(d)?);
            }
        }
        Ok(out)
    }

    /// PIP decode without neighbor fusion, for comparing the two decoders
    /// on one network.
    pub fn predict_without_neighbors(&self, images: &[&GrayImage]) -> Result<Vec<LandmarkSet>> {
        if !self.spec.kind.is_pip() {
            return self.predict(images);
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            for maps in self.tap_values(chunk, &[Tap::Score, Tap::Offset])? {
                out.push(self.decode(Decoded::Pip { score: &maps[0], offset: &maps[1], neighbor: None })?);
            }
        }
        Ok(out)
    }

    /// Row-major argmax cell of each landmark's channel in a score tap.
    pub fn score_argmax(&self, images: &[&GrayImage], tap: Tap) -> Result<Vec<Vec<(usize, usize)>>> {
        let shape = self.net.tap_shape(tap)?.to_vec();
        let (n, h, w) = (shape[0], shape[1], shape[2]);
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            for maps in self.tap_values(chunk, &[tap])? {
                let cells = crate::codec::argmax_cells(&maps[0], n, h * w)?;
                out.push(cells.into_iter().map(|c| (c / w, c % w)).collect());
            }
        }
        Ok(out)
    }
}
