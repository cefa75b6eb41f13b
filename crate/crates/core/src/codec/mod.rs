//! Network-free landmark mathematics: label maps, losses, decoders and
//! neighbor tables.
//!
//! Grid convention everywhere: a point `p` (pixels) falls in grid
//! `floor(p / stride)` and is recovered as `(grid + offset) * stride`, with
//! the offset measured from the grid's top-left corner.
//!
//! Channel layout of the PIP maps, for `N` landmarks and `C` neighbors:
//! - score: channel `i` is landmark `i`;
//! - offset: channel `i` holds x of landmark `i`, channel `N + i` holds y;
//! - neighbor: channel `i*C + m` holds x of the `m`-th neighbor of landmark
//!   `i`, channel `N*C + i*C + m` holds its y.

mod heatmap;
mod landmarks;
mod loss;
mod neighbors;
mod pip;

pub use heatmap::{decode_quarter, encode_gaussian};
pub use landmarks::{BBox, LandmarkSet, Point};
pub use loss::{coord_loss, map_loss, pip_loss, score_loss, PipLoss, PipPreds};
pub use neighbors::{build_neighbor_table, mean_shape, MeanShape, MeanShapeReport, NeighborTable};
pub use pip::{argmax_cells, clamp_to_frame, decode_pip, decode_pip_nrm, encode_targets, positive_grid, TargetMaps};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

/// Margin used when clamping landmarks into the frame before encoding.
pub const CLAMP_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("a landmark set needs at least 2 points, got {0}")]
    TooFewLandmarks(usize),
    #[error("landmark {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("invalid head configuration: {0}")]
    Config(String),
    #[error("map shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate bounding box {0:?}")]
    DegenerateBox([f64; 4]),
    #[error("score map for landmark {0} contains NaN")]
    NanScore(usize),
    #[error("no usable training samples")]
    EmptyTrainingSet,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = CodecError> = std::result::Result<T, E>;

/// Everything the label maps and the loss need to know about a head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub num_landmarks: usize,
    /// Neighbors per landmark; 0 disables neighbor regression.
    pub num_neighbors: usize,
    pub stride: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CodecError::Config(m));
        if self.num_landmarks < 2 {
            return bad(format!("need at least 2 landmarks, got {}", self.num_landmarks));
        }
        if self.num_neighbors >= self.num_landmarks {
            return bad(format!(
                "{} neighbors requested but only {} other landmarks exist",
                self.num_neighbors,
                self.num_landmarks - 1
            ));
        }
        if self.stride == 0 || self.input_h % self.stride != 0 || self.input_w % self.stride != 0 {
            return bad(format!(
                "stride {} does not divide input {}x{}",
                self.stride, self.input_h, self.input_w
            ));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad(format!("alpha {} and beta {} must be positive", self.alpha, self.beta));
        }
        Ok(())
    }

    pub fn map_h(&self) -> usize {
        self.input_h / self.stride
    }

    pub fn map_w(&self) -> usize {
        self.input_w / self.stride
    }

    pub fn map_pixels(&self) -> usize {
        self.map_h() * self.map_w()
    }

    pub fn with_stride(&self, stride: usize) -> Self {
        Self { stride, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> HeadConfig {
        HeadConfig { num_landmarks: 4, num_neighbors: 2, stride: 8, input_h: 64, input_w: 64, alpha: 0.1, beta: 0.1 }
    }

    #[test]
    fn head_config_validation() {
        assert!(cfg().validate().is_ok());
        assert_eq!((cfg().map_h(), cfg().map_w()), (8, 8));
        assert!(HeadConfig { num_neighbors: 4, ..cfg() }.validate().is_err());
        assert!(HeadConfig { stride: 12, ..cfg() }.validate().is_err());
        assert!(HeadConfig { alpha: 0.0, ..cfg() }.validate().is_err());
        assert!(HeadConfig { num_landmarks: 1, num_neighbors: 0, ..cfg() }.validate().is_err());
    }
}
