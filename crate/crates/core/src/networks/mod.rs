//! Toy convolutional backbone plus the detection heads compared in this
//! crate: PIP (optionally with neighbor regression), heatmap (MapNet) and
//! coordinate (CoordNet) regression, and the score-only auxiliary taps used
//! by curriculum self-training.
//!
//! Stride-2 convolutions use 4x4 kernels with padding 1 so that every
//! halving is exact on even maps; this is the adjoint geometry of the 4x4
//! stride-2 deconvolution used to reduce stride.

mod build;
mod graph;

pub use build::{attach_aux_heads, attach_head, build_backbone, BackboneConfig};
pub use graph::{Forward, Layer, LayerKind, NetworkGraph, Part, Source};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("network has no {0:?} output")]
    MissingTap(Tap),
    #[error("input shape {got:?} does not match configured {want:?}")]
    Input { got: Vec<usize>, want: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = NetworkError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeadKind {
    Pip,
    PipNrm,
    Map,
    Coord,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [HeadKind::Pip, HeadKind::PipNrm, HeadKind::Map, HeadKind::Coord];

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Pip => "PIP",
            HeadKind::PipNrm => "PIP_NRM",
            HeadKind::Map => "MAP",
            HeadKind::Coord => "COORD",
        }
    }

    pub fn is_pip(&self) -> bool {
        matches!(self, HeadKind::Pip | HeadKind::PipNrm)
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Named network outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tap {
    Feature,
    Score,
    Offset,
    Neighbor,
    Heatmap,
    Coords,
    /// Score map at `2^k` times the PIP stride, `k` in `1..=2`.
    AuxScore(u8),
}
