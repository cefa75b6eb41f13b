//! Face samples: synthetic generation, points files and manifests, cropping
//! and training-time augmentation.

mod augment;
mod crop;
mod image;
mod manifest;
mod pts;
mod synth;

pub use self::image::{GrayImage, Overlay};
pub use augment::{augment, AugmentConfig};
pub use crop::{crop_face, CropConfig};
pub use manifest::{load_manifest, write_dataset, Manifest, ManifestRecord};
pub use pts::{format_pts, load_pts, parse_pts, write_pts};
pub use synth::{nonface_images, synth_generate, DomainStyle, SynthConfig, Template};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{BBox, CodecError, LandmarkSet};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed header, expected `{expected}`")]
    PtsHeader { line: usize, expected: &'static str },
    #[error("line {line}: declared {declared} points but found {found}")]
    PtsCount { line: usize, declared: usize, found: usize },
    #[error("line {line}: `{token}` is not a number")]
    PtsNumber { line: usize, token: String },
    #[error("line {line}: expected two coordinates")]
    PtsArity { line: usize },
    #[error("image error: {0}")]
    Image(String),
    #[error("invalid data configuration: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub landmarks: LandmarkSet,
    pub bbox: BBox,
    pub domain: String,
    pub labeled: bool,
}

/// Left/right pairing of landmarks used when mirroring a face.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FlipMap {
    perm: Vec<usize>,
}

impl TryFrom<Vec<usize>> for FlipMap {
    type Error = DataError;

    fn try_from(perm: Vec<usize>) -> Result<Self> {
        Self::new(perm)
    }
}

impl From<FlipMap> for Vec<usize> {
    fn from(f: FlipMap) -> Self {
        f.perm
    }
}

impl FlipMap {
    /// Accepts only involutive permutations.
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        for (i, &j) in perm.iter().enumerate() {
            if j >= n || perm[j] != i {
                return Err(DataError::Config(format!("flip map is not an involution at index {i}")));
            }
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    /// The 68-point mirror permutation shipped as a fixture.
    pub fn standard68() -> Self {
        #[derive(Deserialize)]
        struct Fixture {
            flip: FlipMap,
        }
        let f: Fixture = serde_json::from_str(include_str!("../../fixtures/flip68.json")).expect("valid fixture");
        f.flip
    }
}
