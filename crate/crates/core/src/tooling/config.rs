use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, CropConfig, SynthConfig, Template};
use crate::evaluation::NormKind;
use crate::networks::HeadKind;
use crate::stc::CurriculumSchedule;
use crate::training::{ModelSpec, TrainSchedule};

use super::{Result, ToolError};

/// Dataset sizes of the synthetic A-to-B benchmark, or manifests that
/// replace its splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub test: usize,
    pub unlabeled: usize,
    pub source: SynthConfig,
    pub target: SynthConfig,
    pub crop: CropConfig,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub unlabeled_manifest: Option<PathBuf>,
    pub target_test_manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: 200,
            test: 100,
            unlabeled: 200,
            source: SynthConfig::domain_a(),
            target: SynthConfig::domain_b(),
            crop: CropConfig::default(),
            train_manifest: None,
            test_manifest: None,
            unlabeled_manifest: None,
            target_test_manifest: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Stride,
    Neighbors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub strides: Vec<usize>,
    pub neighbors: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { kind: SweepKind::Stride, strides: vec![4, 8, 16, 32], neighbors: vec![1, 2, 4, 8] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub runs: usize,
    pub kinds: Vec<HeadKind>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 10, runs: 50, kinds: vec![HeadKind::PipNrm, HeadKind::Map, HeadKind::Coord] }
    }
}

/// Every command's parameters in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub schedule: TrainSchedule,
    pub augment: AugmentConfig,
    pub norm: NormKind,
    pub curriculum: CurriculumSchedule,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
    /// Number of images written by the `synth` command.
    pub synth_count: usize,
    /// Model read by `eval` and `prior-exp`; the training output when absent.
    pub checkpoint: Option<PathBuf>,
    /// Non-face images probed by `prior-exp`.
    pub nonface_count: usize,
    /// Learning rate for black-image training. On constant input only the
    /// biases carry signal, and Adam moves each by at most about `lr` per
    /// step, so the image-training rate cannot reach the label mean within
    /// the schedule.
    pub prior_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = Template::builtin();
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelSpec { num_landmarks: t.len(), ..ModelSpec::default() },
            schedule: TrainSchedule { lr: 1e-3, ..TrainSchedule::default() },
            augment: AugmentConfig::default(),
            norm: NormKind::InterOcular(t.eyes[0], t.eyes[1]),
            curriculum: CurriculumSchedule::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
            synth_count: 200,
            checkpoint: None,
            nonface_count: 8,
            prior_lr: 1e-2,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ToolError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Training schedule seeded with the run seed.
    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule { seed: self.seed, ..self.schedule.clone() }
    }

    /// Schedule for black-image training.
    pub fn prior_schedule(&self) -> TrainSchedule {
        TrainSchedule { lr: self.prior_lr, ..self.schedule() }
    }

    /// Augmentation with the synthetic template's flip pairing filled in.
    pub fn augment(&self) -> AugmentConfig {
        let mut a = self.augment.clone();
        if a.flip_p > 0.0 && a.flip_map.is_none() {
            a.flip_map = Some(Template::builtin().flip);
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: String| Err(ToolError::Config(e));
        self.schedule.validate()?;
        self.prior_schedule().validate()?;
        self.augment().validate()?;
        self.model.head_config()?;
        self.curriculum.validate()?;
        self.data.source.validate()?;
        self.data.target.validate()?;
        if self.data.crop.out_size != self.model.backbone.input_h || self.data.crop.out_size != self.model.backbone.input_w
        {
            return cfg(format!(
                "crop size {} does not match the {}x{} model input",
                self.data.crop.out_size, self.model.backbone.input_w, self.model.backbone.input_h
            ));
        }
        if self.data.train == 0 && self.data.train_manifest.is_none() {
            return cfg("no training data".into());
        }
        if let NormKind::InterOcular(a, b) = self.norm {
            if a == b || a >= self.model.num_landmarks || b >= self.model.num_landmarks {
                return cfg(format!("eye indices ({a}, {b}) are invalid for {} landmarks", self.model.num_landmarks));
            }
        }
        if self.bench.runs == 0 {
            return cfg("bench.runs must be positive".into());
        }
        if self.sweep.strides.is_empty() || self.sweep.neighbors.is_empty() {
            return cfg("sweep grids must be nonempty".into());
        }
        Ok(())
    }
}
