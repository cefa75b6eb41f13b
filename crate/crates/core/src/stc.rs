//! Self-training with a curriculum over score-map strides.
//!
//! Pseudo-labeled samples are trained through a task that starts as grid
//! classification on the coarsest auxiliary score map and hardens to the
//! full head loss. Labeled samples always take the full loss.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{write_pts, AugmentConfig, GrayImage, Sample};
use crate::networks::Tap;
use crate::training::{
    train_items, train_supervised, LandmarkModel, Objective, Result, TrainError, TrainReport, TrainSchedule,
    Validation,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    /// Score loss on the stride-4x auxiliary map.
    T1,
    /// Score loss on the stride-2x auxiliary map.
    T2,
    /// The full head loss at the base stride.
    T3,
}

impl TaskId {
    pub fn objective(self) -> Objective {
        match self {
            TaskId::T1 => Objective::Score(Tap::AuxScore(2)),
            TaskId::T2 => Objective::Score(Tap::AuxScore(1)),
            TaskId::T3 => Objective::Full,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::T1 => "T1",
            TaskId::T2 => "T2",
            TaskId::T3 => "T3",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumSchedule {
    pub tasks: Vec<TaskId>,
    /// Epochs of each round; the supervised schedule's length when absent.
    pub epochs_per_round: Option<usize>,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self { tasks: vec![TaskId::T1, TaskId::T2, TaskId::T3, TaskId::T3, TaskId::T3], epochs_per_round: None }
    }
}

impl CurriculumSchedule {
    /// Plain self-training: three full-loss rounds.
    pub fn self_training() -> Self {
        Self { tasks: vec![TaskId::T3; 3], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.last() != Some(&TaskId::T3) {
            return Err(TrainError::Config(format!("curriculum {:?} must end with T3", self.tasks)));
        }
        if self.epochs_per_round == Some(0) {
            return Err(TrainError::Config("epochs per round must be positive".into()));
        }
        Ok(())
    }

    pub fn round_schedule(&self, sched: &TrainSchedule) -> TrainSchedule {
        match self.epochs_per_round {
            Some(e) if e != sched.epochs => sched.scaled(e),
            _ => sched.clone(),
        }
    }
}

/// Unlabeled samples carrying the landmarks a model predicted for them.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoSet {
    pub samples: Vec<Sample>,
    /// Round whose model produced the labels; 0 is the supervised model.
    pub round: usize,
    /// Inputs whose decode failed.
    pub skipped: usize,
}

impl PseudoSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes one points file per pseudo-labeled sample.
    pub fn write_pts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(crate::data::DataError::from)?;
        for (i, s) in self.samples.iter().enumerate() {
            write_pts(&dir.join(format!("{i:05}.pts")), &s.landmarks)?;
        }
        Ok(())
    }
}

/// Decodes every unlabeled sample with the full head. There is no
/// confidence filtering; samples that fail to decode are skipped.
pub fn generate_pseudo_labels(model: &LandmarkModel, unlabeled: &[Sample], round: usize) -> Result<PseudoSet> {
    let mut samples = Vec::with_capacity(unlabeled.len());
    let mut skipped = 0;
    for chunk in unlabeled.chunks(32) {
        let images: Vec<&GrayImage> = chunk.iter().map(|s| &s.image).collect();
        let preds: Vec<Option<_>> = match model.predict(&images) {
            Ok(p) => p.into_iter().map(Some).collect(),
            Err(_) => images.iter().map(|img| model.predict(&[img]).ok().map(|mut v| v.remove(0))).collect(),
        };
        for (s, p) in chunk.iter().zip(preds) {
            match p {
                Some(lm) => samples.push(Sample { landmarks: lm, labeled: false, ..s.clone() }),
                None => skipped += 1,
            }
        }
    }
    Ok(PseudoSet { samples, round, skipped })
}

/// Training items of one round: labeled samples take the full loss, pseudo
/// samples take `task`.
pub fn task_items<'a>(labeled: &'a [Sample], pseudo: &'a PseudoSet, task: TaskId) -> Vec<(&'a Sample, Objective)> {
    labeled
        .iter()
        .map(|s| (s, Objective::Full))
        .chain(pseudo.samples.iter().map(|s| (s, task.objective())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundInfo {
    pub round: usize,
    pub task: TaskId,
    pub pseudo_labels: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct StcOutcome {
    pub model: LandmarkModel,
    pub rounds: Vec<RoundInfo>,
    /// Supervised epochs (when run) followed by every round's epochs.
    pub report: TrainReport,
}

/// The curriculum rounds on top of an already supervised model.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    mut model: LandmarkModel,
    labeled: &[Sample],
    unlabeled: &[Sample],
    curriculum: &CurriculumSchedule,
    sched: &TrainSchedule,
    aug: &AugmentConfig,
    val: Option<&Validation<'_>>,
) -> Result<StcOutcome> {
    curriculum.validate()?;
    let needs_aux = curriculum.tasks.iter().any(|t| *t != TaskId::T3) && !unlabeled.is_empty();
    if needs_aux && !model.net.has_aux() {
        return Err(TrainError::Config("curriculum tasks T1/T2 need auxiliary score heads".into()));
    }
    let round_sched = curriculum.round_schedule(sched);
    let mut report = TrainReport::default();
    let mut rounds = Vec::with_capacity(curriculum.tasks.len());
    for (r, &task) in curriculum.tasks.iter().enumerate() {
        let pseudo = generate_pseudo_labels(&model, unlabeled, r)?;
        let items = task_items(labeled, &pseudo, task);
        train_items(&mut model, &items, &round_sched, aug, val, &mut report, Some((r, task.name())))?;
        rounds.push(RoundInfo { round: r, task, pseudo_labels: pseudo.len(), skipped: pseudo.skipped });
    }
    Ok(StcOutcome { model, rounds, report })
}

/// Supervised training on `labeled`, then the curriculum rounds.
pub fn run_stc(
    mut model: LandmarkModel,
    labeled: &[Sample],
    unlabeled: &[Sample],
    curriculum: &CurriculumSchedule,
    sched: &TrainSchedule,
    aug: &AugmentConfig,
) -> Result<StcOutcome> {
    curriculum.validate()?;
    let sup = train_supervised(&mut model, labeled, sched, aug, None)?;
    let mut out = adapt(model, labeled, unlabeled, curriculum, sched, aug, None)?;
    let mut report = sup;
    report.extend(out.report);
    out.report = report;
    Ok(out)
}
