use serde::{Deserialize, Serialize};

use crate::data::{load_manifest, synth_generate, Sample, SynthConfig, Template};
use crate::evaluation::{evaluate, grid_accuracy, score_predictions, EvalReport};
use crate::networks::{HeadKind, Tap};
use crate::stc::{adapt, CurriculumSchedule};
use crate::tensor::SeededRng;
use crate::training::{prepare_samples, train_supervised, LandmarkModel, ModelSpec, TrainReport};

use super::{Result, RunConfig};

/// Cropped splits of the A-to-B benchmark.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Target-domain images with their labels hidden.
    pub unlabeled: Vec<Sample>,
    pub target_test: Vec<Sample>,
}

const DATA_STREAM: u64 = 0xda7a;

fn split(
    manifest: &Option<std::path::PathBuf>,
    synth: &SynthConfig,
    count: usize,
    stream: &mut SeededRng,
    labeled: bool,
) -> Result<Vec<Sample>> {
    let template = Template::builtin();
    let mut raw = match manifest {
        Some(p) => load_manifest(p)?,
        None => synth_generate(&SynthConfig { labeled, ..synth.clone() }, &template, count, stream)?,
    };
    for s in &mut raw {
        s.labeled = labeled;
    }
    Ok(raw)
}

impl Benchmark {
    /// Generates (or loads) every split from the run seed.
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.data;
        let base = SeededRng::new(cfg.seed).derive(DATA_STREAM);
        let crop = |v: Vec<Sample>| -> Result<Vec<Sample>> { Ok(prepare_samples(&v, &d.crop)?) };
        Ok(Self {
            train: crop(split(&d.train_manifest, &d.source, d.train, &mut base.derive(1), true)?)?,
            test: crop(split(&d.test_manifest, &d.source, d.test, &mut base.derive(2), true)?)?,
            unlabeled: crop(split(&d.unlabeled_manifest, &d.target, d.unlabeled, &mut base.derive(3), false)?)?,
            target_test: crop(split(&d.target_test_manifest, &d.target, d.test, &mut base.derive(4), true)?)?,
        })
    }
}

/// Fresh model of `spec` initialized from the run seed.
pub fn init_model(cfg: &RunConfig, spec: &ModelSpec, train: &[Sample]) -> Result<LandmarkModel> {
    Ok(LandmarkModel::new(spec, train, &mut SeededRng::new(cfg.seed).derive(0x1417))?)
}

pub fn train_model(cfg: &RunConfig, spec: &ModelSpec, train: &[Sample]) -> Result<(LandmarkModel, TrainReport)> {
    let mut model = init_model(cfg, spec, train)?;
    let report = train_supervised(&mut model, train, &cfg.schedule(), &cfg.augment(), None)?;
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadResult {
    pub kind: HeadKind,
    pub source: EvalReport,
    pub target: EvalReport,
}

/// Trains one model per head kind and evaluates each on both domains.
pub fn compare_heads(cfg: &RunConfig, bench: &Benchmark, kinds: &[HeadKind]) -> Result<Vec<HeadResult>> {
    kinds
        .iter()
        .map(|&kind| {
            let spec = ModelSpec { kind, ..cfg.model.clone() };
            let (model, _) = train_model(cfg, &spec, &bench.train)?;
            Ok(HeadResult {
                kind,
                source: evaluate(&model, &bench.test, cfg.norm)?,
                target: evaluate(&model, &bench.target_test, cfg.norm)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub stride: usize,
    pub neighbors: usize,
    pub nme: f64,
    pub grid_accuracy: Option<f64>,
}

/// One model per feature stride, all with the configured head kind.
pub fn stride_sweep(cfg: &RunConfig, bench: &Benchmark, strides: &[usize]) -> Result<Vec<SweepPoint>> {
    strides
        .iter()
        .map(|&stride| {
            let spec = ModelSpec { backbone: cfg.model.backbone.for_stride(stride)?, ..cfg.model.clone() };
            let (model, _) = train_model(cfg, &spec, &bench.train)?;
            let report = evaluate(&model, &bench.test, cfg.norm)?;
            Ok(SweepPoint { stride, neighbors: model.head.num_neighbors, nme: report.nme, grid_accuracy: report.grid_accuracy })
        })
        .collect()
}

/// One neighbor-regression model per neighbor count.
pub fn neighbor_sweep(cfg: &RunConfig, bench: &Benchmark, counts: &[usize]) -> Result<Vec<SweepPoint>> {
    counts
        .iter()
        .map(|&c| {
            let spec = ModelSpec { kind: HeadKind::PipNrm, num_neighbors: c, ..cfg.model.clone() };
            let (model, _) = train_model(cfg, &spec, &bench.train)?;
            let report = evaluate(&model, &bench.test, cfg.norm)?;
            Ok(SweepPoint {
                stride: model.head.stride,
                neighbors: c,
                nme: report.nme,
                grid_accuracy: report.grid_accuracy,
            })
        })
        .collect()
}

/// Grid accuracy of one model's base and auxiliary score maps, coarsest first.
pub fn tap_accuracies(model: &LandmarkModel, samples: &[Sample]) -> Result<Vec<(usize, f64)>> {
    let mut taps = vec![Tap::Score];
    if model.net.has_aux() {
        taps.insert(0, Tap::AuxScore(1));
        taps.insert(0, Tap::AuxScore(2));
    }
    taps.into_iter().map(|t| Ok((model.tap_stride(t)?, grid_accuracy(model, samples, t)?))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationResult {
    /// Target-domain NME of the supervised model.
    pub no_adaptation: f64,
    pub self_training: f64,
    pub stc: f64,
    pub reports: Vec<(String, TrainReport)>,
}

/// Supervised model on the source domain, then both adaptation arms
/// starting from it, all scored on the target test split.
pub fn compare_adaptation(cfg: &RunConfig, bench: &Benchmark) -> Result<AdaptationResult> {
    let spec = ModelSpec { aux: true, ..cfg.model.clone() };
    let (base, sup) = train_model(cfg, &spec, &bench.train)?;
    let sched = cfg.schedule();
    let aug = cfg.augment();
    let nme_of = |m: &LandmarkModel| -> Result<f64> {
        let imgs: Vec<_> = bench.target_test.iter().map(|s| &s.image).collect();
        let preds = m.predict(&imgs)?;
        Ok(score_predictions(&preds, &bench.target_test, cfg.norm, m.input_size())?.nme)
    };
    let no_adaptation = nme_of(&base)?;
    let plain_sched = CurriculumSchedule { tasks: CurriculumSchedule::self_training().tasks, ..cfg.curriculum.clone() };
    let st = adapt(base.clone(), &bench.train, &bench.unlabeled, &plain_sched, &sched, &aug, None)?;
    let stc = adapt(base, &bench.train, &bench.unlabeled, &cfg.curriculum, &sched, &aug, None)?;
    Ok(AdaptationResult {
        no_adaptation,
        self_training: nme_of(&st.model)?,
        stc: nme_of(&stc.model)?,
        reports: vec![("supervised".into(), sup), ("self_training".into(), st.report), ("stc".into(), stc.report)],
    })
}
