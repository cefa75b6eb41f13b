use std::time::Instant;

use crate::codec::{
    coord_loss, encode_gaussian, encode_targets, map_loss, pip_loss, score_loss, HeadConfig, LandmarkSet, PipPreds,
    TargetMaps,
};
use crate::data::{augment, AugmentConfig, Sample};
use crate::evaluation::{nme, NormKind};
use crate::networks::{HeadKind, Tap};
use crate::tensor::{Adam, AdamConfig, SeededRng, Tape, Var};

use super::model::gaussian_radius;
use super::{lr_schedule, EpochRecord, LandmarkModel, Result, TrainError, TrainReport, TrainSchedule};

/// What a training sample is supervised with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    /// The head's own loss (PIP, heatmap or coordinate).
    Full,
    /// Score-map loss only, on the given score tap.
    Score(Tap),
}

/// Held-out samples scored after every epoch.
#[derive(Clone, Debug)]
pub struct Validation<'a> {
    pub samples: &'a [Sample],
    pub norm: NormKind,
}

enum Target {
    Pip(TargetMaps),
    Dense(Vec<f64>),
}

fn encode(model: &LandmarkModel, lm: &LandmarkSet, objective: Objective) -> Result<Target> {
    let head = &model.head;
    Ok(match (objective, model.kind()) {
        (Objective::Full, HeadKind::Pip | HeadKind::PipNrm) => Target::Pip(encode_targets(lm, head, model.table.as_ref())?),
        (Objective::Full, HeadKind::Map) => {
            Target::Dense(encode_gaussian(lm, head.input_h, head.input_w, head.stride, gaussian_radius(head.stride))?)
        }
        (Objective::Full, HeadKind::Coord) => {
            let (w, h) = (head.input_w as f64, head.input_h as f64);
            Target::Dense(lm.points().iter().flat_map(|p| [p.x / w, p.y / h]).collect())
        }
        (Objective::Score(tap), kind) if kind.is_pip() => {
            let stride = model.tap_stride(tap)?;
            let cfg = HeadConfig { num_neighbors: 0, stride, ..*head };
            Target::Pip(encode_targets(lm, &cfg, None)?)
        }
        (Objective::Score(tap), kind) => {
            return Err(TrainError::Config(format!("score-only objective on {tap:?} needs a PIP head, model is {kind}")))
        }
    })
}

struct BatchLoss {
    total: Var,
    /// Score, offset and neighbor terms, each weighted by its group's share
    /// of the batch, so that `L = L_S + alpha L_O + beta L_N`.
    parts: [f64; 3],
}

fn batch_loss(
    tape: &mut Tape<f32>,
    model: &LandmarkModel,
    taps: &std::collections::BTreeMap<Tap, Var>,
    targets: &[(Objective, Target)],
) -> Result<BatchLoss> {
    let b = targets.len() as f32;
    let mut groups: Vec<Objective> = Vec::new();
    for (o, _) in targets {
        if !groups.contains(o) {
            groups.push(*o);
        }
    }
    let tap = |t: Tap| taps.get(&t).copied().ok_or(crate::networks::NetworkError::MissingTap(t));
    let mut total: Option<Var> = None;
    let mut parts = [0.0f64; 3];
    for g in groups {
        let idx: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].0 == g).collect();
        let weight = idx.len() as f32 / b;
        let loss = match (g, model.kind()) {
            (Objective::Full, HeadKind::Pip | HeadKind::PipNrm) => {
                let samples: Vec<(usize, &TargetMaps)> = idx
                    .iter()
                    .map(|&i| match &targets[i].1 {
                        Target::Pip(t) => (i, t),
                        Target::Dense(_) => unreachable!("encoded for a PIP head"),
                    })
                    .collect();
                let preds = PipPreds {
                    score: tap(Tap::Score)?,
                    offset: tap(Tap::Offset)?,
                    neighbor: (model.kind() == HeadKind::PipNrm).then(|| tap(Tap::Neighbor)).transpose()?,
                };
                let l = pip_loss(tape, &preds, &samples, model.head.alpha, model.head.beta)?;
                let w = weight as f64;
                parts[0] += w * tape.scalar_value(l.score)? as f64;
                parts[1] += w * tape.scalar_value(l.offset)? as f64;
                if let Some(n) = l.neighbor {
                    parts[2] += w * tape.scalar_value(n)? as f64;
                }
                l.total
            }
            (Objective::Score(t), _) => {
                let samples: Vec<(usize, &TargetMaps)> = idx
                    .iter()
                    .map(|&i| match &targets[i].1 {
                        Target::Pip(m) => (i, m),
                        Target::Dense(_) => unreachable!("encoded for a PIP head"),
                    })
                    .collect();
                let l = score_loss(tape, tap(t)?, &samples)?;
                parts[0] += weight as f64 * tape.scalar_value(l)? as f64;
                l
            }
            (Objective::Full, kind) => {
                let samples: Vec<(usize, &[f64])> = idx
                    .iter()
                    .map(|&i| match &targets[i].1 {
                        Target::Dense(v) => (i, v.as_slice()),
                        Target::Pip(_) => unreachable!("encoded for a dense head"),
                    })
                    .collect();
                if kind == HeadKind::Map {
                    map_loss(tape, tap(Tap::Heatmap)?, &samples)?
                } else {
                    coord_loss(tape, tap(Tap::Coords)?, &samples)?
                }
            }
        };
        let weighted = if weight == 1.0 { loss } else { tape.scale(loss, weight)? };
        total = Some(match total {
            None => weighted,
            Some(t) => tape.add(t, weighted)?,
        });
    }
    Ok(BatchLoss { total: total.expect("nonempty batch"), parts })
}

fn taps_for(model: &LandmarkModel, objectives: &[Objective]) -> Vec<Tap> {
    let mut taps = Vec::new();
    for o in objectives {
        let more = match o {
            Objective::Full => model.decode_taps(),
            Objective::Score(t) => vec![*t],
        };
        for t in more {
            if !taps.contains(&t) {
                taps.push(t);
            }
        }
    }
    taps
}

/// Trains on `items` for one full schedule with a fresh optimizer,
/// appending one record per epoch to `report`. `round` tags the records and
/// separates the random streams of successive calls.
pub fn train_items(
    model: &mut LandmarkModel,
    items: &[(&Sample, Objective)],
    sched: &TrainSchedule,
    aug: &AugmentConfig,
    val: Option<&Validation<'_>>,
    report: &mut TrainReport,
    round: Option<(usize, &str)>,
) -> Result<()> {
    sched.validate()?;
    aug.validate()?;
    if items.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    if let Some(i) = items.iter().position(|(s, o)| s.labeled && *o != Objective::Full) {
        return Err(TrainError::Config(format!("labeled sample {i} must take the full loss")));
    }
    let mut adam = Adam::new(AdamConfig { lr: sched.lr, ..AdamConfig::default() });
    let round_id = round.map_or(0, |r| r.0 as u64 + 1);
    let base = SeededRng::new(sched.seed).derive(round_id);
    for epoch in 0..sched.epochs {
        let started = Instant::now();
        adam.set_lr(lr_schedule(epoch, sched));
        let mut erng = base.derive(epoch as u64);
        let mut order: Vec<usize> = (0..items.len()).collect();
        erng.shuffle(&mut order);
        let mut sums = [0.0f64; 4];
        for (bi, chunk) in order.chunks(sched.batch_size).enumerate() {
            let mut augmented = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for (pos, &i) in chunk.iter().enumerate() {
                let (s, o) = items[i];
                let mut srng = erng.derive((bi * sched.batch_size + pos) as u64);
                let a = augment(s, aug, &mut srng)?;
                targets.push((o, encode(model, &a.landmarks, o)?));
                augmented.push(a);
            }
            let images: Vec<_> = augmented.iter().map(|s| &s.image).collect();
            let x = model.input_tensor(&images)?;
            let objectives: Vec<Objective> = targets.iter().map(|t| t.0).collect();
            let want = taps_for(model, &objectives);
            let mut tape = Tape::new();
            let fwd = model.net.forward(&mut tape, x, &want, true)?;
            let loss = batch_loss(&mut tape, model, &fwd.taps, &targets)?;
            let value = tape.scalar_value(loss.total)? as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: bi, detail: format!("loss = {value}") });
            }
            tape.backward(loss.total)?;
            model.net.zero_grads();
            model.net.collect_grads(&tape, &fwd)?;
            adam.step(model.net.params_mut()).map_err(|e| TrainError::NonFinite {
                epoch,
                batch: bi,
                detail: e.to_string(),
            })?;
            let n = chunk.len() as f64;
            sums[0] += value * n;
            for (k, p) in loss.parts.iter().enumerate() {
                sums[k + 1] += p * n;
            }
        }
        let n = items.len() as f64;
        let val_nme = match val {
            Some(v) => Some(validation_nme(model, v)?),
            None => None,
        };
        report.records.push(EpochRecord {
            round: round.map(|r| r.0),
            task: round.map(|r| r.1.to_string()),
            epoch,
            loss: sums[0] / n,
            loss_score: sums[1] / n,
            loss_offset: sums[2] / n,
            loss_neighbor: sums[3] / n,
            val_nme,
        });
        report.seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(())
}

fn validation_nme(model: &LandmarkModel, v: &Validation<'_>) -> Result<f64> {
    if v.samples.is_empty() {
        return Err(TrainError::Config("empty validation set".into()));
    }
    let images: Vec<_> = v.samples.iter().map(|s| &s.image).collect();
    let preds = model.predict(&images)?;
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(v.samples) {
        total += nme(p, &s.landmarks, &v.norm.mode_for(s, model.head.input_w, model.head.input_h))?;
    }
    Ok(total / v.samples.len() as f64)
}

/// Fully supervised training on labeled, already cropped samples.
pub fn train_supervised(
    model: &mut LandmarkModel,
    dataset: &[Sample],
    sched: &TrainSchedule,
    aug: &AugmentConfig,
    val: Option<&Validation<'_>>,
) -> Result<TrainReport> {
    if let Some(i) = dataset.iter().position(|s| !s.labeled) {
        return Err(TrainError::Config(format!("sample {i} is unlabeled")));
    }
    let items: Vec<_> = dataset.iter().map(|s| (s, Objective::Full)).collect();
    let mut report = TrainReport::default();
    train_items(model, &items, sched, aug, val, &mut report, None)?;
    Ok(report)
}
