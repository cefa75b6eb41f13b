//! Differentiable losses. Each takes the batched prediction and a list of
//! `(batch_index, target)` pairs so that a loss can cover any subset of a
//! batch; the result is the mean of the per-sample losses.

use crate::tensor::{Scalar, Tape, Tensor, Var};

use super::{CodecError, Result, TargetMaps};

/// Batched outputs of a PIP head.
#[derive(Clone, Copy, Debug)]
pub struct PipPreds {
    /// `[B, N, H, W]`
    pub score: Var,
    /// `[B, 2N, H, W]`
    pub offset: Var,
    /// `[B, 2CN, H, W]`, absent without neighbor regression.
    pub neighbor: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct PipLoss {
    pub total: Var,
    pub score: Var,
    pub offset: Var,
    pub neighbor: Option<Var>,
}

fn expect_shape<T: Scalar>(tape: &Tape<T>, v: Var, want: &[usize], name: &str) -> Result<()> {
    let got = tape.shape(v)?;
    if got != want {
        return Err(CodecError::Shape(format!("{name} prediction is {got:?}, expected {want:?}")));
    }
    Ok(())
}

fn batch_of<T: Scalar>(tape: &Tape<T>, v: Var) -> Result<usize> {
    Ok(tape.shape(v)?[0])
}

fn check_samples<U>(samples: &[(usize, U)], batch: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(CodecError::Shape("loss over an empty sample set".into()));
    }
    if let Some((b, _)) = samples.iter().find(|(b, _)| *b >= batch) {
        return Err(CodecError::Shape(format!("sample index {b} outside batch of {batch}")));
    }
    Ok(())
}

/// `mean((pred[idx] - target)^2)` or `mean(|pred[idx] - target|)`.
fn gathered<T: Scalar>(tape: &mut Tape<T>, pred: Var, idx: Vec<usize>, target: Vec<f64>, l1: bool) -> Result<Var> {
    let g = tape.gather(pred, idx)?;
    let n = target.len();
    let t = tape.constant(Tensor::from_f64(&[n], &target)?);
    let d = tape.sub(g, t)?;
    let e = if l1 { tape.abs(d)? } else { tape.square(d)? };
    Ok(tape.mean(e)?)
}

/// Contiguous run of `len` flat indices starting at `start`.
fn span(start: usize, len: usize) -> impl Iterator<Item = usize> {
    start..start + len
}

/// Mean squared error of full score maps.
pub fn score_loss<T: Scalar>(tape: &mut Tape<T>, score: Var, samples: &[(usize, &TargetMaps)]) -> Result<Var> {
    let batch = batch_of(tape, score)?;
    check_samples(samples, batch)?;
    let t0 = samples[0].1;
    let (n, hw) = (t0.num_landmarks, t0.pixels());
    expect_shape(tape, score, &[batch, n, t0.map_h, t0.map_w], "score")?;
    let per = n * hw;
    let mut idx = Vec::with_capacity(samples.len() * per);
    let mut tgt = Vec::with_capacity(samples.len() * per);
    for &(b, t) in samples {
        if t.score.len() != per {
            return Err(CodecError::Shape("targets in one loss must share a layout".into()));
        }
        idx.extend(span(b * per, per));
        tgt.extend_from_slice(&t.score);
    }
    gathered(tape, score, idx, tgt, false)
}

pub fn pip_loss<T: Scalar>(
    tape: &mut Tape<T>,
    preds: &PipPreds,
    samples: &[(usize, &TargetMaps)],
    alpha: f64,
    beta: f64,
) -> Result<PipLoss> {
    let batch = batch_of(tape, preds.score)?;
    check_samples(samples, batch)?;
    let t0 = samples[0].1;
    let (n, c, h, w) = (t0.num_landmarks, t0.num_neighbors, t0.map_h, t0.map_w);
    let hw = h * w;
    expect_shape(tape, preds.offset, &[batch, 2 * n, h, w], "offset")?;
    let score = score_loss(tape, preds.score, samples)?;

    let mut idx = Vec::with_capacity(samples.len() * 2 * n);
    let mut tgt = Vec::with_capacity(samples.len() * 2 * n);
    for &(b, t) in samples {
        if (t.num_landmarks, t.num_neighbors, t.map_h, t.map_w) != (n, c, h, w) {
            return Err(CodecError::Shape("targets in one loss must share a layout".into()));
        }
        let base = b * 2 * n * hw;
        for (i, &(r, col)) in t.positive.iter().enumerate() {
            idx.push(base + i * hw + r * w + col);
            tgt.push(t.offset_values[i].0);
        }
        for (i, &(r, col)) in t.positive.iter().enumerate() {
            idx.push(base + (n + i) * hw + r * w + col);
            tgt.push(t.offset_values[i].1);
        }
    }
    let offset = gathered(tape, preds.offset, idx, tgt, true)?;
    let a = tape.scale(offset, T::of(alpha))?;
    let mut total = tape.add(score, a)?;

    let neighbor = match (preds.neighbor, c) {
        (_, 0) => None,
        (None, _) => return Err(CodecError::Shape("targets carry neighbors but the head has none".into())),
        (Some(nb), c) => {
            expect_shape(tape, nb, &[batch, 2 * c * n, h, w], "neighbor")?;
            let mut idx = Vec::with_capacity(samples.len() * 2 * c * n);
            let mut tgt = Vec::with_capacity(samples.len() * 2 * c * n);
            for &(b, t) in samples {
                let base = b * 2 * c * n * hw;
                for axis in 0..2 {
                    for (i, &(r, col)) in t.positive.iter().enumerate() {
                        for m in 0..c {
                            idx.push(base + (axis * n * c + i * c + m) * hw + r * w + col);
                            let v = t.neighbor_values[i * c + m];
                            tgt.push(if axis == 0 { v.0 } else { v.1 });
                        }
                    }
                }
            }
            let l = gathered(tape, nb, idx, tgt, true)?;
            let bl = tape.scale(l, T::of(beta))?;
            total = tape.add(total, bl)?;
            Some(l)
        }
    };
    Ok(PipLoss { total, score, offset, neighbor })
}

fn dense_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, samples: &[(usize, &[f64])], l1: bool, name: &str) -> Result<Var> {
    let batch = batch_of(tape, pred)?;
    check_samples(samples, batch)?;
    let per = tape.value(pred)?.len() / batch;
    let mut idx = Vec::with_capacity(samples.len() * per);
    let mut tgt = Vec::with_capacity(samples.len() * per);
    for &(b, t) in samples {
        if t.len() != per {
            return Err(CodecError::Shape(format!("{name} target has {} values, prediction {per}", t.len())));
        }
        idx.extend(span(b * per, per));
        tgt.extend_from_slice(t);
    }
    gathered(tape, pred, idx, tgt, l1)
}

/// Mean squared error of heatmaps.
pub fn map_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, samples: &[(usize, &[f64])]) -> Result<Var> {
    dense_loss(tape, pred, samples, false, "heatmap")
}

/// Mean absolute error of coordinates normalized by image size.
pub fn coord_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, samples: &[(usize, &[f64])]) -> Result<Var> {
    dense_loss(tape, pred, samples, true, "coordinate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_targets, HeadConfig, LandmarkSet, NeighborTable};

    fn cfg(n: usize, c: usize) -> HeadConfig {
        HeadConfig { num_landmarks: n, num_neighbors: c, stride: 8, input_h: 64, input_w: 64, alpha: 0.1, beta: 0.1 }
    }

    fn record(tape: &mut Tape<f64>, t: &TargetMaps) -> PipPreds {
        let (n, c, h, w) = (t.num_landmarks, t.num_neighbors, t.map_h, t.map_w);
        let score = tape.param(Tensor::new(&[1, n, h, w], t.score.clone()).unwrap());
        let offset = tape.param(Tensor::new(&[1, 2 * n, h, w], t.offset.clone()).unwrap());
        let neighbor = (c > 0).then(|| tape.param(Tensor::new(&[1, 2 * c * n, h, w], t.neighbor.clone()).unwrap()));
        PipPreds { score, offset, neighbor }
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let lm = LandmarkSet::from_xy(&[(3.3, 9.1), (40.2, 50.5), (20.0, 60.9)]).unwrap();
        let table = NeighborTable::from_rows(vec![vec![1], vec![2], vec![0]], 3).unwrap();
        let t = encode_targets(&lm, &cfg(3, 1), Some(&table)).unwrap();
        let mut tape = Tape::new();
        let p = record(&mut tape, &t);
        let l = pip_loss(&mut tape, &p, &[(0, &t)], 0.1, 0.1).unwrap();
        for v in [l.total, l.score, l.offset, l.neighbor.unwrap()] {
            assert_eq!(tape.scalar_value(v).unwrap(), 0.0);
        }
    }

    #[test]
    fn hand_computed_values() {
        // N is 2 here (a set needs two points); the second landmark's
        // prediction is exact so the per-landmark means scale by 1/2.
        let lm = LandmarkSet::from_xy(&[(8.0 * 2.3, 8.0 * 5.8), (1.0, 1.0)]).unwrap();
        let t = encode_targets(&lm, &cfg(2, 0), None).unwrap();
        let mut tape = Tape::<f64>::new();
        let score = tape.param(Tensor::zeros(&[1, 2, 8, 8]));
        let mut off = t.offset.clone();
        off[5 * 8 + 2] = 0.1;
        off[64 * 2 + 5 * 8 + 2] = 0.6;
        let offset = tape.param(Tensor::new(&[1, 4, 8, 8], off).unwrap());
        let l = pip_loss(&mut tape, &PipPreds { score, offset, neighbor: None }, &[(0, &t)], 0.1, 0.1).unwrap();
        assert!((tape.scalar_value(l.score).unwrap() - 1.0 / 64.0).abs() < 1e-15);
        assert!((tape.scalar_value(l.offset).unwrap() - 0.4 / 4.0).abs() < 1e-12);
        let total = tape.scalar_value(l.total).unwrap();
        assert!((total - (1.0 / 64.0 + 0.1 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn dense_losses() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap());
        let l = map_loss(&mut tape, p, &[(0, &[1.0, 1.0][..])]).unwrap();
        assert_eq!(tape.scalar_value(l).unwrap(), 0.5);
        let p = tape.param(Tensor::new(&[1, 2], vec![0.5, 0.5]).unwrap());
        let l = coord_loss(&mut tape, p, &[(0, &[0.3, 0.9][..])]).unwrap();
        assert!((tape.scalar_value(l).unwrap() - 0.3).abs() < 1e-15);
        assert!(coord_loss(&mut tape, p, &[(1, &[0.3, 0.9][..])]).is_err());
        assert!(coord_loss(&mut tape, p, &[(0, &[0.3][..])]).is_err());
    }

    #[test]
    fn subset_selects_samples() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::new(&[2, 2], vec![0.0, 0.0, 5.0, 5.0]).unwrap());
        let l = map_loss(&mut tape, p, &[(0, &[0.0, 0.0][..])]).unwrap();
        assert_eq!(tape.scalar_value(l).unwrap(), 0.0);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[0.0; 4]);
    }
}
