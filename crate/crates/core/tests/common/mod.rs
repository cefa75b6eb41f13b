#![allow(dead_code)]

use pipnet::codec::{
    decode_pip, encode_targets, pip_loss, score_loss, HeadConfig, LandmarkSet, NeighborTable, PipPreds, TargetMaps,
};
use pipnet::networks::{attach_head, Forward, build_backbone, BackboneConfig, HeadKind, NetworkGraph, Tap};
use pipnet::tensor::{grad_check, grad_check_many, Result, SeededRng, Tape, Tensor, Var};

pub const EPS: f64 = 1e-6;

/// Values bounded away from zero so that kinks of relu/abs are never probed.
pub fn rand_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.range(0.1, 1.0);
            if rng.chance(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// A weighted sum keeps the upstream gradient non-uniform.
pub fn project(t: &mut Tape<f64>, y: Var, rng: &mut SeededRng) -> Result<Var> {
    let shape = t.shape(y)?.to_vec();
    let w = t.constant(rand_tensor(&shape, rng));
    let p = t.mul(y, w)?;
    t.sum(p)
}

pub type OpCase = (&'static str, fn(&mut SeededRng) -> f64);

fn conv_case(rng: &mut SeededRng) -> f64 {
    let b = 1 + rng.below(2);
    let cin = 1 + rng.below(3);
    let cout = 1 + rng.below(3);
    let (k, stride, pad) = [(3, 1, 1), (1, 1, 0), (4, 2, 1), (3, 1, 0)][rng.below(4)];
    let h = if stride == 2 { 2 * (2 + rng.below(2)) } else { 3 + rng.below(3) };
    let x = rand_tensor(&[b, cin, h, h], rng);
    let w = rand_tensor(&[cout, cin, k, k], rng);
    let bias = rand_tensor(&[cout], rng);
    let r = rng.derive(9);
    grad_check_many(
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            project(t, y, &mut r.clone())
        },
        &[x, w, bias],
        EPS,
    )
    .unwrap()
}

fn deconv_case(rng: &mut SeededRng) -> f64 {
    let b = 1 + rng.below(2);
    let din = 1 + rng.below(3);
    let dout = 1 + rng.below(3);
    let h = 1 + rng.below(3);
    let x = rand_tensor(&[b, din, h, h], rng);
    let w = rand_tensor(&[din, dout, 4, 4], rng);
    let bias = rand_tensor(&[dout], rng);
    let r = rng.derive(9);
    grad_check_many(
        |t, v| {
            let y = t.deconv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            project(t, y, &mut r.clone())
        },
        &[x, w, bias],
        EPS,
    )
    .unwrap()
}

fn dense_case(rng: &mut SeededRng) -> f64 {
    let (b, din, dout) = (1 + rng.below(3), 1 + rng.below(5), 1 + rng.below(4));
    let x = rand_tensor(&[b, din], rng);
    let w = rand_tensor(&[dout, din], rng);
    let bias = rand_tensor(&[dout], rng);
    let r = rng.derive(9);
    grad_check_many(
        |t, v| {
            let y = t.dense(v[0], v[1], Some(v[2]))?;
            project(t, y, &mut r.clone())
        },
        &[x, w, bias],
        EPS,
    )
    .unwrap()
}

fn rand_shape(rng: &mut SeededRng) -> Vec<usize> {
    (0..1 + rng.below(4)).map(|_| 1 + rng.below(3)).collect()
}

fn unary(rng: &mut SeededRng, f: fn(&mut Tape<f64>, Var) -> Result<Var>) -> f64 {
    let x = rand_tensor(&rand_shape(rng), rng);
    let r = rng.derive(9);
    grad_check(
        |t, v| {
            let y = f(t, v)?;
            project(t, y, &mut r.clone())
        },
        &x,
        EPS,
    )
    .unwrap()
}

fn binary(rng: &mut SeededRng, f: fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> f64 {
    let shape = rand_shape(rng);
    let a = rand_tensor(&shape, rng);
    let b = rand_tensor(&shape, rng);
    let r = rng.derive(9);
    grad_check_many(
        |t, v| {
            let y = f(t, v[0], v[1])?;
            project(t, y, &mut r.clone())
        },
        &[a, b],
        EPS,
    )
    .unwrap()
}

fn reduce(rng: &mut SeededRng, f: fn(&mut Tape<f64>, Var) -> Result<Var>) -> f64 {
    let x = rand_tensor(&rand_shape(rng), rng);
    grad_check(|t, v| f(t, v), &x, EPS).unwrap()
}

fn gather_case(rng: &mut SeededRng) -> f64 {
    let shape = rand_shape(rng);
    let n: usize = shape.iter().product();
    let idx: Vec<usize> = (0..1 + rng.below(6)).map(|_| rng.below(n)).collect();
    let x = rand_tensor(&shape, rng);
    let r = rng.derive(9);
    grad_check(
        |t, v| {
            let y = t.gather(v, idx.clone())?;
            project(t, y, &mut r.clone())
        },
        &x,
        EPS,
    )
    .unwrap()
}

fn reshape_case(rng: &mut SeededRng) -> f64 {
    let shape = rand_shape(rng);
    let n: usize = shape.iter().product();
    let x = rand_tensor(&shape, rng);
    let r = rng.derive(9);
    grad_check(
        |t, v| {
            let y = t.reshape(v, &[n])?;
            project(t, y, &mut r.clone())
        },
        &x,
        EPS,
    )
    .unwrap()
}

fn pool_case(rng: &mut SeededRng) -> f64 {
    let shape = [1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)];
    let x = rand_tensor(&shape, rng);
    let r = rng.derive(9);
    grad_check(
        |t, v| {
            let y = t.global_avg_pool(v)?;
            project(t, y, &mut r.clone())
        },
        &x,
        EPS,
    )
    .unwrap()
}

fn affine_case(rng: &mut SeededRng) -> f64 {
    let c = 1 + rng.below(3);
    let x = rand_tensor(&[1 + rng.below(2), c, 2, 1 + rng.below(3)], rng);
    let s = rand_tensor(&[c], rng);
    let b = rand_tensor(&[c], rng);
    let r = rng.derive(9);
    grad_check_many(
        |t, v| {
            let y = t.channel_affine(v[0], v[1], v[2])?;
            project(t, y, &mut r.clone())
        },
        &[x, s, b],
        EPS,
    )
    .unwrap()
}

pub const OPS: &[OpCase] = &[
    ("conv2d", conv_case),
    ("deconv2d", deconv_case),
    ("dense", dense_case),
    ("relu", |r| unary(r, |t, x| t.relu(x))),
    ("square", |r| unary(r, |t, x| t.square(x))),
    ("abs", |r| unary(r, |t, x| t.abs(x))),
    ("scale", |r| unary(r, |t, x| t.scale(x, -1.7))),
    ("reshape", reshape_case),
    ("add", |r| binary(r, |t, a, b| t.add(a, b))),
    ("sub", |r| binary(r, |t, a, b| t.sub(a, b))),
    ("mul", |r| binary(r, |t, a, b| t.mul(a, b))),
    ("sum", |r| reduce(r, |t, x| t.sum(x))),
    ("mean", |r| reduce(r, |t, x| t.mean(x))),
    ("gather", gather_case),
    ("global_avg_pool", pool_case),
    ("channel_affine", affine_case),
];

/// Worst relative gradient error of each op over `cases` random shapes.
pub fn op_suite(cases: u64) -> Vec<(&'static str, f64)> {
    OPS.iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let worst = (0..cases)
                .map(|c| f(&mut SeededRng::new(1000 * i as u64 + c)))
                .fold(0.0, f64::max);
            (*name, worst)
        })
        .collect()
}

/// A 2-landmark PIP+NRM model on 16x16 inputs in `f64`.
pub fn toy_model() -> (NetworkGraph<f64>, HeadConfig, NeighborTable, Tensor<f64>, LandmarkSet) {
    let bb = BackboneConfig { input_h: 16, input_w: 16, widths: vec![2, 3], ..BackboneConfig::default() };
    let head = HeadConfig {
        num_landmarks: 2,
        num_neighbors: 1,
        stride: 4,
        input_h: 16,
        input_w: 16,
        alpha: 0.1,
        beta: 0.1,
    };
    let mut rng = SeededRng::new(3);
    let net = build_backbone::<f64>(&bb, &mut rng).unwrap();
    let net = attach_head(net, HeadKind::PipNrm, head, &mut rng).unwrap();
    let table = NeighborTable::from_rows(vec![vec![1], vec![0]], 2).unwrap();
    let img = rand_tensor(&[1, 1, 16, 16], &mut rng);
    let lm = LandmarkSet::from_xy(&[(5.3, 6.1), (10.7, 9.4)]).unwrap();
    (net, head, table, img, lm)
}

fn toy_loss(net: &NetworkGraph<f64>, head: &HeadConfig, table: &NeighborTable, img: &Tensor<f64>, lm: &LandmarkSet) -> (Tape<f64>, Forward, Var) {
    let targets = encode_targets(lm, head, Some(table)).unwrap();
    let mut tape = Tape::new();
    let fwd = net.forward(&mut tape, img.clone(), &[Tap::Score, Tap::Offset, Tap::Neighbor], true).unwrap();
    let preds = PipPreds {
        score: fwd.tap(Tap::Score).unwrap(),
        offset: fwd.tap(Tap::Offset).unwrap(),
        neighbor: Some(fwd.tap(Tap::Neighbor).unwrap()),
    };
    let l = pip_loss(&mut tape, &preds, &[(0, &targets)], head.alpha, head.beta).unwrap();
    (tape, fwd, l.total)
}

/// Relative error of every parameter gradient of the full PIP+NRM loss
/// against central differences on the parameters.
pub fn toy_model_check() -> f64 {
    let (mut net, head, table, img, lm) = toy_model();
    let (mut tape, fwd, loss) = toy_loss(&net, &head, &table, &img, &lm);
    tape.backward(loss).unwrap();
    net.zero_grads();
    net.collect_grads(&tape, &fwd).unwrap();
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad().unwrap_or(&[]).to_vec()).collect();
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        let base = net.params()[pi].data().to_vec();
        for j in 0..base.len() {
            let mut eval = |delta: f64| {
                let mut d = base.clone();
                d[j] += delta;
                net.set_param(pi, d).unwrap();
                let (t, _, l) = toy_loss(&net, &head, &table, &img, &lm);
                t.scalar_value(l).unwrap()
            };
            let numeric = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
            net.set_param(pi, base.clone()).unwrap();
            let a = grads.get(j).copied().unwrap_or(0.0);
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
        }
    }
    worst
}

pub fn head(n: usize, c: usize, stride: usize, size: usize) -> HeadConfig {
    HeadConfig { num_landmarks: n, num_neighbors: c, stride, input_h: size, input_w: size, alpha: 0.1, beta: 0.1 }
}

/// Random in-bounds landmarks on a `size`-pixel square, at least 2 points.
pub fn random_landmarks(rng: &mut SeededRng, size: usize) -> LandmarkSet {
    let n = 2 + rng.below(15);
    let hi = size as f64 - 1e-3;
    let xy: Vec<(f64, f64)> = (0..n).map(|_| (rng.range(0.0, hi), rng.range(0.0, hi))).collect();
    LandmarkSet::from_xy(&xy).unwrap()
}

/// Worst pixel error of `decode_pip(encode_targets(lm))` over `sets`
/// random landmark sets at each stride.
pub fn codec_roundtrip(sets: u64, strides: &[usize]) -> f64 {
    let mut worst = 0.0f64;
    for &s in strides {
        for seed in 0..sets {
            let mut rng = SeededRng::new(seed).derive(s as u64);
            let lm = random_landmarks(&mut rng, 256);
            let cfg = head(lm.len(), 0, s, 256);
            let t = encode_targets(&lm, &cfg, None).unwrap();
            let back = decode_pip(&t.score, &t.offset, &cfg).unwrap();
            for (p, q) in back.points().iter().zip(lm.points()) {
                worst = worst.max(p.dist(q));
            }
        }
    }
    worst
}

/// Offsets and neighbor values of the 256-pixel, stride-32 worked example.
pub fn worked_example() -> ((f64, f64), (f64, f64), (usize, usize)) {
    let lm = LandmarkSet::from_xy(&[(73.6, 121.6), (121.6, 118.4)]).unwrap();
    let table = NeighborTable::from_rows(vec![vec![1], vec![0]], 2).unwrap();
    let t = encode_targets(&lm, &head(2, 1, 32, 256), Some(&table)).unwrap();
    (t.offset_values[0], t.neighbor_values[0], t.positive[0])
}

fn f64_var(tape: &mut Tape<f64>, shape: &[usize], data: Vec<f64>) -> Var {
    tape.param(Tensor::new(shape, data).unwrap())
}

/// Hand-built maps of one landmark in cell (3, 2) of an 8x8 grid with
/// offsets (0.3, 0.8).
fn one_landmark_target() -> TargetMaps {
    let mut score = vec![0.0; 64];
    score[3 * 8 + 2] = 1.0;
    TargetMaps {
        num_landmarks: 1,
        num_neighbors: 0,
        map_h: 8,
        map_w: 8,
        score,
        offset: Vec::new(),
        neighbor: Vec::new(),
        positive: vec![(3, 2)],
        offset_values: vec![(0.3, 0.8)],
        neighbor_values: Vec::new(),
    }
}

/// `L_S` for an all-zero score prediction against a one-hot 8x8 target.
pub fn score_oracle() -> f64 {
    let t = one_landmark_target();
    let mut tape = Tape::new();
    let s = f64_var(&mut tape, &[1, 1, 8, 8], vec![0.0; 64]);
    let l = score_loss(&mut tape, s, &[(0, &t)]).unwrap();
    tape.scalar_value(l).unwrap()
}

/// `L_O` for ground-truth offsets (0.3, 0.8) predicted as (0.1, 0.6).
pub fn offset_oracle() -> f64 {
    let t = one_landmark_target();
    let mut off = vec![0.0; 128];
    off[3 * 8 + 2] = 0.1;
    off[64 + 3 * 8 + 2] = 0.6;
    let mut tape = Tape::new();
    let s = f64_var(&mut tape, &[1, 1, 8, 8], t.score.clone());
    let o = f64_var(&mut tape, &[1, 2, 8, 8], off);
    let preds = PipPreds { score: s, offset: o, neighbor: None };
    let l = pip_loss(&mut tape, &preds, &[(0, &t)], 0.1, 0.1).unwrap();
    tape.scalar_value(l.offset).unwrap()
}

/// `|L - (L_S + alpha L_O + beta L_N)|` over random predictions.
pub fn decomposition_error(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut rng = SeededRng::new(seed).derive(77);
        let (n, c) = (3 + rng.below(4), 1 + rng.below(2));
        let cfg = HeadConfig { alpha: rng.range(0.01, 1.0), beta: rng.range(0.01, 1.0), ..head(n, c, 8, 64) };
        let xy: Vec<(f64, f64)> = (0..n).map(|_| (rng.range(0.0, 63.9), rng.range(0.0, 63.9))).collect();
        let lm = LandmarkSet::from_xy(&xy).unwrap();
        let rows: Vec<Vec<usize>> = (0..n).map(|i| (1..=c).map(|m| (i + m) % n).collect()).collect();
        let table = NeighborTable::from_rows(rows, n).unwrap();
        let t = encode_targets(&lm, &cfg, Some(&table)).unwrap();
        let mut tape = Tape::new();
        let s = tape.param(rand_tensor(&[1, n, 8, 8], &mut rng));
        let o = tape.param(rand_tensor(&[1, 2 * n, 8, 8], &mut rng));
        let nb = tape.param(rand_tensor(&[1, 2 * c * n, 8, 8], &mut rng));
        let l = pip_loss(&mut tape, &PipPreds { score: s, offset: o, neighbor: Some(nb) }, &[(0, &t)], cfg.alpha, cfg.beta)
            .unwrap();
        let v = |tape: &Tape<f64>, x: Var| tape.scalar_value(x).unwrap();
        let sum = v(&tape, l.score) + cfg.alpha * v(&tape, l.offset) + cfg.beta * v(&tape, l.neighbor.unwrap());
        worst = worst.max((v(&tape, l.total) - sum).abs());
    }
    worst
}

/// Run configuration of a narrow model on `train` source samples and
/// `epochs` epochs, with small test and unlabeled splits.
pub fn small_config(train: usize, epochs: usize, widths: &[usize]) -> pipnet::tooling::RunConfig {
    let mut cfg = pipnet::tooling::RunConfig::default();
    cfg.data.train = train;
    cfg.data.test = 40;
    cfg.data.unlabeled = 40;
    cfg.model.backbone.widths = widths.to_vec();
    cfg.schedule = cfg.schedule.scaled(epochs);
    cfg
}
