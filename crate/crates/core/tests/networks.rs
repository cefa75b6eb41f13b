mod common;

use pipnet::networks::{attach_aux_heads, attach_head, build_backbone, BackboneConfig, HeadKind, NetworkGraph, Tap};
use pipnet::tensor::{SeededRng, Tape};
use proptest::prelude::*;

fn net(bb: &BackboneConfig, kind: HeadKind, n: usize, stride: usize, seed: u64) -> NetworkGraph<f64> {
    let mut rng = SeededRng::new(seed);
    let b = build_backbone(bb, &mut rng).unwrap();
    let head = common::head(n, 2, stride, bb.input_h);
    attach_head(b, kind, head, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tap_sizes_follow_the_stride(stages in 1usize..4, extend in 0usize..2, side_mult in 1usize..3, blocks in 0usize..2) {
        let bb = BackboneConfig {
            widths: (0..stages).map(|s| 2 + s).collect(),
            extend_stride: extend,
            blocks_per_stage: blocks,
            ..BackboneConfig::default()
        };
        let down = 1usize << (stages + extend);
        let side = down * side_mult * 2;
        let bb = BackboneConfig { input_h: side, input_w: side, ..bb };
        let s = bb.stride();
        prop_assert_eq!(s, down);
        let g = net(&bb, HeadKind::PipNrm, 3, s, 0);
        let x = common::rand_tensor(&[2, 1, side, side], &mut SeededRng::new(1));
        let out = g.infer(x.cast(), &[]).unwrap();
        for (tap, ch) in [(Tap::Score, 3), (Tap::Offset, 6), (Tap::Neighbor, 12)] {
            prop_assert_eq!(out[&tap].shape(), &[2, ch, side / s, side / s][..]);
            prop_assert_eq!(&g.tap_shape(tap).unwrap()[..], &out[&tap].shape()[1..]);
        }
    }
}

#[test]
fn every_parameter_gets_a_gradient() {
    let bb = BackboneConfig { input_h: 32, input_w: 32, widths: vec![3, 4], ..BackboneConfig::default() };
    for kind in HeadKind::ALL {
        let stride = if kind == HeadKind::Map { 2 } else { 4 };
        let mut g = net(&bb, kind, 3, stride, 5);
        if kind.is_pip() {
            g = attach_aux_heads(g, &mut SeededRng::new(6)).unwrap();
        }
        let x = common::rand_tensor(&[2, 1, 32, 32], &mut SeededRng::new(2));
        let mut tape = Tape::new();
        let fwd = g.forward(&mut tape, x, &[], true).unwrap();
        let mut rng = SeededRng::new(3);
        let mut total = None;
        for (_, &v) in &fwd.taps {
            if tape.shape(v).unwrap().len() < 2 {
                continue;
            }
            let p = common::project(&mut tape, v, &mut rng).unwrap();
            total = Some(match total {
                None => p,
                Some(t) => tape.add(t, p).unwrap(),
            });
        }
        tape.backward(total.unwrap()).unwrap();
        g.zero_grads();
        g.collect_grads(&tape, &fwd).unwrap();
        for (p, name) in g.params().iter().zip(g.param_names()) {
            let grad = p.grad().unwrap_or(&[]);
            assert!(grad.iter().any(|v| *v != 0.0), "{kind}: {name} has no gradient");
        }
    }
}

#[test]
fn aux_heads_leave_pip_outputs_unchanged() {
    let bb = BackboneConfig::default();
    let plain = net(&bb, HeadKind::PipNrm, 16, 8, 9);
    let with_aux = attach_aux_heads(plain.clone(), &mut SeededRng::new(10)).unwrap();
    assert_eq!(with_aux.tap_shape(Tap::AuxScore(1)).unwrap(), &[16, 4, 4]);
    assert_eq!(with_aux.tap_shape(Tap::AuxScore(2)).unwrap(), &[16, 2, 2]);
    let x = common::rand_tensor(&[3, 1, 64, 64], &mut SeededRng::new(11));
    let taps = [Tap::Score, Tap::Offset, Tap::Neighbor];
    let a = plain.infer(x.clone(), &taps).unwrap();
    let b = with_aux.infer(x, &taps).unwrap();
    for t in taps {
        assert_eq!(a[&t], b[&t]);
    }
}

#[test]
fn batched_forward_equals_single_forwards() {
    let bb = BackboneConfig { input_h: 32, input_w: 32, widths: vec![3, 4], ..BackboneConfig::default() };
    for kind in HeadKind::ALL {
        let stride = if kind == HeadKind::Map { 2 } else { 4 };
        let g = net(&bb, kind, 3, stride, 12);
        let x = common::rand_tensor(&[3, 1, 32, 32], &mut SeededRng::new(13));
        let batched = g.infer(x.clone(), &[]).unwrap();
        for i in 0..3 {
            let xi = pipnet::tensor::Tensor::new(&[1, 1, 32, 32], x.data()[i * 1024..(i + 1) * 1024].to_vec()).unwrap();
            let single = g.infer(xi, &[]).unwrap();
            for (tap, v) in &single {
                let n = v.len();
                let got = &batched[tap].data()[i * n..(i + 1) * n];
                for (a, b) in got.iter().zip(v.data()) {
                    assert!((a - b).abs() < 1e-12, "{kind} {tap:?}");
                }
            }
        }
    }
}
