use serde::{Deserialize, Serialize};

use crate::networks::{LayerKind, NetworkGraph, Part};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub part: Part,
    pub macs: u64,
}

/// Multiply-accumulate counts for one input image. One MAC is two FLOPs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub layers: Vec<LayerCost>,
    pub total: u64,
    pub backbone: u64,
    pub head: u64,
    pub aux: u64,
}

impl FlopReport {
    pub fn gflops(&self) -> f64 {
        2.0 * self.total as f64 / 1e9
    }
}

fn layer_macs(kind: &LayerKind, in_shape: &[usize], out_shape: &[usize]) -> u64 {
    let prod = |s: &[usize]| s.iter().map(|&d| d as u64).product::<u64>();
    match *kind {
        LayerKind::Conv { cin, k, .. } => prod(out_shape) * (cin * k * k) as u64,
        // the adjoint convolution maps the output back onto the input
        LayerKind::Deconv { cout, k, .. } => prod(in_shape) * (cout * k * k) as u64,
        LayerKind::Dense { din, dout } => (din * dout) as u64,
        LayerKind::Relu | LayerKind::GlobalAvgPool | LayerKind::Affine { .. } => 0,
    }
}

pub fn count_flops<T: Scalar>(net: &NetworkGraph<T>) -> FlopReport {
    let mut r = FlopReport::default();
    for l in net.layers() {
        let macs = layer_macs(&l.kind, &l.in_shape, &l.out_shape);
        r.total += macs;
        match l.part {
            Part::Backbone => r.backbone += macs,
            Part::Head => r.head += macs,
            Part::Aux => r.aux += macs,
        }
        r.layers.push(LayerCost { name: l.name.clone(), part: l.part, macs });
    }
    r
}
