use serde::{Deserialize, Serialize};

use crate::codec::HeadConfig;
use crate::tensor::{Scalar, SeededRng};

use super::{HeadKind, NetworkError, NetworkGraph, Part, Result, Source, Tap};

/// Hidden width of the coordinate-regression head.
pub const COORD_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Channel width of each stride-2 stage.
    pub widths: Vec<usize>,
    /// Stride-1 3x3 convolutions after each stage's downsampling layer.
    pub blocks_per_stage: usize,
    /// Extra stride-2 convolutions appended after the last stage.
    pub extend_stride: usize,
    /// Stride-2 deconvolutions appended after the last stage.
    pub reduce_stride: usize,
    /// Per-channel affine layer after every convolution.
    pub affine: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_h: 64,
            input_w: 64,
            widths: vec![16, 32, 64],
            blocks_per_stage: 1,
            extend_stride: 0,
            reduce_stride: 0,
            affine: false,
        }
    }
}

impl BackboneConfig {
    pub fn stride(&self) -> usize {
        let up = 1usize << (self.widths.len() + self.extend_stride);
        up >> self.reduce_stride.min(self.widths.len() + self.extend_stride)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetworkError::Config(m));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("stage widths {:?} must be nonempty and positive", self.widths));
        }
        if self.extend_stride > 0 && self.reduce_stride > 0 {
            return bad("extend_stride and reduce_stride cannot both be set".into());
        }
        if self.reduce_stride >= self.widths.len() {
            return bad(format!("cannot reduce stride {} times below 1", self.reduce_stride));
        }
        let down = 1usize << (self.widths.len() + self.extend_stride);
        if self.input_h == 0 || self.input_w == 0 || self.input_h % down != 0 || self.input_w % down != 0 {
            return bad(format!(
                "input {}x{} is not divisible by the downsampling factor {down}",
                self.input_h, self.input_w
            ));
        }
        Ok(())
    }

    /// Same backbone producing features at `stride`.
    pub fn for_stride(&self, stride: usize) -> Result<Self> {
        let base = 1usize << self.widths.len();
        let mut cfg = Self { extend_stride: 0, reduce_stride: 0, ..self.clone() };
        if !stride.is_power_of_two() {
            return Err(NetworkError::Config(format!("stride {stride} is not a power of two")));
        }
        if stride >= base {
            cfg.extend_stride = (stride / base).trailing_zeros() as usize;
        } else {
            cfg.reduce_stride = (base / stride).trailing_zeros() as usize;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn block<T: Scalar>(
    net: &mut NetworkGraph<T>,
    name: &str,
    input: Source,
    cout: usize,
    k: usize,
    stride: usize,
    part: Part,
    rng: &mut SeededRng,
) -> Result<Source> {
    let pad = if stride == 2 { 1 } else { k / 2 };
    let mut x = net.conv(name, input, cout, k, stride, pad, part, rng)?;
    if net.backbone.affine {
        x = net.affine(&format!("{name}.affine"), x, part)?;
    }
    Ok(net.relu(&format!("{name}.relu"), x, part))
}

pub fn build_backbone<T: Scalar>(cfg: &BackboneConfig, rng: &mut SeededRng) -> Result<NetworkGraph<T>> {
    cfg.validate()?;
    let mut net = NetworkGraph::empty(cfg.clone());
    let mut x = Source::Image;
    for (s, &w) in cfg.widths.iter().enumerate() {
        x = block(&mut net, &format!("stage{}.down", s + 1), x, w, 4, 2, Part::Backbone, rng)?;
        for b in 0..cfg.blocks_per_stage {
            x = block(&mut net, &format!("stage{}.conv{}", s + 1, b + 1), x, w, 3, 1, Part::Backbone, rng)?;
        }
    }
    let width = *cfg.widths.last().expect("validated nonempty");
    for e in 0..cfg.extend_stride {
        x = block(&mut net, &format!("extend{}", e + 1), x, width, 4, 2, Part::Backbone, rng)?;
    }
    for r in 0..cfg.reduce_stride {
        let name = format!("reduce{}", r + 1);
        let mut y = net.deconv(&name, x, width, 4, 2, 1, Part::Backbone, rng)?;
        if cfg.affine {
            y = net.affine(&format!("{name}.affine"), y, Part::Backbone)?;
        }
        x = net.relu(&format!("{name}.relu"), y, Part::Backbone);
    }
    net.feature_stride = cfg.stride();
    let Source::Layer(feat) = x else { unreachable!("at least one stage exists") };
    net.set_tap(Tap::Feature, feat);
    Ok(net)
}

fn tap_layer(src: Source) -> usize {
    match src {
        Source::Layer(i) => i,
        Source::Image => unreachable!("heads always add layers"),
    }
}

/// Adds the detection head. `head.stride` must equal the feature stride for
/// PIP heads; a MAP head may ask for a finer power-of-two stride, which adds
/// one 4x4 stride-2 deconvolution per halving.
pub fn attach_head<T: Scalar>(
    mut net: NetworkGraph<T>,
    kind: HeadKind,
    head: HeadConfig,
    rng: &mut SeededRng,
) -> Result<NetworkGraph<T>> {
    if net.head.is_some() {
        return Err(NetworkError::Config("network already has a head".into()));
    }
    let bb = &net.backbone;
    if (head.input_h, head.input_w) != (bb.input_h, bb.input_w) {
        return Err(NetworkError::Config(format!(
            "head expects {}x{} input, backbone takes {}x{}",
            head.input_h, head.input_w, bb.input_h, bb.input_w
        )));
    }
    let head = match kind {
        HeadKind::Pip => HeadConfig { num_neighbors: 0, ..head },
        _ => head,
    };
    head.validate().map_err(|e| NetworkError::Config(e.to_string()))?;
    let n = head.num_landmarks;
    let feat = Source::Layer(net.taps[&Tap::Feature]);
    let fs = net.feature_stride;
    match kind {
        HeadKind::Pip | HeadKind::PipNrm => {
            if head.stride != fs {
                return Err(NetworkError::Config(format!(
                    "PIP head stride {} differs from feature stride {fs}",
                    head.stride
                )));
            }
            if kind == HeadKind::PipNrm && head.num_neighbors == 0 {
                return Err(NetworkError::Config("neighbor head needs at least one neighbor".into()));
            }
            let s = net.conv("pip.score", feat, n, 1, 1, 0, Part::Head, rng)?;
            net.set_tap(Tap::Score, tap_layer(s));
            let o = net.conv("pip.offset", feat, 2 * n, 1, 1, 0, Part::Head, rng)?;
            net.set_tap(Tap::Offset, tap_layer(o));
            if kind == HeadKind::PipNrm {
                let c = head.num_neighbors;
                let nb = net.conv("pip.neighbor", feat, 2 * c * n, 1, 1, 0, Part::Head, rng)?;
                net.set_tap(Tap::Neighbor, tap_layer(nb));
            }
        }
        HeadKind::Map => {
            if head.stride > fs || fs % head.stride != 0 || !(fs / head.stride).is_power_of_two() {
                return Err(NetworkError::Config(format!(
                    "heatmap stride {} is not reachable from feature stride {fs} by halving",
                    head.stride
                )));
            }
            let ups = (fs / head.stride).trailing_zeros() as usize;
            let width = *net.backbone.widths.last().expect("validated");
            let mut x = feat;
            for u in 0..ups {
                let name = format!("map.up{}", u + 1);
                x = net.deconv(&name, x, width, 4, 2, 1, Part::Head, rng)?;
                x = net.relu(&format!("{name}.relu"), x, Part::Head);
            }
            let h = net.conv("map.out", x, n, 1, 1, 0, Part::Head, rng)?;
            net.set_tap(Tap::Heatmap, tap_layer(h));
        }
        HeadKind::Coord => {
            let g = net.gap("coord.pool", feat, Part::Head)?;
            let d1 = net.dense("coord.fc1", g, COORD_HIDDEN, Part::Head, rng)?;
            let r1 = net.relu("coord.fc1.relu", d1, Part::Head);
            let d2 = net.dense("coord.fc2", r1, COORD_HIDDEN, Part::Head, rng)?;
            let r2 = net.relu("coord.fc2.relu", d2, Part::Head);
            let out = net.dense("coord.out", r2, 2 * n, Part::Head, rng)?;
            net.set_tap(Tap::Coords, tap_layer(out));
        }
    }
    net.head = Some((kind, head));
    Ok(net)
}

/// Adds two score-only taps at 2x and 4x the PIP stride, each behind one
/// more stride-2 convolution block.
pub fn attach_aux_heads<T: Scalar>(mut net: NetworkGraph<T>, rng: &mut SeededRng) -> Result<NetworkGraph<T>> {
    let Some((kind, head)) = net.head else {
        return Err(NetworkError::Config("auxiliary heads need a PIP head first".into()));
    };
    if !kind.is_pip() {
        return Err(NetworkError::Config(format!("auxiliary heads need a PIP head, found {kind}")));
    }
    if net.has_aux {
        return Err(NetworkError::Config("auxiliary heads already attached".into()));
    }
    let feat = Source::Layer(net.taps[&Tap::Feature]);
    let shape = net.shape_of(feat);
    if shape[1] < 4 || shape[2] < 4 || shape[1] % 4 != 0 || shape[2] % 4 != 0 {
        return Err(NetworkError::Config(format!(
            "feature map {}x{} is too small for two more halvings",
            shape[1], shape[2]
        )));
    }
    let width = shape[0];
    let mut x = feat;
    for k in 1..=2u8 {
        x = block(&mut net, &format!("aux.extend{k}"), x, width, 4, 2, Part::Aux, rng)?;
        let s = net.conv(&format!("aux.score{k}"), x, head.num_landmarks, 1, 1, 0, Part::Aux, rng)?;
        net.set_tap(Tap::AuxScore(k), tap_layer(s));
    }
    net.has_aux = true;
    Ok(net)
}
