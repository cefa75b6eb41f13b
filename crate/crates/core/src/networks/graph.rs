use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::HeadConfig;
use crate::tensor::{he_normal, Scalar, SeededRng, Tape, Tensor, Var};

use super::{BackboneConfig, HeadKind, NetworkError, Result, Tap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Image,
    Layer(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv { cin: usize, cout: usize, k: usize, stride: usize, pad: usize },
    /// Weight `[cin, cout, k, k]`.
    Deconv { cin: usize, cout: usize, k: usize, stride: usize, pad: usize },
    Dense { din: usize, dout: usize },
    Relu,
    GlobalAvgPool,
    /// Per-channel scale and shift.
    Affine { channels: usize },
}

/// Which component a layer belongs to, for cost accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Part {
    Backbone,
    Head,
    Aux,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub input: Source,
    pub part: Part,
    /// Indices into the parameter list (weight first, then bias).
    pub params: Vec<usize>,
    /// Input and output shapes without the batch dimension.
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

/// Recorded result of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub taps: BTreeMap<Tap, Var>,
    /// Tape handle of each parameter, `None` if its layer was not needed.
    pub params: Vec<Option<Var>>,
}

impl Forward {
    pub fn tap(&self, tap: Tap) -> Result<Var> {
        self.taps.get(&tap).copied().ok_or(NetworkError::MissingTap(tap))
    }
}

/// Layers in execution order with their parameters and named outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph<T: Scalar = f32> {
    pub(crate) backbone: BackboneConfig,
    pub(crate) layers: Vec<Layer>,
    pub(crate) params: Vec<Tensor<T>>,
    pub(crate) param_names: Vec<String>,
    pub(crate) taps: BTreeMap<Tap, usize>,
    pub(crate) feature_stride: usize,
    pub(crate) head: Option<(HeadKind, HeadConfig)>,
    pub(crate) has_aux: bool,
}

impl<T: Scalar> NetworkGraph<T> {
    pub(crate) fn empty(backbone: BackboneConfig) -> Self {
        Self {
            backbone,
            layers: Vec::new(),
            params: Vec::new(),
            param_names: Vec::new(),
            taps: BTreeMap::new(),
            feature_stride: 1,
            head: None,
            has_aux: false,
        }
    }

    pub fn backbone_config(&self) -> &BackboneConfig {
        &self.backbone
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.backbone.input_h, self.backbone.input_w]
    }

    pub fn feature_stride(&self) -> usize {
        self.feature_stride
    }

    pub fn head(&self) -> Option<(HeadKind, HeadConfig)> {
        self.head
    }

    pub fn has_aux(&self) -> bool {
        self.has_aux
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Shape of a tap for one sample.
    pub fn tap_shape(&self, tap: Tap) -> Result<&[usize]> {
        let &l = self.taps.get(&tap).ok_or(NetworkError::MissingTap(tap))?;
        Ok(&self.layers[l].out_shape)
    }

    pub fn tap_names(&self) -> Vec<Tap> {
        self.taps.keys().copied().collect()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Scalar>(&self) -> NetworkGraph<U> {
        NetworkGraph {
            backbone: self.backbone.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            param_names: self.param_names.clone(),
            taps: self.taps.clone(),
            feature_stride: self.feature_stride,
            head: self.head,
            has_aux: self.has_aux,
        }
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set_param(&mut self, index: usize, data: Vec<T>) -> Result<()> {
        let shape = self
            .params
            .get(index)
            .ok_or_else(|| NetworkError::Config(format!("no parameter {index}")))?
            .shape()
            .to_vec();
        let rg = self.params[index].requires_grad();
        self.params[index] = Tensor::new(&shape, data)?.with_requires_grad(rg);
        Ok(())
    }

    pub(crate) fn set_tap(&mut self, tap: Tap, layer: usize) {
        self.taps.insert(tap, layer);
    }

    pub(crate) fn last(&self) -> Source {
        match self.layers.len() {
            0 => Source::Image,
            n => Source::Layer(n - 1),
        }
    }

    pub(crate) fn shape_of(&self, src: Source) -> Vec<usize> {
        match src {
            Source::Image => self.input_shape().to_vec(),
            Source::Layer(i) => self.layers[i].out_shape.clone(),
        }
    }

    fn add_param(&mut self, name: String, t: Tensor<T>) -> usize {
        self.params.push(t.with_requires_grad(true));
        self.param_names.push(name);
        self.params.len() - 1
    }

    fn push(&mut self, name: &str, kind: LayerKind, input: Source, part: Part, params: Vec<usize>, out: Vec<usize>) -> Source {
        let in_shape = self.shape_of(input);
        self.layers.push(Layer { name: name.to_string(), kind, input, part, params, in_shape, out_shape: out });
        self.last()
    }

    fn spatial(&self, src: Source, op: &str) -> Result<(usize, usize, usize)> {
        match self.shape_of(src).as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            s => Err(NetworkError::Config(format!("{op} needs a feature map, got shape {s:?}"))),
        }
    }

    pub(crate) fn conv(
        &mut self,
        name: &str,
        input: Source,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        part: Part,
        rng: &mut SeededRng,
    ) -> Result<Source> {
        let (cin, h, w) = self.spatial(input, name)?;
        let span = |x: usize| -> Result<usize> {
            let padded = x + 2 * pad;
            if padded < k || (padded - k) % stride != 0 {
                return Err(NetworkError::Config(format!(
                    "{name}: kernel {k} stride {stride} pad {pad} does not tile extent {x}"
                )));
            }
            Ok((padded - k) / stride + 1)
        };
        let (ho, wo) = (span(h)?, span(w)?);
        let wt = he_normal(&[cout, cin, k, k], cin * k * k, rng);
        let wi = self.add_param(format!("{name}.weight"), wt);
        let bi = self.add_param(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Ok(self.push(name, LayerKind::Conv { cin, cout, k, stride, pad }, input, part, vec![wi, bi], vec![cout, ho, wo]))
    }

    pub(crate) fn deconv(
        &mut self,
        name: &str,
        input: Source,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        part: Part,
        rng: &mut SeededRng,
    ) -> Result<Source> {
        let (cin, h, w) = self.spatial(input, name)?;
        let span = |x: usize| -> Result<usize> {
            ((x - 1) * stride + k)
                .checked_sub(2 * pad)
                .filter(|&v| v > 0)
                .ok_or_else(|| NetworkError::Config(format!("{name}: deconv output would be empty")))
        };
        let (ho, wo) = (span(h)?, span(w)?);
        let fan_in = (cin * k * k / (stride * stride)).max(1);
        let wt = he_normal(&[cin, cout, k, k], fan_in, rng);
        let wi = self.add_param(format!("{name}.weight"), wt);
        let bi = self.add_param(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Ok(self.push(name, LayerKind::Deconv { cin, cout, k, stride, pad }, input, part, vec![wi, bi], vec![cout, ho, wo]))
    }

    pub(crate) fn dense(&mut self, name: &str, input: Source, dout: usize, part: Part, rng: &mut SeededRng) -> Result<Source> {
        let din = match self.shape_of(input).as_slice() {
            &[d] => d,
            s => return Err(NetworkError::Config(format!("{name} needs a flat input, got {s:?}"))),
        };
        let wi = self.add_param(format!("{name}.weight"), he_normal(&[dout, din], din, rng));
        let bi = self.add_param(format!("{name}.bias"), Tensor::zeros(&[dout]));
        Ok(self.push(name, LayerKind::Dense { din, dout }, input, part, vec![wi, bi], vec![dout]))
    }

    pub(crate) fn relu(&mut self, name: &str, input: Source, part: Part) -> Source {
        let shape = self.shape_of(input);
        self.push(name, LayerKind::Relu, input, part, vec![], shape)
    }

    pub(crate) fn gap(&mut self, name: &str, input: Source, part: Part) -> Result<Source> {
        let (c, _, _) = self.spatial(input, name)?;
        Ok(self.push(name, LayerKind::GlobalAvgPool, input, part, vec![], vec![c]))
    }

    pub(crate) fn affine(&mut self, name: &str, input: Source, part: Part) -> Result<Source> {
        let (c, h, w) = self.spatial(input, name)?;
        let si = self.add_param(format!("{name}.scale"), Tensor::filled(&[c], T::one()));
        let bi = self.add_param(format!("{name}.shift"), Tensor::zeros(&[c]));
        Ok(self.push(name, LayerKind::Affine { channels: c }, input, part, vec![si, bi], vec![c, h, w]))
    }

    /// Layers that some tap in `want` depends on (all taps when empty).
    fn needed(&self, want: &[Tap]) -> Result<Vec<bool>> {
        let mut need = vec![false; self.layers.len()];
        let roots: Vec<usize> = if want.is_empty() {
            self.taps.values().copied().collect()
        } else {
            want.iter().map(|t| self.taps.get(t).copied().ok_or(NetworkError::MissingTap(*t))).collect::<Result<_>>()?
        };
        let mut stack = roots;
        while let Some(i) = stack.pop() {
            if need[i] {
                continue;
            }
            need[i] = true;
            if let Source::Layer(j) = self.layers[i].input {
                stack.push(j);
            }
        }
        Ok(need)
    }

    /// Records the network on `tape`. `input` is `[B, 1, H, W]`. Only the
    /// layers needed for `want` run; an empty `want` runs every tap.
    pub fn forward(&self, tape: &mut Tape<T>, input: Tensor<T>, want: &[Tap], trainable: bool) -> Result<Forward> {
        let s = input.shape();
        let want_shape = self.input_shape();
        if s.len() != 4 || s[1..] != want_shape {
            let mut w = vec![s.first().copied().unwrap_or(1)];
            w.extend(want_shape);
            return Err(NetworkError::Input { got: s.to_vec(), want: w });
        }
        let batch = s[0];
        let need = self.needed(want)?;
        let x0 = tape.constant(input);
        let mut params: Vec<Option<Var>> = vec![None; self.params.len()];
        let mut outs: Vec<Option<Var>> = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate() {
            if !need[i] {
                continue;
            }
            let x = match layer.input {
                Source::Image => x0,
                Source::Layer(j) => outs[j].expect("inputs precede their consumers"),
            };
            let mut p = |k: usize, tape: &mut Tape<T>| -> Var {
                let idx = layer.params[k];
                let t = self.params[idx].clone();
                let v = if trainable { tape.param(t) } else { tape.constant(t) };
                params[idx] = Some(v);
                v
            };
            let y = match layer.kind {
                LayerKind::Conv { stride, pad, .. } => {
                    let (w, b) = (p(0, tape), p(1, tape));
                    tape.conv2d(x, w, Some(b), stride, pad)?
                }
                LayerKind::Deconv { stride, pad, .. } => {
                    let (w, b) = (p(0, tape), p(1, tape));
                    tape.deconv2d(x, w, Some(b), stride, pad)?
                }
                LayerKind::Dense { .. } => {
                    let (w, b) = (p(0, tape), p(1, tape));
                    tape.dense(x, w, Some(b))?
                }
                LayerKind::Relu => tape.relu(x)?,
                LayerKind::GlobalAvgPool => tape.global_avg_pool(x)?,
                LayerKind::Affine { .. } => {
                    let (sc, sh) = (p(0, tape), p(1, tape));
                    tape.channel_affine(x, sc, sh)?
                }
            };
            debug_assert_eq!(&tape.shape(y)?[1..], layer.out_shape.as_slice());
            debug_assert_eq!(tape.shape(y)?[0], batch);
            outs[i] = Some(y);
        }
        let taps = self
            .taps
            .iter()
            .filter_map(|(&t, &l)| outs[l].map(|v| (t, v)))
            .collect();
        Ok(Forward { taps, params })
    }

    /// Forward pass without gradients, returning tap values.
    pub fn infer(&self, input: Tensor<T>, want: &[Tap]) -> Result<BTreeMap<Tap, Tensor<T>>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, input, want, false)?;
        fwd.taps.iter().map(|(&t, &v)| Ok((t, tape.value(v)?.clone()))).collect()
    }

    /// Copies the gradients of the last backward on `tape` into the
    /// parameters' gradient buffers.
    pub fn collect_grads(&mut self, tape: &Tape<T>, fwd: &Forward) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(&fwd.params) {
            if let Some(v) = v {
                p.accumulate_grad(tape.grad(*v)?.data())?;
            }
        }
        Ok(())
    }
}
