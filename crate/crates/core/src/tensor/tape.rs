use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom};
use super::{shape_err, Result, Scalar, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom, cols: Vec<T> },
    Deconv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    Dense { input: Var, weight: Var, bias: Option<Var>, batch: usize, din: usize, dout: usize },
    Relu(Var),
    GlobalAvgPool { input: Var, pixels: usize },
    ChannelAffine { input: Var, scale: Var, shift: Var, channels: usize, pixels: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Gather { input: Var, indices: Vec<usize> },
    Reshape(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::Dense { .. } => "dense",
            Op::Relu(_) => "relu",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::ChannelAffine { .. } => "channel_affine",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Gather { .. } => "gather",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Which recorded operations a backward pass visited, in visiting order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackwardReport {
    pub visited: Vec<(usize, &'static str)>,
}

/// Ordered record of executed operations.
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    id: u64,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::Detached);
        }
        Ok(&self.nodes[v.index])
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, index }
    }

    /// Records a leaf. `requires_grad` is taken from the tensor.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        let value = Tensor { grad: None, ..t };
        self.push(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.check(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.check(v)?.value.shape())
    }

    pub fn scalar_value(&self, v: Var) -> Result<T> {
        let t = self.value(v)?;
        if t.len() != 1 {
            return Err(shape_err("scalar_value", format!("shape {:?} is not scalar", t.shape())));
        }
        Ok(t.data()[0])
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::conv(self.shape(input)?, self.shape(weight)?, stride, pad)?;
        if let Some(b) = bias {
            let bs = self.shape(b)?;
            if bs != [geom.cout] {
                return Err(shape_err("conv2d", format!("bias {bs:?} vs {} out channels", geom.cout)));
            }
        }
        let (out, cols) = {
            let x = self.nodes[input.index].value.data();
            let w = self.nodes[weight.index].value.data();
            let b = bias.map(|b| self.nodes[b.index].value.data());
            kernels::conv2d_forward(&geom, x, w, b)
        };
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        let value = Tensor::new(&[geom.batch, geom.cout, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom, cols }, rg))
    }

    /// Transposed convolution, weight `[cin, cout, kh, kw]`.
    pub fn deconv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::deconv(self.shape(input)?, self.shape(weight)?, stride, pad)?;
        if let Some(b) = bias {
            let bs = self.shape(b)?;
            if bs != [geom.cin] {
                return Err(shape_err("deconv2d", format!("bias {bs:?} vs {} out channels", geom.cin)));
            }
        }
        let out = {
            let x = self.nodes[input.index].value.data();
            let w = self.nodes[weight.index].value.data();
            let b = bias.map(|b| self.nodes[b.index].value.data());
            kernels::deconv2d_forward(&geom, x, w, b)
        };
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        let value = Tensor::new(&[geom.batch, geom.cin, geom.h, geom.w], out)?;
        Ok(self.push(value, Op::Deconv2d { input, weight, bias, geom }, rg))
    }

    /// `input [B, din] · weight[dout, din]^T + bias`
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input)?.to_vec();
        let ws = self.shape(weight)?.to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("dense", format!("input {xs:?} incompatible with weight {ws:?}")));
        }
        let (batch, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = bias {
            let bs = self.shape(b)?;
            if bs != [dout] {
                return Err(shape_err("dense", format!("bias {bs:?} vs {dout} outputs")));
            }
        }
        let mut out = vec![T::zero(); batch * dout];
        if let Some(b) = bias {
            let bd = self.nodes[b.index].value.data();
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bd);
            }
        }
        kernels::gemm_nt(
            batch,
            din,
            dout,
            self.nodes[input.index].value.data(),
            self.nodes[weight.index].value.data(),
            &mut out,
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        let value = Tensor::new(&[batch, dout], out)?;
        Ok(self.push(value, Op::Dense { input, weight, bias, batch, din, dout }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let node = self.check(x)?;
        let data = node.value.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(node.value.shape(), data)?;
        let rg = node.requires_grad;
        Ok(self.push(value, op, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let node = self.check(x)?;
        let value = node.value.reshape(shape)?;
        let rg = node.requires_grad;
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, name: &'static str) -> Result<Tensor<T>> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        if na.value.shape() != nb.value.shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", na.value.shape(), nb.value.shape()),
            ));
        }
        let data = na.value.data().iter().zip(nb.value.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(na.value.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x + y, "add")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x - y, "sub")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x * y, "mul")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let node = self.check(x)?;
        let s = node.value.data().iter().copied().sum::<T>();
        let rg = node.requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let node = self.check(x)?;
        let n = T::of(node.value.len() as f64);
        let s = node.value.data().iter().copied().sum::<T>() / n;
        let rg = node.requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Picks elements of the flattened input; output shape `[indices.len()]`.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        let node = self.check(x)?;
        let n = node.value.len();
        if indices.is_empty() {
            return Err(shape_err("gather", "empty index set"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("index {bad} out of range for {n} elements")));
        }
        let data = indices.iter().map(|&i| node.value.data()[i]).collect();
        let value = Tensor::new(&[indices.len()], data)?;
        let rg = node.requires_grad;
        Ok(self.push(value, Op::Gather { input: x, indices }, rg))
    }

    /// `[B, C, H, W] -> [B, C]`
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let node = self.check(x)?;
        let s = node.value.shape();
        if s.len() != 4 {
            return Err(shape_err("global_avg_pool", format!("expected 4-d input, got {s:?}")));
        }
        let (batch, channels, pixels) = (s[0], s[1], s[2] * s[3]);
        let inv = T::one() / T::of(pixels as f64);
        let data = node.value.data().chunks(pixels).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::new(&[batch, channels], data)?;
        let rg = node.requires_grad;
        Ok(self.push(value, Op::GlobalAvgPool { input: x, pixels }, rg))
    }

    /// Per-channel `x * scale[c] + shift[c]` on `[B, C, H, W]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let s = self.shape(x)?.to_vec();
        if s.len() != 4 {
            return Err(shape_err("channel_affine", format!("expected 4-d input, got {s:?}")));
        }
        let channels = s[1];
        if self.shape(scale)? != [channels] || self.shape(shift)? != [channels] {
            return Err(shape_err("channel_affine", format!("scale/shift must be [{channels}]")));
        }
        let pixels = s[2] * s[3];
        let (xd, sc, sh) = (
            self.nodes[x.index].value.data(),
            self.nodes[scale.index].value.data(),
            self.nodes[shift.index].value.data(),
        );
        let data = xd
            .chunks(pixels)
            .enumerate()
            .flat_map(|(i, plane)| {
                let c = i % channels;
                plane.iter().map(move |&v| v * sc[c] + sh[c])
            })
            .collect();
        let value = Tensor::new(&s, data)?;
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(value, Op::ChannelAffine { input: x, scale, shift, channels, pixels }, rg))
    }

    /// Gradient of the last backward w.r.t. `v`; zeros when `v` was not
    /// upstream of the loss.
    pub fn grad(&self, v: Var) -> Result<Tensor<T>> {
        let node = self.check(v)?;
        match self.grads.get(v.index).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(node.value.shape(), g.clone()),
            None => Ok(Tensor::zeros(node.value.shape())),
        }
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn acc(grads: &mut [Option<Vec<T>>], v: Var, len: usize, f: impl FnOnce(&mut [T])) {
        let g = grads[v.index].get_or_insert_with(|| vec![T::zero(); len]);
        f(g);
    }

    fn acc_vec(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
        match grads[v.index].as_mut() {
            Some(g) => g.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
            None => grads[v.index] = Some(d),
        }
    }

    /// Replays the tape backward from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardReport> {
        let node = self.check(loss)?;
        if node.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(node.value.shape().to_vec()));
        }
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(vec![T::one()]);
        let mut visited = Vec::new();

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            visited.push((i, node.op.name()));
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            let needs = |v: &Var| self.nodes[v.index].requires_grad;
            let val = |v: &Var| self.nodes[v.index].value.data();
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, weight, bias, geom, cols } => {
                    let need = (needs(input), needs(weight), bias.as_ref().is_some_and(needs));
                    let g = kernels::conv2d_backward(geom, val(input), cols, val(weight), &gout, need);
                    if let Some(d) = g.input {
                        Self::acc_vec(&mut grads, *input, d);
                    }
                    if let Some(d) = g.weight {
                        Self::acc_vec(&mut grads, *weight, d);
                    }
                    if let (Some(b), Some(d)) = (bias, g.bias) {
                        Self::acc_vec(&mut grads, *b, d);
                    }
                }
                Op::Deconv2d { input, weight, bias, geom } => {
                    let need = (needs(input), needs(weight), bias.as_ref().is_some_and(needs));
                    let g = kernels::deconv2d_backward(geom, val(input), val(weight), &gout, need);
                    if let Some(d) = g.input {
                        Self::acc_vec(&mut grads, *input, d);
                    }
                    if let Some(d) = g.weight {
                        Self::acc_vec(&mut grads, *weight, d);
                    }
                    if let (Some(b), Some(d)) = (bias, g.bias) {
                        Self::acc_vec(&mut grads, *b, d);
                    }
                }
                Op::Dense { input, weight, bias, batch, din, dout } => {
                    let (batch, din, dout) = (*batch, *din, *dout);
                    if needs(input) {
                        let mut d = vec![T::zero(); batch * din];
                        kernels::gemm_nn(batch, dout, din, &gout, val(weight), &mut d);
                        Self::acc_vec(&mut grads, *input, d);
                    }
                    if needs(weight) {
                        let mut d = vec![T::zero(); dout * din];
                        kernels::gemm_tn(dout, batch, din, &gout, val(input), &mut d);
                        Self::acc_vec(&mut grads, *weight, d);
                    }
                    if let Some(b) = bias.filter(|b| needs(b)) {
                        let mut d = vec![T::zero(); dout];
                        for row in gout.chunks(dout) {
                            d.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                        }
                        Self::acc_vec(&mut grads, b, d);
                    }
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let d = gout.iter().zip(y).map(|(&g, &y)| if y > T::zero() { g } else { T::zero() }).collect();
                    Self::acc_vec(&mut grads, *x, d);
                }
                Op::GlobalAvgPool { input, pixels, .. } => {
                    let pixels = *pixels;
                    let inv = T::one() / T::of(pixels as f64);
                    Self::acc(&mut grads, *input, gout.len() * pixels, |g| {
                        for (plane, &go) in g.chunks_mut(pixels).zip(&gout) {
                            plane.iter_mut().for_each(|v| *v += go * inv);
                        }
                    });
                }
                Op::ChannelAffine { input, scale, shift, channels, pixels } => {
                    let (channels, pixels) = (*channels, *pixels);
                    let sc = val(scale);
                    if needs(input) {
                        let d = gout
                            .chunks(pixels)
                            .enumerate()
                            .flat_map(|(i, p)| p.iter().map(move |&g| g * sc[i % channels]))
                            .collect();
                        Self::acc_vec(&mut grads, *input, d);
                    }
                    if needs(scale) || needs(shift) {
                        let x = val(input);
                        let mut dsc = vec![T::zero(); channels];
                        let mut dsh = vec![T::zero(); channels];
                        for (i, (gp, xp)) in gout.chunks(pixels).zip(x.chunks(pixels)).enumerate() {
                            let c = i % channels;
                            dsh[c] += gp.iter().copied().sum::<T>();
                            dsc[c] += kernels::dot(gp, xp);
                        }
                        if needs(scale) {
                            Self::acc_vec(&mut grads, *scale, dsc);
                        }
                        if needs(shift) {
                            Self::acc_vec(&mut grads, *shift, dsh);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if needs(a) {
                        Self::acc_vec(&mut grads, *a, gout.clone());
                    }
                    if needs(b) {
                        Self::acc_vec(&mut grads, *b, gout);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(b) {
                        Self::acc_vec(&mut grads, *b, gout.iter().map(|&g| -g).collect());
                    }
                    if needs(a) {
                        Self::acc_vec(&mut grads, *a, gout);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        let d = gout.iter().zip(val(b)).map(|(&g, &y)| g * y).collect();
                        Self::acc_vec(&mut grads, *a, d);
                    }
                    if needs(b) {
                        let d = gout.iter().zip(val(a)).map(|(&g, &x)| g * x).collect();
                        Self::acc_vec(&mut grads, *b, d);
                    }
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    Self::acc_vec(&mut grads, *x, gout.iter().map(|&g| g * s).collect());
                }
                Op::Square(x) => {
                    let two = T::of(2.0);
                    let d = gout.iter().zip(val(x)).map(|(&g, &v)| g * two * v).collect();
                    Self::acc_vec(&mut grads, *x, d);
                }
                Op::Abs(x) => {
                    let d = gout
                        .iter()
                        .zip(val(x))
                        .map(|(&g, &v)| {
                            if v > T::zero() {
                                g
                            } else if v < T::zero() {
                                -g
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    Self::acc_vec(&mut grads, *x, d);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.index].value.len();
                    let g = gout[0];
                    Self::acc(&mut grads, *x, n, |d| d.iter_mut().for_each(|v| *v += g));
                }
                Op::Mean(x) => {
                    let n = self.nodes[x.index].value.len();
                    let g = gout[0] / T::of(n as f64);
                    Self::acc(&mut grads, *x, n, |d| d.iter_mut().for_each(|v| *v += g));
                }
                Op::Gather { input, indices } => {
                    let n = self.nodes[input.index].value.len();
                    Self::acc(&mut grads, *input, n, |d| {
                        for (&i, &g) in indices.iter().zip(&gout) {
                            d[i] += g;
                        }
                    });
                }
                Op::Reshape(x) => {
                    Self::acc_vec(&mut grads, *x, gout);
                }
            }
        }
        // only leaf gradients are kept
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) || !n.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(BackwardReport { visited })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_all_ones_hand_oracle() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let w = tape.constant(Tensor::filled(&[1, 1, 2, 2], 1.0));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(tape.shape(y).unwrap(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).unwrap().data(), &[4.0; 4]);
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 5, 5]));
        let w = tape.constant(Tensor::filled(&[4, 3, 3, 3], 0.7));
        let b = tape.constant(t(&[4], &[0.5, -1.0, 2.0, 3.5]));
        let y = tape.conv2d(x, w, Some(b), 2, 1).unwrap();
        let v = tape.value(y).unwrap();
        assert_eq!(v.shape(), &[2, 4, 3, 3]);
        for (i, &val) in v.data().iter().enumerate() {
            let c = (i / 9) % 4;
            assert_eq!(val, [0.5, -1.0, 2.0, 3.5][c]);
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(tape.conv2d(x, w, None, 1, 1), Err(TensorError::Shape { .. })));
        let w = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(matches!(tape.conv2d(x, w, None, 3, 0), Err(TensorError::Config { .. })));
    }

    #[test]
    fn deconv_zero_weight_gives_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let b = tape.constant(t(&[1], &[1.25]));
        let y = tape.deconv2d(x, w, Some(b), 2, 1).unwrap();
        let v = tape.value(y).unwrap();
        assert_eq!(v.shape(), &[1, 1, 4, 4]);
        assert!(v.data().iter().all(|&e| e == 1.25));
    }

    /// Transposed convolution computed by zero insertion, padding with
    /// `k - 1 - pad`, and a stride-1 correlation with the flipped kernel.
    fn deconv_by_zero_insertion(x: &[f64], h: usize, w: usize, k: &[f64], ks: usize, s: usize, p: usize) -> (Vec<f64>, usize, usize) {
        let (dh, dw) = ((h - 1) * s + 1, (w - 1) * s + 1);
        let q = ks - 1 - p;
        let (ph, pw) = (dh + 2 * q, dw + 2 * q);
        let mut up = vec![0.0; ph * pw];
        for i in 0..h {
            for j in 0..w {
                up[(i * s + q) * pw + j * s + q] = x[i * w + j];
            }
        }
        let (oh, ow) = (ph - ks + 1, pw - ks + 1);
        let mut out = vec![0.0; oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for a in 0..ks {
                    for b in 0..ks {
                        acc += up[(i + a) * pw + j + b] * k[(ks - 1 - a) * ks + (ks - 1 - b)];
                    }
                }
                out[i * ow + j] = acc;
            }
        }
        (out, oh, ow)
    }

    #[test]
    fn deconv_single_pixel_is_kernel_center() {
        let (oracle, oh, ow) = deconv_by_zero_insertion(&[1.0], 1, 1, &[1.0; 16], 4, 2, 1);
        assert_eq!((oh, ow), (2, 2));
        assert_eq!(oracle, vec![1.0; 4]);

        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let w = tape.constant(Tensor::filled(&[1, 1, 4, 4], 1.0));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.deconv2d(x, w, Some(b), 2, 1).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &oracle[..]);
    }

    #[test]
    fn deconv_matches_zero_insertion_oracle() {
        let x: Vec<f64> = (0..9).map(|i| ((i * 7 % 5) as f64) - 1.5).collect();
        let k: Vec<f64> = (0..16).map(|i| ((i as f64) * 0.3).sin()).collect();
        let (oracle, oh, ow) = deconv_by_zero_insertion(&x, 3, 3, &k, 4, 2, 1);
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(t(&[1, 1, 3, 3], &x));
        let wv = tape.constant(t(&[1, 1, 4, 4], &k));
        let y = tape.deconv2d(xv, wv, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y).unwrap(), &[1, 1, oh, ow]);
        for (a, b) in tape.value(y).unwrap().data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Builds the conv as an explicit matrix by probing unit inputs; the
    /// deconv with the same weight must be its transpose.
    #[test]
    fn deconv_is_matrix_transpose_of_conv() {
        let (cin, cout, h) = (2, 3, 6);
        let wdata: Vec<f64> = (0..cout * cin * 16).map(|i| ((i as f64) * 1.7).cos()).collect();
        let conv_out = |x: &[f64]| {
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(t(&[1, cin, h, h], x));
            let wv = tape.constant(t(&[cout, cin, 4, 4], &wdata));
            let y = tape.conv2d(xv, wv, None, 2, 1).unwrap();
            tape.value(y).unwrap().data().to_vec()
        };
        let deconv_out = |y: &[f64]| {
            let mut tape = Tape::<f64>::new();
            let yv = tape.constant(t(&[1, cout, h / 2, h / 2], y));
            let wv = tape.constant(t(&[cout, cin, 4, 4], &wdata));
            let x = tape.deconv2d(yv, wv, None, 2, 1).unwrap();
            tape.value(x).unwrap().data().to_vec()
        };
        let nin = cin * h * h;
        let nout = cout * (h / 2) * (h / 2);
        let mut conv_m = vec![0.0; nout * nin];
        for j in 0..nin {
            let mut e = vec![0.0; nin];
            e[j] = 1.0;
            for (i, v) in conv_out(&e).into_iter().enumerate() {
                conv_m[i * nin + j] = v;
            }
        }
        for i in 0..nout {
            let mut e = vec![0.0; nout];
            e[i] = 1.0;
            for (j, v) in deconv_out(&e).into_iter().enumerate() {
                assert!((v - conv_m[i * nin + j]).abs() < 1e-12, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn dense_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.constant(t(&[2, 2], &[1.0, 1.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2], &[0.0, 0.0]));
        let y = tape.dense(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[3.0, 2.0]);

        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = tape.dense(x, eye, Some(b)).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[1.0, 2.0]);

        let z = tape.constant(Tensor::zeros(&[3, 2]));
        let bias = tape.constant(t(&[2], &[0.25, -4.0]));
        let y = tape.dense(z, w, Some(bias)).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[0.25, -4.0, 0.25, -4.0, 0.25, -4.0]);

        let bad = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(tape.dense(bad, w, None).is_err());
    }

    #[test]
    fn pointwise_and_pool() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).unwrap().data(), &[0.0, 0.0, 2.0]);

        let img = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let g = tape.global_avg_pool(img).unwrap();
        assert_eq!(tape.shape(g).unwrap(), &[1, 1]);
        assert_eq!(tape.value(g).unwrap().data(), &[2.5]);

        let zero = tape.constant(Tensor::zeros(&[3]));
        let s = tape.add(x, zero).unwrap();
        assert_eq!(tape.value(s).unwrap().data(), tape.value(x).unwrap().data());
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[0.3, -2.0, 5.0]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let y = tape.param(t(&[2], &[7.0, 8.0]));
        let sq = tape.square(x).unwrap();
        let l = tape.sum(sq).unwrap();
        let _unused = tape.add(y, y).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(tape.grad(y).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[-1.0, 0.0, 1.0]));
        let r = tape.relu(x).unwrap();
        let l = tape.sum(r).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert_eq!(tape.backward(x), Err(TensorError::NonScalarLoss(vec![2])));
        let l = tape.sum(x).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.backward(l), Err(TensorError::BackwardTwice));
        tape.reset_grads();
        assert!(tape.backward(l).is_ok());

        let mut other = Tape::<f64>::new();
        let foreign = other.param(t(&[1], &[1.0]));
        assert_eq!(tape.backward(foreign), Err(TensorError::Detached));
        assert!(tape.relu(foreign).is_err());
    }

    #[test]
    fn backward_visits_each_op_once_in_reverse() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, -2.0]));
        let a = tape.square(x).unwrap();
        let b = tape.relu(x).unwrap();
        let c = tape.add(a, b).unwrap();
        let l = tape.sum(c).unwrap();
        let report = tape.backward(l).unwrap();
        let idx: Vec<usize> = report.visited.iter().map(|v| v.0).collect();
        assert_eq!(idx, vec![l.index(), c.index(), b.index(), a.index()]);
        assert_eq!(report.visited[0].1, "sum");
    }

    #[test]
    fn grad_accumulates_over_reuse() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1], &[3.0]));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let l = tape.sum(z).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[7.0]);
    }
}
