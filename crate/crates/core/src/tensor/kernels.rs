//! Raw loops behind the differentiable ops. All buffers are row-major.

use super::{config_err, shape_err, Result, Scalar};

/// Geometry of a 2-D convolution over an NCHW batch. For transposed
/// convolution the same struct describes the adjoint forward convolution,
/// i.e. `(h, w)` is the *larger* map and `(ho, wo)` the smaller one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn conv(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(shape_err(
                "conv2d",
                format!("expected 4-d input and weight, got {input:?} and {weight:?}"),
            ));
        }
        let (batch, cin, h, w) = (input[0], input[1], input[2], input[3]);
        let (cout, wcin, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if wcin != cin {
            return Err(shape_err(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if stride == 0 {
            return Err(config_err("conv2d", "stride must be positive"));
        }
        let (ho, wo) = (
            conv_out_extent("height", h, kh, stride, pad)?,
            conv_out_extent("width", w, kw, stride, pad)?,
        );
        Ok(Self { batch, cin, h, w, cout, kh, kw, stride, pad, ho, wo })
    }

    /// Geometry for a transposed convolution whose weight is laid out as
    /// `[cin_deconv, cout_deconv, kh, kw]`. In the returned struct `cout`
    /// is the deconv *input* channel count and `cin` the deconv output count.
    pub fn deconv(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(shape_err(
                "deconv2d",
                format!("expected 4-d input and weight, got {input:?} and {weight:?}"),
            ));
        }
        let (batch, din, hi, wi) = (input[0], input[1], input[2], input[3]);
        let (wcin, dout, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if wcin != din {
            return Err(shape_err(
                "deconv2d",
                format!("input has {din} channels but weight expects {wcin}"),
            ));
        }
        if stride == 0 {
            return Err(config_err("deconv2d", "stride must be positive"));
        }
        let full_h = (hi - 1) * stride + kh;
        let full_w = (wi - 1) * stride + kw;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(config_err(
                "deconv2d",
                format!("padding {pad} consumes the whole {full_h}x{full_w} output"),
            ));
        }
        let (h, w) = (full_h - 2 * pad, full_w - 2 * pad);
        // the adjoint conv must map (h, w) back onto exactly (hi, wi)
        let geom = Self { batch, cin: dout, h, w, cout: din, kh, kw, stride, pad, ho: hi, wo: wi };
        if conv_out_extent("height", h, kh, stride, pad)? != hi
            || conv_out_extent("width", w, kw, stride, pad)? != wi
        {
            return Err(config_err("deconv2d", "kernel/stride/pad are not invertible"));
        }
        Ok(geom)
    }

    pub fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    pub fn in_pixels(&self) -> usize {
        self.h * self.w
    }

    /// 1x1, stride 1, no padding: the im2col matrix is the input itself.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_out_extent(axis: &str, n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = n + 2 * pad;
    if padded < k {
        return Err(shape_err(
            "conv2d",
            format!("padded {axis} {padded} is smaller than kernel {k}"),
        ));
    }
    if (padded - k) % stride != 0 {
        return Err(config_err(
            "conv2d",
            format!("{axis}: (size {n} + 2*pad {pad} - kernel {k}) not divisible by stride {stride}"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

/// Unrolls one sample `[cin, h, w]` into `[cin*kh*kw, ho*wo]`.
pub fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.out_pixels();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[cin*kh*kw, ho*wo]` back into `[cin, h, w]`
/// (accumulating).
pub fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], x: &mut [T]) {
    let p = g.out_pixels();
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[k,n]`
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            *cv += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (ac, bc) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += ac[l] * bc[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Forward convolution. Returns the output and the im2col buffers (one per
/// sample, empty for pointwise convs) for reuse in backward.
pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> (Vec<T>, Vec<T>) {
    let (k, p) = (g.k(), g.out_pixels());
    let in_sz = g.cin * g.in_pixels();
    let out_sz = g.cout * p;
    let mut out = vec![T::zero(); g.batch * out_sz];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.batch * k * p] };
    for b in 0..g.batch {
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        let ob = &mut out[b * out_sz..(b + 1) * out_sz];
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                ob[co * p..(co + 1) * p].iter_mut().for_each(|v| *v = bv);
            }
        }
        if g.is_pointwise() {
            gemm_nn(g.cout, k, p, weight, xb, ob);
        } else {
            let col = &mut cols[b * k * p..(b + 1) * k * p];
            im2col(g, xb, col);
            gemm_nn(g.cout, k, p, weight, col, ob);
        }
    }
    (out, cols)
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    cols: &[T],
    weight: &[T],
    dout: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (k, p) = (g.k(), g.out_pixels());
    let in_sz = g.cin * g.in_pixels();
    let out_sz = g.cout * p;
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); weight.len()]);
    let mut db = need.2.then(|| vec![T::zero(); g.cout]);
    let mut dcol = vec![T::zero(); if need.0 { k * p } else { 0 }];
    for b in 0..g.batch {
        let dob = &dout[b * out_sz..(b + 1) * out_sz];
        let col: &[T] = if g.is_pointwise() {
            &x[b * in_sz..(b + 1) * in_sz]
        } else {
            &cols[b * k * p..(b + 1) * k * p]
        };
        if let Some(dw) = dw.as_mut() {
            gemm_nt(g.cout, p, k, dob, col, dw);
        }
        if let Some(db) = db.as_mut() {
            for (co, d) in db.iter_mut().enumerate() {
                *d += dob[co * p..(co + 1) * p].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_sz..(b + 1) * in_sz];
            if g.is_pointwise() {
                gemm_tn(k, g.cout, p, weight, dob, dxb);
            } else {
                dcol.iter_mut().for_each(|v| *v = T::zero());
                gemm_tn(k, g.cout, p, weight, dob, &mut dcol);
                col2im(g, &dcol, dxb);
            }
        }
    }
    ConvGrads { input: dx, weight: dw, bias: db }
}

/// Transposed convolution forward; `g` comes from [`ConvGeom::deconv`].
/// Input is `[batch, g.cout, g.ho, g.wo]`, output `[batch, g.cin, g.h, g.w]`.
pub fn deconv2d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (k, p) = (g.k(), g.out_pixels());
    let in_sz = g.cout * p;
    let out_sz = g.cin * g.in_pixels();
    let mut out = vec![T::zero(); g.batch * out_sz];
    let mut col = vec![T::zero(); k * p];
    for b in 0..g.batch {
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        let ob = &mut out[b * out_sz..(b + 1) * out_sz];
        col.iter_mut().for_each(|v| *v = T::zero());
        gemm_tn(k, g.cout, p, weight, xb, &mut col);
        col2im(g, &col, ob);
        if let Some(bias) = bias {
            let hw = g.in_pixels();
            for (c, &bv) in bias.iter().enumerate() {
                ob[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub fn deconv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dout: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (k, p) = (g.k(), g.out_pixels());
    let in_sz = g.cout * p;
    let out_sz = g.cin * g.in_pixels();
    let hw = g.in_pixels();
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); weight.len()]);
    let mut db = need.2.then(|| vec![T::zero(); g.cin]);
    let mut col = vec![T::zero(); k * p];
    for b in 0..g.batch {
        let dob = &dout[b * out_sz..(b + 1) * out_sz];
        if let Some(db) = db.as_mut() {
            for (c, d) in db.iter_mut().enumerate() {
                *d += dob[c * hw..(c + 1) * hw].iter().copied().sum::<T>();
            }
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        im2col(g, dob, &mut col);
        if let Some(dx) = dx.as_mut() {
            gemm_nn(g.cout, k, p, weight, &col, &mut dx[b * in_sz..(b + 1) * in_sz]);
        }
        if let Some(dw) = dw.as_mut() {
            gemm_nt(g.cout, p, k, &x[b * in_sz..(b + 1) * in_sz], &col, dw);
        }
    }
    ConvGrads { input: dx, weight: dw, bias: db }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, k, n) = (5, 11, 7);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive_matmul(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        let mut c2 = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &transpose(k, n, &b), &mut c2);
        let mut c3 = vec![0.0; m * n];
        gemm_tn(m, k, n, &transpose(m, k, &a), &b, &mut c3);
        for i in 0..m * n {
            assert!((c[i] - want[i]).abs() < 1e-12);
            assert!((c2[i] - want[i]).abs() < 1e-12);
            assert!((c3[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_geometry_rejects_indivisible_stride() {
        let err = ConvGeom::conv(&[1, 1, 6, 6], &[1, 1, 3, 3], 2, 0).unwrap_err();
        assert!(matches!(err, super::super::TensorError::Config { .. }));
        assert!(ConvGeom::conv(&[1, 2, 6, 6], &[1, 1, 3, 3], 1, 0).is_err());
        assert!(ConvGeom::conv(&[1, 1, 2, 2], &[1, 1, 3, 3], 1, 0).is_err());
    }

    #[test]
    fn deconv_geometry_doubles() {
        let g = ConvGeom::deconv(&[1, 8, 5, 7], &[8, 3, 4, 4], 2, 1).unwrap();
        assert_eq!((g.h, g.w), (10, 14));
        assert_eq!((g.ho, g.wo, g.cin, g.cout), (5, 7, 3, 8));
    }
}
