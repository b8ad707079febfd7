//! Dense row-major `f64` tensors and the raw kernels the autograd tape is
//! built from. Activation maps are laid out channel-first (C×H×W).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as a C×H×W activation map.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a C×H×W tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Range of output columns `ox` for which `ox * stride + k - pad` lands in `[0, len)`.
fn valid_range(out_len: usize, stride: usize, k: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k {
        ((len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if len + 2 * pad < kernel || stride == 0 {
        None
    } else {
        Some((len + 2 * pad - kernel) / stride + 1)
    }
}

/// 2-D cross-correlation with zero padding. `weight` is `[out, in, kh, kw]`.
pub(crate) fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (ci, h, w) = input.dims3();
    let (co, wci, kh, kw) = dims4(weight);
    assert_eq!(ci, wci, "conv input has {ci} channels, kernel expects {wci}");
    let oh = conv_out_len(h, kh, stride, pad).expect("conv input smaller than kernel");
    let ow = conv_out_len(w, kw, stride, pad).expect("conv input smaller than kernel");
    let mut out = vec![0.0; co * oh * ow];
    let x = input.data();
    let wt = weight.data();
    for oc in 0..co {
        let o = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(b) = bias {
            o.fill(b.data()[oc]);
        }
        for ic in 0..ci {
            let plane = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(oh, stride, ky, pad, h);
                for kx in 0..kw {
                    let wv = wt[((oc * ci + ic) * kh + ky) * kw + kx];
                    let (ox_lo, ox_hi) = valid_range(ow, stride, kx, pad, w);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let orow = &mut o[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            orow[ox] += wv * row[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![co, oh, ow],
        data: out,
    }
}

/// Returns `(d_input, d_weight, d_bias)` for [`conv2d`].
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (ci, h, w) = input.dims3();
    let (co, _, kh, kw) = dims4(weight);
    let (_, oh, ow) = grad_out.dims3();
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wt.len()];
    let mut db = vec![0.0; co];
    for oc in 0..co {
        let go = &g[oc * oh * ow..(oc + 1) * oh * ow];
        db[oc] = go.iter().sum();
        for ic in 0..ci {
            let plane = &x[ic * h * w..(ic + 1) * h * w];
            let dplane_off = ic * h * w;
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(oh, stride, ky, pad, h);
                for kx in 0..kw {
                    let widx = ((oc * ci + ic) * kh + ky) * kw + kx;
                    let wv = wt[widx];
                    let (ox_lo, ox_hi) = valid_range(ow, stride, kx, pad, w);
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let grow = &go[oy * ow..(oy + 1) * ow];
                        let drow = &mut dx[dplane_off + iy * w..dplane_off + (iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            acc += row[ix] * grow[ox];
                            drow[ix] += wv * grow[ox];
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (
        Tensor {
            shape: input.shape.clone(),
            data: dx,
        },
        Tensor {
            shape: weight.shape.clone(),
            data: dw,
        },
        Tensor {
            shape: vec![co],
            data: db,
        },
    )
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    assert_eq!(t.shape.len(), 4, "expected a 4-D kernel, got {:?}", t.shape);
    (t.shape[0], t.shape[1], t.shape[2], t.shape[3])
}

/// Per-channel standardization over H×W. Returns the normalized map and
/// the per-channel `1 / sqrt(var + eps)`.
pub(crate) fn instance_norm(input: &Tensor, eps: f64) -> (Tensor, Vec<f64>) {
    let (c, h, w) = input.dims3();
    let n = h * w;
    let mut out = vec![0.0; input.len()];
    let mut inv_stds = Vec::with_capacity(c);
    for ch in 0..c {
        let xs = &input.data[ch * n..(ch + 1) * n];
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        for (o, x) in out[ch * n..(ch + 1) * n].iter_mut().zip(xs) {
            *o = (x - mean) * inv_std;
        }
        inv_stds.push(inv_std);
    }
    (
        Tensor {
            shape: input.shape.clone(),
            data: out,
        },
        inv_stds,
    )
}

pub(crate) fn instance_norm_backward(normalized: &Tensor, inv_stds: &[f64], grad_out: &Tensor) -> Tensor {
    let (c, h, w) = normalized.dims3();
    let n = h * w;
    let nf = n as f64;
    let mut dx = vec![0.0; normalized.len()];
    for ch in 0..c {
        let xhat = &normalized.data[ch * n..(ch + 1) * n];
        let g = &grad_out.data[ch * n..(ch + 1) * n];
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xhat).map(|(a, b)| a * b).sum();
        let k = inv_stds[ch] / nf;
        for i in 0..n {
            dx[ch * n + i] = k * (nf * g[i] - sum_g - xhat[i] * sum_gx);
        }
    }
    Tensor {
        shape: normalized.shape.clone(),
        data: dx,
    }
}

pub(crate) fn upsample_nearest(input: &Tensor, factor: usize) -> Tensor {
    let (c, h, w) = input.dims3();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(ch * oh + oy) * ow + ox] = input.data[(ch * h + oy / factor) * w + ox / factor];
            }
        }
    }
    Tensor {
        shape: vec![c, oh, ow],
        data: out,
    }
}

pub(crate) fn upsample_nearest_backward(grad_out: &Tensor, factor: usize) -> Tensor {
    let (c, oh, ow) = grad_out.dims3();
    let (h, w) = (oh / factor, ow / factor);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[(ch * h + oy / factor) * w + ox / factor] += grad_out.data[(ch * oh + oy) * ow + ox];
            }
        }
    }
    Tensor {
        shape: vec![c, h, w],
        data: dx,
    }
}

/// `F·Fᵀ / divisor` for `F` reshaped to C×(H·W).
pub(crate) fn gram(input: &Tensor, divisor: f64) -> Tensor {
    let (c, h, w) = input.dims3();
    let n = h * w;
    let f = input.data();
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        let fi = &f[i * n..(i + 1) * n];
        for j in i..c {
            let fj = &f[j * n..(j + 1) * n];
            let v = fi.iter().zip(fj).map(|(a, b)| a * b).sum::<f64>() / divisor;
            g[i * c + j] = v;
            g[j * c + i] = v;
        }
    }
    Tensor {
        shape: vec![c, c],
        data: g,
    }
}

pub(crate) fn gram_backward(input: &Tensor, divisor: f64, grad_out: &Tensor) -> Tensor {
    let (c, h, w) = input.dims3();
    let n = h * w;
    let f = input.data();
    let dg = grad_out.data();
    let mut dx = vec![0.0; f.len()];
    for i in 0..c {
        let out = &mut dx[i * n..(i + 1) * n];
        for j in 0..c {
            let coef = (dg[i * c + j] + dg[j * c + i]) / divisor;
            if coef == 0.0 {
                continue;
            }
            let fj = &f[j * n..(j + 1) * n];
            for (o, v) in out.iter_mut().zip(fj) {
                *o += coef * v;
            }
        }
    }
    Tensor {
        shape: input.shape.clone(),
        data: dx,
    }
}
