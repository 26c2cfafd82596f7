//! Layers with analytic backward passes.
//!
//! Layouts: vectors `[B, D]`, sequences `[B, D, T]`, images `[B, C, H, W]`.

use super::tensor::{Param, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    /// `w: [out, in]`.
    Linear { w: Param<T>, b: Param<T> },
    /// 3x3 kernel, stride 1, zero padding 1. `w: [cout, cin, 3, 3]`.
    Conv2d { w: Param<T>, b: Param<T> },
    /// Per-channel normalization over batch and trailing axes.
    BatchNorm {
        gamma: Param<T>,
        beta: Param<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
    },
    Relu,
    /// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
    MaxPool2,
    /// Global average plus global max over trailing axes: `[B, C, ...] -> [B, C]`.
    GlobalPool,
    /// `[B, H, W] -> [B, 1, H, W]`.
    AddChannel,
    /// Linear map applied to every frame: `[B, D, T] -> [B, out, T]`.
    FrameLinear { w: Param<T>, b: Param<T> },
    /// `[B, D, T] -> [B, D]`.
    TimeMeanPool,
    /// Single-layer GRU returning the last hidden state: `[B, D, T] -> [B, H]`.
    /// Gate blocks are ordered reset, update, candidate.
    Gru {
        w_ih: Param<T>,
        w_hh: Param<T>,
        b_ih: Param<T>,
        b_hh: Param<T>,
    },
}

/// What a layer keeps from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Input(Tensor<T>),
    Dims(Vec<usize>),
    Argmax {
        index: Vec<usize>,
        in_dims: Vec<usize>,
    },
    BatchNorm {
        x_hat: Vec<T>,
        inv_std: Vec<T>,
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
        count: usize,
        train: bool,
        dims: Vec<usize>,
    },
    Gru {
        input: Tensor<T>,
        h_prev: Vec<Vec<T>>,
        r: Vec<Vec<T>>,
        z: Vec<Vec<T>>,
        n: Vec<Vec<T>>,
        hn: Vec<Vec<T>>,
    },
}

fn kaiming<T: Scalar>(name: String, dims: Vec<usize>, fan_in: usize, seed: u64) -> Param<T> {
    let mut rng = Rng::new(derive_seed(seed, &["init", name.as_str()]));
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut p = Param::zeros(name, dims);
    for v in &mut p.value {
        *v = T::of((2.0 * rng.next_f64() - 1.0) * bound);
    }
    p
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Layer<T> {
    pub fn linear(name: &str, inputs: usize, outputs: usize, seed: u64) -> Self {
        Layer::Linear {
            w: kaiming(format!("{name}.weight"), vec![outputs, inputs], inputs, seed),
            b: Param::zeros(format!("{name}.bias"), vec![outputs]),
        }
    }

    pub fn conv2d(name: &str, cin: usize, cout: usize, seed: u64) -> Self {
        Layer::Conv2d {
            w: kaiming(format!("{name}.weight"), vec![cout, cin, 3, 3], cin * 9, seed),
            b: Param::zeros(format!("{name}.bias"), vec![cout]),
        }
    }

    pub fn batch_norm(name: &str, channels: usize) -> Self {
        Layer::BatchNorm {
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], T::one()),
            beta: Param::zeros(format!("{name}.beta"), vec![channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn frame_linear(name: &str, inputs: usize, outputs: usize, seed: u64) -> Self {
        match Self::linear(name, inputs, outputs, seed) {
            Layer::Linear { w, b } => Layer::FrameLinear { w, b },
            _ => unreachable!(),
        }
    }

    pub fn gru(name: &str, inputs: usize, hidden: usize, seed: u64) -> Self {
        Layer::Gru {
            w_ih: kaiming(format!("{name}.w_ih"), vec![3 * hidden, inputs], inputs, seed),
            w_hh: kaiming(format!("{name}.w_hh"), vec![3 * hidden, hidden], hidden, seed),
            b_ih: Param::zeros(format!("{name}.b_ih"), vec![3 * hidden]),
            b_hh: Param::zeros(format!("{name}.b_hh"), vec![3 * hidden]),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Layer::Linear { w, .. } => format!("linear {}->{}", w.dims[1], w.dims[0]),
            Layer::Conv2d { w, .. } => format!("conv2d {}->{}", w.dims[1], w.dims[0]),
            Layer::BatchNorm { gamma, .. } => format!("batch_norm {}", gamma.len()),
            Layer::Relu => "relu".into(),
            Layer::MaxPool2 => "max_pool2".into(),
            Layer::GlobalPool => "global_pool".into(),
            Layer::AddChannel => "add_channel".into(),
            Layer::FrameLinear { w, .. } => format!("frame_linear {}->{}", w.dims[1], w.dims[0]),
            Layer::TimeMeanPool => "time_mean_pool".into(),
            Layer::Gru { w_hh, w_ih, .. } => format!("gru {}->{}", w_ih.dims[1], w_hh.dims[1]),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Linear { w, b } | Layer::Conv2d { w, b } | Layer::FrameLinear { w, b } => vec![w, b],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            Layer::Gru { w_ih, w_hh, b_ih, b_hh } => vec![w_ih, w_hh, b_ih, b_hh],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Linear { w, b } | Layer::Conv2d { w, b } | Layer::FrameLinear { w, b } => vec![w, b],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            Layer::Gru { w_ih, w_hh, b_ih, b_hh } => vec![w_ih, w_hh, b_ih, b_hh],
            _ => Vec::new(),
        }
    }

    /// Output dims for input dims (batch axis included).
    pub fn output_dims(&self, dims: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| Err(Error::Shape(format!("{} expects {what}, got {dims:?}", self.describe())));
        match self {
            Layer::Linear { w, .. } => match dims {
                [b, d] if *d == w.dims[1] => Ok(vec![*b, w.dims[0]]),
                _ => bad(&format!("[B, {}]", w.dims[1])),
            },
            Layer::Conv2d { w, .. } => match dims {
                [b, c, h, wd] if *c == w.dims[1] => Ok(vec![*b, w.dims[0], *h, *wd]),
                _ => bad(&format!("[B, {}, H, W]", w.dims[1])),
            },
            Layer::BatchNorm { gamma, .. } => {
                if dims.len() >= 2 && dims[1] == gamma.len() {
                    Ok(dims.to_vec())
                } else {
                    bad(&format!("[B, {}, ...]", gamma.len()))
                }
            }
            Layer::Relu => Ok(dims.to_vec()),
            Layer::MaxPool2 => match dims {
                [b, c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*b, *c, h / 2, w / 2]),
                _ => bad("[B, C, H >= 2, W >= 2]"),
            },
            Layer::GlobalPool => {
                if dims.len() >= 3 {
                    Ok(dims[..2].to_vec())
                } else {
                    bad("[B, C, ...]")
                }
            }
            Layer::AddChannel => match dims {
                [b, h, w] => Ok(vec![*b, 1, *h, *w]),
                _ => bad("[B, H, W]"),
            },
            Layer::FrameLinear { w, .. } => match dims {
                [b, d, t] if *d == w.dims[1] => Ok(vec![*b, w.dims[0], *t]),
                _ => bad(&format!("[B, {}, T]", w.dims[1])),
            },
            Layer::TimeMeanPool => match dims {
                [b, d, _] => Ok(vec![*b, *d]),
                _ => bad("[B, D, T]"),
            },
            Layer::Gru { w_ih, w_hh, .. } => match dims {
                [b, d, _] if *d == w_ih.dims[1] => Ok(vec![*b, w_hh.dims[1]]),
                _ => bad(&format!("[B, {}, T]", w_ih.dims[1])),
            },
        }
    }

    /// Forward pass. Batch statistics are used when `train` is set and the
    /// layer is batch-norm; running statistics otherwise.
    pub fn forward(&self, x: Tensor<T>, train: bool) -> Result<(Tensor<T>, Cache<T>)> {
        let out_dims = self.output_dims(&x.dims)?;
        match self {
            Layer::Linear { w, b } => {
                let (o, i) = (w.dims[0], w.dims[1]);
                let mut y = Tensor::zeros(out_dims);
                for bi in 0..x.batch() {
                    let xb = x.item(bi);
                    for oo in 0..o {
                        let row = &w.value[oo * i..(oo + 1) * i];
                        let mut s = b.value[oo];
                        for k in 0..i {
                            s += row[k] * xb[k];
                        }
                        y.data[bi * o + oo] = s;
                    }
                }
                Ok((y, Cache::Input(x)))
            }
            Layer::Conv2d { w, b } => {
                let (cout, cin) = (w.dims[0], w.dims[1]);
                let (h, wd) = (x.dims[2], x.dims[3]);
                let plane = h * wd;
                let mut y = Tensor::zeros(out_dims);
                for bi in 0..x.dims[0] {
                    for co in 0..cout {
                        let out = &mut y.data[(bi * cout + co) * plane..(bi * cout + co + 1) * plane];
                        out.fill(b.value[co]);
                        for ci in 0..cin {
                            let inp = &x.data[(bi * cin + ci) * plane..(bi * cin + ci + 1) * plane];
                            for kh in 0..3 {
                                for kw in 0..3 {
                                    let wv = w.value[((co * cin + ci) * 3 + kh) * 3 + kw];
                                    let (r0, r1) = (1usize.saturating_sub(kh), (h + 1 - kh).min(h));
                                    let (c0, c1) = (1usize.saturating_sub(kw), (wd + 1 - kw).min(wd));
                                    for r in r0..r1 {
                                        let src = (r + kh - 1) * wd;
                                        let dst = r * wd;
                                        for c in c0..c1 {
                                            out[dst + c] += wv * inp[src + c + kw - 1];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((y, Cache::Input(x)))
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                let (bsz, ch) = (x.dims[0], x.dims[1]);
                let s = x.len() / (bsz * ch);
                let count = bsz * s;
                let idx = |b: usize, c: usize, k: usize| (b * ch + c) * s + k;
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                if train {
                    for c in 0..ch {
                        let mut sum = T::zero();
                        for b in 0..bsz {
                            for k in 0..s {
                                sum += x.data[idx(b, c, k)];
                            }
                        }
                        mean[c] = sum / T::of(count as f64);
                        let mut sq = T::zero();
                        for b in 0..bsz {
                            for k in 0..s {
                                let d = x.data[idx(b, c, k)] - mean[c];
                                sq += d * d;
                            }
                        }
                        var[c] = sq / T::of(count as f64);
                    }
                } else {
                    mean.clone_from(running_mean);
                    var.clone_from(running_var);
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(BN_EPS)).sqrt()).collect();
                let mut x_hat = vec![T::zero(); x.len()];
                let mut y = Tensor::zeros(out_dims);
                for b in 0..bsz {
                    for c in 0..ch {
                        for k in 0..s {
                            let i = idx(b, c, k);
                            x_hat[i] = (x.data[i] - mean[c]) * inv_std[c];
                            y.data[i] = gamma.value[c] * x_hat[i] + beta.value[c];
                        }
                    }
                }
                Ok((
                    y,
                    Cache::BatchNorm {
                        x_hat,
                        inv_std,
                        batch_mean: mean,
                        batch_var: var,
                        count,
                        train,
                        dims: x.dims,
                    },
                ))
            }
            Layer::Relu => {
                let data = x.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
                Ok((Tensor { dims: out_dims, data }, Cache::Input(x)))
            }
            Layer::MaxPool2 => {
                let (h, w) = (x.dims[2], x.dims[3]);
                let (oh, ow) = (out_dims[2], out_dims[3]);
                let planes = x.dims[0] * x.dims[1];
                let mut y = Tensor::zeros(out_dims.clone());
                let mut index = Vec::with_capacity(y.len());
                for p in 0..planes {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut best = p * h * w + 2 * r * w + 2 * c;
                            for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                                let i = p * h * w + (2 * r + dr) * w + 2 * c + dc;
                                if x.data[i] > x.data[best] {
                                    best = i;
                                }
                            }
                            y.data[(p * oh + r) * ow + c] = x.data[best];
                            index.push(best);
                        }
                    }
                }
                Ok((y, Cache::Argmax { index, in_dims: x.dims }))
            }
            Layer::GlobalPool => {
                let planes = x.dims[0] * x.dims[1];
                let s = x.len() / planes;
                let mut y = Tensor::zeros(out_dims);
                let mut index = Vec::with_capacity(planes);
                for p in 0..planes {
                    let vals = &x.data[p * s..(p + 1) * s];
                    let mut best = 0;
                    let mut sum = T::zero();
                    for (k, &v) in vals.iter().enumerate() {
                        sum += v;
                        if v > vals[best] {
                            best = k;
                        }
                    }
                    y.data[p] = sum / T::of(s as f64) + vals[best];
                    index.push(p * s + best);
                }
                Ok((y, Cache::Argmax { index, in_dims: x.dims }))
            }
            Layer::AddChannel => {
                let dims = x.dims.clone();
                Ok((x.reshape(out_dims)?, Cache::Dims(dims)))
            }
            Layer::FrameLinear { w, b } => {
                let (o, d) = (w.dims[0], w.dims[1]);
                let t = x.dims[2];
                let mut y = Tensor::zeros(out_dims);
                for bi in 0..x.dims[0] {
                    let xb = x.item(bi);
                    let yb = &mut y.data[bi * o * t..(bi + 1) * o * t];
                    for oo in 0..o {
                        let out = &mut yb[oo * t..(oo + 1) * t];
                        out.fill(b.value[oo]);
                        for k in 0..d {
                            let wv = w.value[oo * d + k];
                            let row = &xb[k * t..(k + 1) * t];
                            for j in 0..t {
                                out[j] += wv * row[j];
                            }
                        }
                    }
                }
                Ok((y, Cache::Input(x)))
            }
            Layer::TimeMeanPool => {
                let t = x.dims[2];
                let data = x
                    .data
                    .chunks(t)
                    .map(|row| row.iter().copied().sum::<T>() / T::of(t as f64))
                    .collect();
                let dims = x.dims.clone();
                Ok((Tensor { dims: out_dims, data }, Cache::Dims(dims)))
            }
            Layer::Gru { w_ih, w_hh, b_ih, b_hh } => {
                let (bsz, d, t) = (x.dims[0], x.dims[1], x.dims[2]);
                let hd = w_hh.dims[1];
                let mut h = vec![T::zero(); bsz * hd];
                let (mut hs, mut rs, mut zs, mut ns, mut hns) = (vec![], vec![], vec![], vec![], vec![]);
                let mut gi = vec![T::zero(); 3 * hd];
                let mut gh = vec![T::zero(); 3 * hd];
                for step in 0..t {
                    let mut r = vec![T::zero(); bsz * hd];
                    let mut z = vec![T::zero(); bsz * hd];
                    let mut n = vec![T::zero(); bsz * hd];
                    let mut hn = vec![T::zero(); bsz * hd];
                    let mut h_next = vec![T::zero(); bsz * hd];
                    for b in 0..bsz {
                        let xb = x.item(b);
                        let hb = &h[b * hd..(b + 1) * hd];
                        for g in 0..3 * hd {
                            let mut s = b_ih.value[g];
                            for k in 0..d {
                                s += w_ih.value[g * d + k] * xb[k * t + step];
                            }
                            gi[g] = s;
                            let mut s = b_hh.value[g];
                            for k in 0..hd {
                                s += w_hh.value[g * hd + k] * hb[k];
                            }
                            gh[g] = s;
                        }
                        for j in 0..hd {
                            let i = b * hd + j;
                            r[i] = sigmoid(gi[j] + gh[j]);
                            z[i] = sigmoid(gi[hd + j] + gh[hd + j]);
                            hn[i] = gh[2 * hd + j];
                            n[i] = (gi[2 * hd + j] + r[i] * hn[i]).tanh();
                            h_next[i] = (T::one() - z[i]) * n[i] + z[i] * hb[j];
                        }
                    }
                    hs.push(std::mem::replace(&mut h, h_next));
                    rs.push(r);
                    zs.push(z);
                    ns.push(n);
                    hns.push(hn);
                }
                Ok((
                    Tensor { dims: out_dims, data: h },
                    Cache::Gru {
                        input: x,
                        h_prev: hs,
                        r: rs,
                        z: zs,
                        n: ns,
                        hn: hns,
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &Cache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match (self, cache) {
            (Layer::Linear { w, b }, Cache::Input(x)) => {
                let (o, i) = (w.dims[0], w.dims[1]);
                let mut dx = Tensor::zeros(x.dims.clone());
                for bi in 0..x.batch() {
                    let xb = x.item(bi);
                    for oo in 0..o {
                        let g = dy.data[bi * o + oo];
                        b.grad[oo] += g;
                        for k in 0..i {
                            w.grad[oo * i + k] += g * xb[k];
                            dx.data[bi * i + k] += g * w.value[oo * i + k];
                        }
                    }
                }
                Ok(dx)
            }
            (Layer::Conv2d { w, b }, Cache::Input(x)) => {
                let (cout, cin) = (w.dims[0], w.dims[1]);
                let (h, wd) = (x.dims[2], x.dims[3]);
                let plane = h * wd;
                let mut dx = Tensor::zeros(x.dims.clone());
                for bi in 0..x.dims[0] {
                    for co in 0..cout {
                        let g = &dy.data[(bi * cout + co) * plane..(bi * cout + co + 1) * plane];
                        b.grad[co] += g.iter().copied().sum::<T>();
                        for ci in 0..cin {
                            let base = (bi * cin + ci) * plane;
                            for kh in 0..3 {
                                for kw in 0..3 {
                                    let wi = ((co * cin + ci) * 3 + kh) * 3 + kw;
                                    let wv = w.value[wi];
                                    let (r0, r1) = (1usize.saturating_sub(kh), (h + 1 - kh).min(h));
                                    let (c0, c1) = (1usize.saturating_sub(kw), (wd + 1 - kw).min(wd));
                                    let mut acc = T::zero();
                                    for r in r0..r1 {
                                        let src = base + (r + kh - 1) * wd;
                                        for c in c0..c1 {
                                            let gv = g[r * wd + c];
                                            let si = src + c + kw - 1;
                                            acc += gv * x.data[si];
                                            dx.data[si] += gv * wv;
                                        }
                                    }
                                    w.grad[wi] += acc;
                                }
                            }
                        }
                    }
                }
                Ok(dx)
            }
            (
                Layer::BatchNorm { gamma, beta, .. },
                Cache::BatchNorm {
                    x_hat,
                    inv_std,
                    count,
                    train,
                    dims,
                    ..
                },
            ) => {
                let (bsz, ch) = (dims[0], dims[1]);
                let s = x_hat.len() / (bsz * ch);
                let idx = |b: usize, c: usize, k: usize| (b * ch + c) * s + k;
                let mut dx = Tensor::zeros(dims.clone());
                let n = T::of(*count as f64);
                for c in 0..ch {
                    let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
                    for b in 0..bsz {
                        for k in 0..s {
                            let i = idx(b, c, k);
                            sum_dy += dy.data[i];
                            sum_dy_xhat += dy.data[i] * x_hat[i];
                        }
                    }
                    gamma.grad[c] += sum_dy_xhat;
                    beta.grad[c] += sum_dy;
                    let g = gamma.value[c];
                    for b in 0..bsz {
                        for k in 0..s {
                            let i = idx(b, c, k);
                            dx.data[i] = if *train {
                                g * inv_std[c] / n * (n * dy.data[i] - sum_dy - x_hat[i] * sum_dy_xhat)
                            } else {
                                g * inv_std[c] * dy.data[i]
                            };
                        }
                    }
                }
                Ok(dx)
            }
            (Layer::Relu, Cache::Input(x)) => {
                let data = x
                    .data
                    .iter()
                    .zip(&dy.data)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                Ok(Tensor { dims: x.dims.clone(), data })
            }
            (Layer::MaxPool2, Cache::Argmax { index, in_dims }) => {
                let mut dx = Tensor::zeros(in_dims.clone());
                for (&i, &g) in index.iter().zip(&dy.data) {
                    dx.data[i] += g;
                }
                Ok(dx)
            }
            (Layer::GlobalPool, Cache::Argmax { index, in_dims }) => {
                let planes = in_dims[0] * in_dims[1];
                let mut dx = Tensor::zeros(in_dims.clone());
                let s = dx.len() / planes;
                let inv = T::one() / T::of(s as f64);
                for p in 0..planes {
                    let g = dy.data[p];
                    for v in &mut dx.data[p * s..(p + 1) * s] {
                        *v = g * inv;
                    }
                    dx.data[index[p]] += g;
                }
                Ok(dx)
            }
            (Layer::AddChannel, Cache::Dims(dims)) => dy.clone().reshape(dims.clone()),
            (Layer::FrameLinear { w, b }, Cache::Input(x)) => {
                let (o, d) = (w.dims[0], w.dims[1]);
                let t = x.dims[2];
                let mut dx = Tensor::zeros(x.dims.clone());
                for bi in 0..x.dims[0] {
                    let xb = x.item(bi);
                    let gb = dy.item(bi);
                    for oo in 0..o {
                        let g = &gb[oo * t..(oo + 1) * t];
                        b.grad[oo] += g.iter().copied().sum::<T>();
                        for k in 0..d {
                            let row = &xb[k * t..(k + 1) * t];
                            let mut acc = T::zero();
                            for j in 0..t {
                                acc += g[j] * row[j];
                            }
                            w.grad[oo * d + k] += acc;
                            let wv = w.value[oo * d + k];
                            let dxr = &mut dx.data[(bi * d + k) * t..(bi * d + k + 1) * t];
                            for j in 0..t {
                                dxr[j] += g[j] * wv;
                            }
                        }
                    }
                }
                Ok(dx)
            }
            (Layer::TimeMeanPool, Cache::Dims(dims)) => {
                let t = dims[2];
                let inv = T::one() / T::of(t as f64);
                let data = dy.data.iter().flat_map(|&g| std::iter::repeat_n(g * inv, t)).collect();
                Ok(Tensor { dims: dims.clone(), data })
            }
            (
                Layer::Gru { w_ih, w_hh, b_ih, b_hh },
                Cache::Gru {
                    input,
                    h_prev,
                    r,
                    z,
                    n,
                    hn,
                },
            ) => {
                let (bsz, d, t) = (input.dims[0], input.dims[1], input.dims[2]);
                let hd = w_hh.dims[1];
                let mut dx = Tensor::zeros(input.dims.clone());
                let mut dh = dy.data.clone();
                let mut gi = vec![T::zero(); 3 * hd];
                let mut gh = vec![T::zero(); 3 * hd];
                for step in (0..t).rev() {
                    let mut dh_prev = vec![T::zero(); bsz * hd];
                    for b in 0..bsz {
                        let xb = input.item(b);
                        let hb = &h_prev[step][b * hd..(b + 1) * hd];
                        for j in 0..hd {
                            let i = b * hd + j;
                            let (rv, zv, nv, hnv) = (r[step][i], z[step][i], n[step][i], hn[step][i]);
                            let g = dh[i];
                            let dn = g * (T::one() - zv);
                            let dz = g * (hb[j] - nv);
                            dh_prev[i] += g * zv;
                            let da_n = dn * (T::one() - nv * nv);
                            let dr = da_n * hnv;
                            let da_r = dr * rv * (T::one() - rv);
                            let da_z = dz * zv * (T::one() - zv);
                            gi[j] = da_r;
                            gi[hd + j] = da_z;
                            gi[2 * hd + j] = da_n;
                            gh[j] = da_r;
                            gh[hd + j] = da_z;
                            gh[2 * hd + j] = da_n * rv;
                        }
                        for gate in 0..3 * hd {
                            let (a, c) = (gi[gate], gh[gate]);
                            b_ih.grad[gate] += a;
                            b_hh.grad[gate] += c;
                            for k in 0..d {
                                let xi = k * t + step;
                                w_ih.grad[gate * d + k] += a * xb[xi];
                                dx.data[b * d * t + xi] += a * w_ih.value[gate * d + k];
                            }
                            for k in 0..hd {
                                w_hh.grad[gate * hd + k] += c * hb[k];
                                dh_prev[b * hd + k] += c * w_hh.value[gate * hd + k];
                            }
                        }
                    }
                    dh = dh_prev;
                }
                Ok(dx)
            }
            (layer, _) => Err(Error::InvalidArgument(format!(
                "cache does not belong to layer {}",
                layer.describe()
            ))),
        }
    }
}
