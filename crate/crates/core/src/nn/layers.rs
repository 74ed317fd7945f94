//! Layer kernels: forward and backward for every graph operation.

use rand::Rng as _;

use super::tensor::{gemm, Shape, Tensor};
use crate::seeding::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Weight,
    /// Running statistic (batch-norm mean/variance); persisted but not optimized.
    Statistic,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub frozen: bool,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: &'static str, shape: Vec<usize>, kind: ParamKind) -> Self {
        Param {
            name,
            shape,
            kind,
            frozen: false,
            value: Vec::new(),
            grad: Vec::new(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_allocated(&self) -> bool {
        self.value.len() == self.numel()
    }

    pub fn trainable(&self) -> bool {
        self.kind == ParamKind::Weight && !self.frozen
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f32] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output side `ceil(in / stride)`, extra padding at the bottom/right.
    Same,
    Explicit(usize),
}

impl Padding {
    /// Returns (output size, leading pad) along one axis.
    pub fn resolve(self, input: usize, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        match self {
            Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
            Padding::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(input);
                (out > 0).then_some((out, total / 2))
            }
            Padding::Explicit(p) => {
                let padded = input + 2 * p;
                (padded >= kernel).then(|| ((padded - kernel) / stride + 1, p))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
    /// Depthwise when true: one filter per input channel, `out_c == in_c`.
    pub depthwise: bool,
    pub weight: Param,
    pub bias: Option<Param>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub eps: f32,
    pub momentum: f32,
    pub gamma: Option<Param>,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, Copy)]
pub struct Pool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Dense(Dense),
    Relu,
    Sigmoid,
    Swish,
    MaxPool(Pool),
    AvgPool(Pool),
    GlobalAvgPool,
    /// Average pooling to a fixed output grid with window edges
    /// `floor(i * in / out)` and `ceil((i + 1) * in / out)`.
    AdaptiveAvgPool(usize, usize),
    Flatten,
    Add,
    Concat,
    /// `inputs[0] * inputs[1]` where the second input is `(n, c, 1, 1)`.
    ChannelScale,
    Dropout(f32),
    /// Per-sample residual-branch dropout.
    DropPath(f32),
}

impl Op {
    pub fn params(&self) -> Vec<&Param> {
        match self {
            Op::Conv(c) => std::iter::once(&c.weight).chain(c.bias.as_ref()).collect(),
            Op::BatchNorm(b) => b
                .gamma
                .iter()
                .chain([&b.beta, &b.running_mean, &b.running_var])
                .collect(),
            Op::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Op::Conv(c) => std::iter::once(&mut c.weight).chain(c.bias.as_mut()).collect(),
            Op::BatchNorm(b) => b
                .gamma
                .iter_mut()
                .chain([&mut b.beta, &mut b.running_mean, &mut b.running_var])
                .collect(),
            Op::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv(c) if c.depthwise => "depthwise_conv",
            Op::Conv(_) => "conv",
            Op::BatchNorm(_) => "batch_norm",
            Op::Dense(_) => "dense",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Swish => "swish",
            Op::MaxPool(_) => "max_pool",
            Op::AvgPool(_) => "avg_pool",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::AdaptiveAvgPool(..) => "adaptive_avg_pool",
            Op::Flatten => "flatten",
            Op::Add => "add",
            Op::Concat => "concat",
            Op::ChannelScale => "channel_scale",
            Op::Dropout(_) => "dropout",
            Op::DropPath(_) => "drop_path",
        }
    }
}

/// Per-node state recorded during a training forward pass.
#[derive(Debug, Default)]
pub(crate) enum Cache {
    #[default]
    None,
    BatchNorm {
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    MaxPool {
        argmax: Vec<u32>,
    },
    Mask(Vec<f32>),
}

// ---------------------------------------------------------------- conv

fn out_dims(conv: &Conv2d, s: Shape) -> ((usize, usize), (usize, usize)) {
    let (oh, pt) = conv
        .padding
        .resolve(s.h, conv.kernel.0, conv.stride)
        .expect("shape validated at build time");
    let (ow, pl) = conv
        .padding
        .resolve(s.w, conv.kernel.1, conv.stride)
        .expect("shape validated at build time");
    ((oh, ow), (pt, pl))
}

fn is_pointwise(conv: &Conv2d) -> bool {
    conv.kernel == (1, 1) && conv.stride == 1 && !conv.depthwise
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], c: usize, h: usize, w: usize, conv: &Conv2d, oh: usize, ow: usize, pt: usize, pl: usize, col: &mut [f32]) {
    let (kh, kw) = conv.kernel;
    let s = conv.stride;
    let plane = oh * ow;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * s + i) as isize - pt as isize;
                    let d = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        d.fill(0.0);
                        continue;
                    }
                    let xr = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in d.iter_mut().enumerate() {
                        let ix = (ox * s + j) as isize - pl as isize;
                        *v = if ix >= 0 && ix < w as isize { xr[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f32], c: usize, h: usize, w: usize, conv: &Conv2d, oh: usize, ow: usize, pt: usize, pl: usize, dx: &mut [f32]) {
    let (kh, kw) = conv.kernel;
    let s = conv.stride;
    let plane = oh * ow;
    for ci in 0..c {
        let dxc = &mut dx[ci * h * w..(ci + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * s + i) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * s + j) as isize - pl as isize;
                        if ix >= 0 && ix < w as isize {
                            dxc[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_output_shape(conv: &Conv2d, s: Shape) -> Option<Shape> {
    let (oh, _) = conv.padding.resolve(s.h, conv.kernel.0, conv.stride)?;
    let (ow, _) = conv.padding.resolve(s.w, conv.kernel.1, conv.stride)?;
    Some(Shape::new(s.n, conv.out_c, oh, ow))
}

pub(crate) fn conv_forward(conv: &Conv2d, x: &Tensor) -> Tensor {
    if conv.depthwise {
        return depthwise_forward(conv, x);
    }
    let s = x.shape;
    let ((oh, ow), (pt, pl)) = out_dims(conv, s);
    let plane = oh * ow;
    let k = s.c * conv.kernel.0 * conv.kernel.1;
    let mut out = Tensor::zeros(Shape::new(s.n, conv.out_c, oh, ow));
    let mut col = if is_pointwise(conv) { Vec::new() } else { vec![0.0; k * plane] };
    for n in 0..s.n {
        let xs = x.sample(n);
        let b: &[f32] = if is_pointwise(conv) {
            xs
        } else {
            im2col(xs, s.c, s.h, s.w, conv, oh, ow, pt, pl, &mut col);
            &col
        };
        let ys = out.sample_mut(n);
        gemm(conv.out_c, k, plane, &conv.weight.value, false, b, false, ys, 0.0);
        if let Some(bias) = &conv.bias {
            for (co, bv) in bias.value.iter().enumerate() {
                ys[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Accumulates parameter gradients and returns the input gradient when
/// `need_dx` is set.
pub(crate) fn conv_backward(conv: &mut Conv2d, x: &Tensor, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
    if conv.depthwise {
        return depthwise_backward(conv, x, dy, need_dx);
    }
    let s = x.shape;
    let ((oh, ow), (pt, pl)) = out_dims(conv, s);
    let plane = oh * ow;
    let k = s.c * conv.kernel.0 * conv.kernel.1;
    let pointwise = is_pointwise(conv);
    let train_w = conv.weight.trainable();
    let mut dx = need_dx.then(|| Tensor::zeros(s));
    let mut col = if pointwise { Vec::new() } else { vec![0.0; k * plane] };
    let mut dcol = if pointwise || !need_dx { Vec::new() } else { vec![0.0; k * plane] };

    if let Some(bias) = conv.bias.as_mut().filter(|b| b.trainable()) {
        let g = bias.grad_mut();
        for n in 0..s.n {
            let dys = dy.sample(n);
            for (co, gv) in g.iter_mut().enumerate() {
                *gv += dys[co * plane..(co + 1) * plane].iter().sum::<f32>();
            }
        }
    }
    for n in 0..s.n {
        let dys = dy.sample(n);
        if train_w {
            let xs = x.sample(n);
            let b: &[f32] = if pointwise {
                xs
            } else {
                im2col(xs, s.c, s.h, s.w, conv, oh, ow, pt, pl, &mut col);
                &col
            };
            let gw = conv.weight.grad_mut();
            gemm(conv.out_c, plane, k, dys, false, b, true, gw, 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = dx.sample_mut(n);
            if pointwise {
                gemm(k, conv.out_c, plane, &conv.weight.value, true, dys, false, dxs, 0.0);
            } else {
                gemm(k, conv.out_c, plane, &conv.weight.value, true, dys, false, &mut dcol, 0.0);
                col2im(&dcol, s.c, s.h, s.w, conv, oh, ow, pt, pl, dxs);
            }
        }
    }
    dx
}

fn depthwise_forward(conv: &Conv2d, x: &Tensor) -> Tensor {
    let s = x.shape;
    let ((oh, ow), (pt, pl)) = out_dims(conv, s);
    let (kh, kw) = conv.kernel;
    let st = conv.stride;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let xc = &x.data[(n * s.c + c) * s.h * s.w..][..s.h * s.w];
            let wc = &conv.weight.value[c * kh * kw..(c + 1) * kh * kw];
            let b = conv.bias.as_ref().map_or(0.0, |b| b.value[c]);
            let yc = &mut out.data[(n * s.c + c) * oh * ow..][..oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    for i in 0..kh {
                        let iy = (oy * st + i) as isize - pt as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let xr = &xc[iy as usize * s.w..];
                        for j in 0..kw {
                            let ix = (ox * st + j) as isize - pl as isize;
                            if ix >= 0 && ix < s.w as isize {
                                acc += wc[i * kw + j] * xr[ix as usize];
                            }
                        }
                    }
                    yc[oy * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn depthwise_backward(conv: &mut Conv2d, x: &Tensor, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
    let s = x.shape;
    let ((oh, ow), (pt, pl)) = out_dims(conv, s);
    let (kh, kw) = conv.kernel;
    let st = conv.stride;
    let train_w = conv.weight.trainable();
    let mut dx = need_dx.then(|| Tensor::zeros(s));
    let mut gw = vec![0.0f32; conv.weight.numel()];
    let mut gb = vec![0.0f32; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let off = (n * s.c + c) * s.h * s.w;
            let xc = &x.data[off..off + s.h * s.w];
            let wc = &conv.weight.value[c * kh * kw..(c + 1) * kh * kw];
            let dyc = &dy.data[(n * s.c + c) * oh * ow..][..oh * ow];
            gb[c] += dyc.iter().sum::<f32>();
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dyc[oy * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..kh {
                        let iy = (oy * st + i) as isize - pt as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for j in 0..kw {
                            let ix = (ox * st + j) as isize - pl as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let xi = iy as usize * s.w + ix as usize;
                            if train_w {
                                gw[c * kh * kw + i * kw + j] += g * xc[xi];
                            }
                            if let Some(dx) = dx.as_mut() {
                                dx.data[off + xi] += g * wc[i * kw + j];
                            }
                        }
                    }
                }
            }
        }
    }
    if train_w {
        conv.weight.grad_mut().iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
    }
    if let Some(bias) = conv.bias.as_mut().filter(|b| b.trainable()) {
        bias.grad_mut().iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
    }
    dx
}

// ---------------------------------------------------------------- batch norm

pub(crate) fn bn_forward_eval(bn: &BatchNorm, x: &Tensor) -> Tensor {
    let s = x.shape;
    let plane = s.plane();
    let mut out = x.clone();
    for c in 0..s.c {
        let inv = 1.0 / (bn.running_var.value[c] + bn.eps).sqrt();
        let g = bn.gamma.as_ref().map_or(1.0, |g| g.value[c]);
        let scale = g * inv;
        let shift = bn.beta.value[c] - bn.running_mean.value[c] * scale;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            out.data[off..off + plane].iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    out
}

pub(crate) fn bn_forward_train(bn: &mut BatchNorm, x: &Tensor) -> (Tensor, Cache) {
    let s = x.shape;
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut out = Tensor::zeros(s);
    let mut xhat = vec![0.0f32; s.len()];
    let mut inv_std = vec![0.0f32; s.c];
    for c in 0..s.c {
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for n in 0..s.n {
            for &v in &x.data[(n * s.c + c) * plane..][..plane] {
                sum += v as f64;
                sq += (v as f64) * (v as f64);
            }
        }
        let mean = sum / count;
        let var = (sq / count - mean * mean).max(0.0);
        let inv = 1.0 / (var + bn.eps as f64).sqrt();
        inv_std[c] = inv as f32;
        let g = bn.gamma.as_ref().map_or(1.0, |g| g.value[c]);
        let b = bn.beta.value[c];
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            for i in off..off + plane {
                let xh = ((x.data[i] as f64 - mean) * inv) as f32;
                xhat[i] = xh;
                out.data[i] = g * xh + b;
            }
        }
        let m = bn.momentum;
        let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
        bn.running_mean.value[c] = (1.0 - m) * bn.running_mean.value[c] + m * mean as f32;
        bn.running_var.value[c] = (1.0 - m) * bn.running_var.value[c] + m * unbiased as f32;
    }
    (out, Cache::BatchNorm { xhat, inv_std })
}

pub(crate) fn bn_backward(bn: &mut BatchNorm, cache: &Cache, dy: &Tensor) -> Tensor {
    let Cache::BatchNorm { xhat, inv_std } = cache else {
        unreachable!("batch norm backward without its cache")
    };
    let s = dy.shape;
    let plane = s.plane();
    let count = (s.n * plane) as f32;
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![0.0f32; s.c];
    let mut dbeta = vec![0.0f32; s.c];
    for c in 0..s.c {
        let g = bn.gamma.as_ref().map_or(1.0, |g| g.value[c]);
        let mut sum_dy = 0.0f32;
        let mut sum_dy_xhat = 0.0f32;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            for i in off..off + plane {
                sum_dy += dy.data[i];
                sum_dy_xhat += dy.data[i] * xhat[i];
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let k = g * inv_std[c] / count;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            for i in off..off + plane {
                dx.data[i] = k * (count * dy.data[i] - sum_dy - xhat[i] * sum_dy_xhat);
            }
        }
    }
    if let Some(gamma) = bn.gamma.as_mut().filter(|g| g.trainable()) {
        gamma.grad_mut().iter_mut().zip(&dgamma).for_each(|(a, b)| *a += b);
    }
    if bn.beta.trainable() {
        bn.beta.grad_mut().iter_mut().zip(&dbeta).for_each(|(a, b)| *a += b);
    }
    dx
}

// ---------------------------------------------------------------- dense

pub(crate) fn dense_forward(d: &Dense, x: &Tensor) -> Tensor {
    let n = x.shape.n;
    let mut out = Tensor::zeros(Shape::new(n, d.out_f, 1, 1));
    for i in 0..n {
        out.data[i * d.out_f..(i + 1) * d.out_f].copy_from_slice(&d.bias.value);
    }
    gemm(n, d.in_f, d.out_f, &x.data, false, &d.weight.value, true, &mut out.data, 1.0);
    out
}

pub(crate) fn dense_backward(d: &mut Dense, x: &Tensor, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
    let n = x.shape.n;
    if d.weight.trainable() {
        let g = d.weight.grad_mut();
        gemm(d.out_f, n, d.in_f, &dy.data, true, &x.data, false, g, 1.0);
    }
    if d.bias.trainable() {
        let g = d.bias.grad_mut();
        for i in 0..n {
            for (gv, dv) in g.iter_mut().zip(&dy.data[i * d.out_f..(i + 1) * d.out_f]) {
                *gv += dv;
            }
        }
    }
    need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape);
        gemm(n, d.out_f, d.in_f, &dy.data, false, &d.weight.value, false, &mut dx.data, 0.0);
        dx
    })
}

// ---------------------------------------------------------------- activations

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn activation_forward(op: &Op, x: &Tensor) -> Tensor {
    let f: fn(f32) -> f32 = match op {
        Op::Relu => |v| v.max(0.0),
        Op::Sigmoid => sigmoid,
        Op::Swish => |v| v * sigmoid(v),
        _ => unreachable!("not an activation"),
    };
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

pub(crate) fn activation_backward(op: &Op, x: &Tensor, y: &Tensor, dy: &Tensor) -> Tensor {
    let data = match op {
        Op::Relu => x.data.iter().zip(&dy.data).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
        Op::Sigmoid => y.data.iter().zip(&dy.data).map(|(&s, &g)| g * s * (1.0 - s)).collect(),
        Op::Swish => x
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| {
                let s = sigmoid(v);
                g * (s + v * s * (1.0 - s))
            })
            .collect(),
        _ => unreachable!("not an activation"),
    };
    Tensor { shape: x.shape, data }
}

// ---------------------------------------------------------------- pooling

pub(crate) fn pool_output_shape(p: &Pool, s: Shape) -> Option<Shape> {
    let (oh, _) = p.padding.resolve(s.h, p.kernel, p.stride)?;
    let (ow, _) = p.padding.resolve(s.w, p.kernel, p.stride)?;
    Some(Shape::new(s.n, s.c, oh, ow))
}

pub(crate) fn maxpool_forward(p: &Pool, x: &Tensor, record: bool) -> (Tensor, Cache) {
    let s = x.shape;
    let (oh, pt) = p.padding.resolve(s.h, p.kernel, p.stride).expect("validated");
    let (ow, pl) = p.padding.resolve(s.w, p.kernel, p.stride).expect("validated");
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut argmax = if record { vec![0u32; out.data.len()] } else { Vec::new() };
    for nc in 0..s.n * s.c {
        let xc = &x.data[nc * s.h * s.w..(nc + 1) * s.h * s.w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = 0usize;
                for i in 0..p.kernel {
                    let iy = (oy * p.stride + i) as isize - pt as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for j in 0..p.kernel {
                        let ix = (ox * p.stride + j) as isize - pl as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        let idx = iy as usize * s.w + ix as usize;
                        if xc[idx] > best {
                            best = xc[idx];
                            best_i = idx;
                        }
                    }
                }
                let o = nc * oh * ow + oy * ow + ox;
                out.data[o] = best;
                if record {
                    argmax[o] = best_i as u32;
                }
            }
        }
    }
    let cache = if record { Cache::MaxPool { argmax } } else { Cache::None };
    (out, cache)
}

pub(crate) fn maxpool_backward(x: &Tensor, cache: &Cache, dy: &Tensor) -> Tensor {
    let Cache::MaxPool { argmax } = cache else {
        unreachable!("max pool backward without its cache")
    };
    let s = x.shape;
    let plane_out = dy.shape.plane();
    let mut dx = Tensor::zeros(s);
    for nc in 0..s.n * s.c {
        let base = nc * s.h * s.w;
        for o in 0..plane_out {
            let k = nc * plane_out + o;
            dx.data[base + argmax[k] as usize] += dy.data[k];
        }
    }
    dx
}

/// Average over the in-bounds window; padded positions are not counted.
fn avg_windows(p: &Pool, s: Shape) -> (usize, usize, usize, usize) {
    let (oh, pt) = p.padding.resolve(s.h, p.kernel, p.stride).expect("validated");
    let (ow, pl) = p.padding.resolve(s.w, p.kernel, p.stride).expect("validated");
    (oh, ow, pt, pl)
}

fn window(o: usize, stride: usize, pad: usize, k: usize, len: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + k as isize).min(len as isize)).max(0) as usize;
    (lo, hi)
}

pub(crate) fn avgpool_forward(p: &Pool, x: &Tensor) -> Tensor {
    let s = x.shape;
    let (oh, ow, pt, pl) = avg_windows(p, s);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for nc in 0..s.n * s.c {
        let xc = &x.data[nc * s.h * s.w..(nc + 1) * s.h * s.w];
        for oy in 0..oh {
            let (y0, y1) = window(oy, p.stride, pt, p.kernel, s.h);
            for ox in 0..ow {
                let (x0, x1) = window(ox, p.stride, pl, p.kernel, s.w);
                let mut acc = 0.0;
                for iy in y0..y1 {
                    acc += xc[iy * s.w + x0..iy * s.w + x1].iter().sum::<f32>();
                }
                let cnt = ((y1 - y0) * (x1 - x0)).max(1) as f32;
                out.data[nc * oh * ow + oy * ow + ox] = acc / cnt;
            }
        }
    }
    out
}

pub(crate) fn avgpool_backward(p: &Pool, x: &Tensor, dy: &Tensor) -> Tensor {
    let s = x.shape;
    let (oh, ow, pt, pl) = avg_windows(p, s);
    let mut dx = Tensor::zeros(s);
    for nc in 0..s.n * s.c {
        let dxc = &mut dx.data[nc * s.h * s.w..(nc + 1) * s.h * s.w];
        for oy in 0..oh {
            let (y0, y1) = window(oy, p.stride, pt, p.kernel, s.h);
            for ox in 0..ow {
                let (x0, x1) = window(ox, p.stride, pl, p.kernel, s.w);
                let cnt = ((y1 - y0) * (x1 - x0)).max(1) as f32;
                let g = dy.data[nc * oh * ow + oy * ow + ox] / cnt;
                for iy in y0..y1 {
                    dxc[iy * s.w + x0..iy * s.w + x1].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    dx
}

pub(crate) fn gap_forward(x: &Tensor) -> Tensor {
    let s = x.shape;
    let plane = s.plane() as f32;
    Tensor {
        shape: Shape::new(s.n, s.c, 1, 1),
        data: x.data.chunks(s.plane()).map(|p| p.iter().sum::<f32>() / plane).collect(),
    }
}

pub(crate) fn gap_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let plane = x.shape.plane();
    let mut data = Vec::with_capacity(x.data.len());
    for &g in &dy.data {
        data.extend(std::iter::repeat_n(g / plane as f32, plane));
    }
    Tensor { shape: x.shape, data }
}

fn adaptive_window(o: usize, out: usize, len: usize) -> (usize, usize) {
    (o * len / out, ((o + 1) * len).div_ceil(out))
}

pub(crate) fn adaptive_avgpool_forward(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let s = x.shape;
    if (oh, ow) == (s.h, s.w) {
        return x.clone();
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for nc in 0..s.n * s.c {
        let xc = &x.data[nc * s.h * s.w..(nc + 1) * s.h * s.w];
        for oy in 0..oh {
            let (y0, y1) = adaptive_window(oy, oh, s.h);
            for ox in 0..ow {
                let (x0, x1) = adaptive_window(ox, ow, s.w);
                let mut acc = 0.0;
                for iy in y0..y1 {
                    acc += xc[iy * s.w + x0..iy * s.w + x1].iter().sum::<f32>();
                }
                out.data[nc * oh * ow + oy * ow + ox] = acc / ((y1 - y0) * (x1 - x0)) as f32;
            }
        }
    }
    out
}

pub(crate) fn adaptive_avgpool_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let s = x.shape;
    let (oh, ow) = (dy.shape.h, dy.shape.w);
    if (oh, ow) == (s.h, s.w) {
        return dy.clone();
    }
    let mut dx = Tensor::zeros(s);
    for nc in 0..s.n * s.c {
        let dxc = &mut dx.data[nc * s.h * s.w..(nc + 1) * s.h * s.w];
        for oy in 0..oh {
            let (y0, y1) = adaptive_window(oy, oh, s.h);
            for ox in 0..ow {
                let (x0, x1) = adaptive_window(ox, ow, s.w);
                let g = dy.data[nc * oh * ow + oy * ow + ox] / ((y1 - y0) * (x1 - x0)) as f32;
                for iy in y0..y1 {
                    dxc[iy * s.w + x0..iy * s.w + x1].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------- joins

pub(crate) fn concat_forward(xs: &[&Tensor]) -> Tensor {
    let n = xs[0].shape.n;
    let (h, w) = (xs[0].shape.h, xs[0].shape.w);
    let c: usize = xs.iter().map(|t| t.shape.c).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        for t in xs {
            data.extend_from_slice(t.sample(i));
        }
    }
    Tensor {
        shape: Shape::new(n, c, h, w),
        data,
    }
}

pub(crate) fn concat_backward(xs: &[Shape], dy: &Tensor) -> Vec<Tensor> {
    let mut outs: Vec<Tensor> = xs.iter().map(|&s| Tensor::zeros(s)).collect();
    for i in 0..dy.shape.n {
        let mut off = 0;
        let src = dy.sample(i);
        for t in outs.iter_mut() {
            let len = t.shape.sample_len();
            t.sample_mut(i).copy_from_slice(&src[off..off + len]);
            off += len;
        }
    }
    outs
}

pub(crate) fn channel_scale_forward(x: &Tensor, scale: &Tensor) -> Tensor {
    let plane = x.shape.plane();
    let mut out = x.clone();
    for (chunk, &s) in out.data.chunks_mut(plane).zip(&scale.data) {
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    out
}

pub(crate) fn channel_scale_backward(x: &Tensor, scale: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let plane = x.shape.plane();
    let mut dx = dy.clone();
    let mut ds = Tensor::zeros(scale.shape);
    for (k, ((dxc, xc), &s)) in dx.data.chunks_mut(plane).zip(x.data.chunks(plane)).zip(&scale.data).enumerate() {
        let mut acc = 0.0;
        for (g, &xv) in dxc.iter_mut().zip(xc) {
            acc += *g * xv;
            *g *= s;
        }
        ds.data[k] = acc;
    }
    (dx, ds)
}

// ---------------------------------------------------------------- dropout

pub(crate) fn dropout_mask(rate: f32, len: usize, rng: &mut Rng) -> Vec<f32> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

pub(crate) fn apply_mask(x: &Tensor, mask: &[f32], per: usize) -> Tensor {
    let mut out = x.clone();
    for (chunk, &m) in out.data.chunks_mut(per).zip(mask) {
        chunk.iter_mut().for_each(|v| *v *= m);
    }
    out
}
