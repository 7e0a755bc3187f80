//! A small feed-forward network engine: NHWC tensors, dense, convolution and
//! transposed-convolution layers, ELU activations, reverse-mode gradients and Adam.
//!
//! Parameters live in one flat vector per network; [`Network::param_ranges`] maps
//! each layer to its slice. Weight layouts:
//!
//! - dense: `W[out][in]` followed by `b[out]`
//! - conv and conv-transpose: `W[s][ky][kx][b]` followed by the bias, where `s`
//!   indexes channels on the coarse side (conv output, conv-transpose input) and
//!   `b` the fine side. A conv-transpose with the same array is then the exact
//!   adjoint of the conv.
//!
//! Output sizes: conv `(h + 2p - k) / s + 1`, conv-transpose `(h - 1) s - 2p + k + op`.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Batch of `n` samples of shape `h x w x c`, channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!("{} values for tensor shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn with_sample_shape(mut self, s: [usize; 3]) -> Self {
        self.shape = [self.shape[0], s[0], s[1], s[2]];
        self
    }

    pub fn dot(&self, other: &Tensor4) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu if x <= 0.0 => x.exp_m1(),
            _ => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu if x <= 0.0 => x.exp(),
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Flattens each sample and maps it to `units` values, output shape `1 x 1 x units`.
    Dense { units: usize },
    Conv { filters: usize, kernel: usize, stride: usize, padding: usize },
    ConvTranspose { filters: usize, kernel: usize, stride: usize, padding: usize, output_padding: usize },
    /// Reinterprets each sample with a new shape of equal size.
    Reshape { height: usize, width: usize, channels: usize },
    Activation { function: Activation },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    fine: [usize; 3],
    coarse: [usize; 3],
    k: usize,
    s: usize,
    p: usize,
}

impl Geometry {
    fn weights(&self) -> usize {
        self.coarse[2] * self.k * self.k * self.fine[2]
    }

    /// Correlation: fine -> coarse (a conv forward pass, no bias).
    fn gather(&self, w: &[f64], fine: &[f64], coarse: &mut [f64]) {
        let [fh, fw, fc] = self.fine;
        let [ch, cw, cc] = self.coarse;
        let k = self.k;
        for oy in 0..ch {
            for ox in 0..cw {
                let out = &mut coarse[(oy * cw + ox) * cc..(oy * cw + ox + 1) * cc];
                for ky in 0..k {
                    let iy = (oy * self.s + ky) as isize - self.p as isize;
                    if iy < 0 || iy >= fh as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.s + kx) as isize - self.p as isize;
                        if ix < 0 || ix >= fw as isize {
                            continue;
                        }
                        let base = (iy as usize * fw + ix as usize) * fc;
                        let xin = &fine[base..base + fc];
                        for (a, o) in out.iter_mut().enumerate() {
                            let wrow = &w[((a * k + ky) * k + kx) * fc..][..fc];
                            *o += wrow.iter().zip(xin).map(|(p, q)| p * q).sum::<f64>();
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `gather`: coarse -> fine, accumulated into `fine`.
    fn scatter(&self, w: &[f64], coarse: &[f64], fine: &mut [f64]) {
        let [fh, fw, fc] = self.fine;
        let [ch, cw, cc] = self.coarse;
        let k = self.k;
        for oy in 0..ch {
            for ox in 0..cw {
                let g = &coarse[(oy * cw + ox) * cc..(oy * cw + ox + 1) * cc];
                for ky in 0..k {
                    let iy = (oy * self.s + ky) as isize - self.p as isize;
                    if iy < 0 || iy >= fh as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.s + kx) as isize - self.p as isize;
                        if ix < 0 || ix >= fw as isize {
                            continue;
                        }
                        let base = (iy as usize * fw + ix as usize) * fc;
                        let xout = &mut fine[base..base + fc];
                        for (a, &ga) in g.iter().enumerate() {
                            let wrow = &w[((a * k + ky) * k + kx) * fc..][..fc];
                            for (o, p) in xout.iter_mut().zip(wrow) {
                                *o += ga * p;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `dW[a][ky][kx][b] += coarse[a] * fine[b]` over all overlapping positions.
    fn weight_grad(&self, coarse: &[f64], fine: &[f64], gw: &mut [f64]) {
        let [fh, fw, fc] = self.fine;
        let [ch, cw, cc] = self.coarse;
        let k = self.k;
        for oy in 0..ch {
            for ox in 0..cw {
                let g = &coarse[(oy * cw + ox) * cc..(oy * cw + ox + 1) * cc];
                for ky in 0..k {
                    let iy = (oy * self.s + ky) as isize - self.p as isize;
                    if iy < 0 || iy >= fh as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.s + kx) as isize - self.p as isize;
                        if ix < 0 || ix >= fw as isize {
                            continue;
                        }
                        let base = (iy as usize * fw + ix as usize) * fc;
                        let xin = &fine[base..base + fc];
                        for (a, &ga) in g.iter().enumerate() {
                            let row = &mut gw[((a * k + ky) * k + kx) * fc..][..fc];
                            for (o, q) in row.iter_mut().zip(xin) {
                                *o += ga * q;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Dense { inputs: usize, units: usize },
    Conv(Geometry),
    ConvTranspose(Geometry),
    Reshape,
    Activation(Activation),
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    spec: LayerSpec,
    kind: Kind,
    input: [usize; 3],
    output: [usize; 3],
}

impl Layer {
    fn build(index: usize, spec: LayerSpec, input: [usize; 3]) -> Result<Self> {
        let bad = |msg: String| Error::shape(format!("layer {index} ({spec:?}): {msg}"));
        let [h, w, c] = input;
        let (kind, output) = match spec {
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(bad("zero units".into()));
                }
                (Kind::Dense { inputs: h * w * c, units }, [1, 1, units])
            }
            LayerSpec::Conv { filters, kernel, stride, padding } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return Err(bad("filters, kernel and stride must be positive".into()));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(bad(format!("kernel {kernel} larger than padded input {h}x{w}")));
                }
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (w + 2 * padding - kernel) / stride + 1;
                let g = Geometry { fine: input, coarse: [oh, ow, filters], k: kernel, s: stride, p: padding };
                (Kind::Conv(g), [oh, ow, filters])
            }
            LayerSpec::ConvTranspose { filters, kernel, stride, padding, output_padding } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return Err(bad("filters, kernel and stride must be positive".into()));
                }
                if output_padding >= stride {
                    return Err(bad("output padding must be smaller than the stride".into()));
                }
                let size = |x: usize| ((x - 1) * stride + kernel + output_padding).checked_sub(2 * padding);
                let (Some(oh), Some(ow)) = (size(h), size(w)) else {
                    return Err(bad("padding exceeds the output size".into()));
                };
                if oh == 0 || ow == 0 {
                    return Err(bad("empty output".into()));
                }
                let g = Geometry { fine: [oh, ow, filters], coarse: input, k: kernel, s: stride, p: padding };
                (Kind::ConvTranspose(g), [oh, ow, filters])
            }
            LayerSpec::Reshape { height, width, channels } => {
                if height * width * channels != h * w * c {
                    return Err(bad(format!("cannot reshape {input:?} to {:?}", [height, width, channels])));
                }
                (Kind::Reshape, [height, width, channels])
            }
            LayerSpec::Activation { function } => (Kind::Activation(function), input),
        };
        Ok(Self { spec, kind, input, output })
    }

    fn n_params(&self) -> usize {
        match self.kind {
            Kind::Dense { inputs, units } => inputs * units + units,
            Kind::Conv(g) => g.weights() + g.coarse[2],
            Kind::ConvTranspose(g) => g.weights() + g.fine[2],
            Kind::Reshape | Kind::Activation(_) => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            Kind::Dense { inputs, .. } => inputs,
            Kind::Conv(g) => g.fine[2] * g.k * g.k,
            Kind::ConvTranspose(g) => g.coarse[2] * g.k * g.k,
            Kind::Reshape | Kind::Activation(_) => 0,
        }
    }

    fn n_weights(&self) -> usize {
        match self.kind {
            Kind::Dense { inputs, units } => inputs * units,
            Kind::Conv(g) | Kind::ConvTranspose(g) => g.weights(),
            Kind::Reshape | Kind::Activation(_) => 0,
        }
    }

    fn forward(&self, p: &[f64], x: &Tensor4) -> Tensor4 {
        let n = x.batch();
        let out_len: usize = self.output.iter().product();
        match self.kind {
            Kind::Dense { inputs, units } => {
                let (w, b) = p.split_at(inputs * units);
                let mut y = Vec::with_capacity(n * units);
                for i in 0..n {
                    let xi = x.sample(i);
                    for o in 0..units {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        y.push(b[o] + crate::linalg::dot(row, xi));
                    }
                }
                Tensor4 { shape: [n, 1, 1, units], data: y }
            }
            Kind::Conv(g) => {
                let (w, b) = p.split_at(g.weights());
                let mut y = Tensor4::zeros([n, self.output[0], self.output[1], self.output[2]]);
                for i in 0..n {
                    let out = &mut y.data[i * out_len..(i + 1) * out_len];
                    for chunk in out.chunks_mut(b.len()) {
                        chunk.copy_from_slice(b);
                    }
                    g.gather(w, x.sample(i), out);
                }
                y
            }
            Kind::ConvTranspose(g) => {
                let (w, b) = p.split_at(g.weights());
                let mut y = Tensor4::zeros([n, self.output[0], self.output[1], self.output[2]]);
                for i in 0..n {
                    let out = &mut y.data[i * out_len..(i + 1) * out_len];
                    for chunk in out.chunks_mut(b.len()) {
                        chunk.copy_from_slice(b);
                    }
                    g.scatter(w, x.sample(i), out);
                }
                y
            }
            Kind::Reshape => x.clone().with_sample_shape(self.output),
            Kind::Activation(f) => {
                Tensor4 { shape: x.shape, data: x.data.iter().map(|&v| f.apply(v)).collect() }
            }
        }
    }

    /// Returns the input gradient; parameter gradients are accumulated into `gp`.
    fn backward(&self, p: &[f64], x: &Tensor4, gy: &Tensor4, gp: &mut [f64]) -> Tensor4 {
        let n = x.batch();
        match self.kind {
            Kind::Dense { inputs, units } => {
                let w = &p[..inputs * units];
                let (gw, gb) = gp.split_at_mut(inputs * units);
                let mut gx = Tensor4::zeros(x.shape);
                for i in 0..n {
                    let xi = x.sample(i);
                    let gyi = gy.sample(i);
                    let gxi = &mut gx.data[i * inputs..(i + 1) * inputs];
                    for (o, &g) in gyi.iter().enumerate() {
                        gb[o] += g;
                        crate::linalg::axpy(g, xi, &mut gw[o * inputs..(o + 1) * inputs]);
                        crate::linalg::axpy(g, &w[o * inputs..(o + 1) * inputs], gxi);
                    }
                }
                gx
            }
            Kind::Conv(g) => {
                let w = &p[..g.weights()];
                let (gw, gb) = gp.split_at_mut(g.weights());
                let mut gx = Tensor4::zeros(x.shape);
                let in_len = x.sample_len();
                for i in 0..n {
                    let gyi = gy.sample(i);
                    for chunk in gyi.chunks(gb.len()) {
                        gb.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                    g.weight_grad(gyi, x.sample(i), gw);
                    g.scatter(w, gyi, &mut gx.data[i * in_len..(i + 1) * in_len]);
                }
                gx
            }
            Kind::ConvTranspose(g) => {
                let w = &p[..g.weights()];
                let (gw, gb) = gp.split_at_mut(g.weights());
                let mut gx = Tensor4::zeros(x.shape);
                let in_len = x.sample_len();
                for i in 0..n {
                    let gyi = gy.sample(i);
                    for chunk in gyi.chunks(gb.len()) {
                        gb.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                    g.weight_grad(x.sample(i), gyi, gw);
                    g.gather(w, gyi, &mut gx.data[i * in_len..(i + 1) * in_len]);
                }
                gx
            }
            Kind::Reshape => gy.clone().with_sample_shape(self.input),
            Kind::Activation(f) => Tensor4 {
                shape: x.shape,
                data: x.data.iter().zip(&gy.data).map(|(&v, &g)| g * f.derivative(v)).collect(),
            },
        }
    }
}

/// Intermediate tensors of one forward pass, needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Tensor4>,
    output_shape: [usize; 4],
}

/// A sequential stack of layers with fixed per-sample input shape.
#[derive(Debug)]
pub struct Network {
    input: [usize; 3],
    layers: Vec<Layer>,
    ranges: Vec<Range<usize>>,
    forward_calls: AtomicUsize,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            input: self.input,
            layers: self.layers.clone(),
            ranges: self.ranges.clone(),
            forward_calls: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input == other.input && self.layers == other.layers
    }
}

impl Network {
    pub fn new(input: [usize; 3], specs: &[LayerSpec]) -> Result<Self> {
        if input.contains(&0) {
            return Err(Error::shape(format!("empty input shape {input:?}")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut ranges = Vec::with_capacity(specs.len());
        let mut shape = input;
        let mut offset = 0;
        for (i, &spec) in specs.iter().enumerate() {
            let layer = Layer::build(i, spec, shape)?;
            shape = layer.output;
            ranges.push(offset..offset + layer.n_params());
            offset += layer.n_params();
            layers.push(layer);
        }
        Ok(Self { input, layers, ranges, forward_calls: AtomicUsize::new(0) })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Per-layer `(input, output)` sample shapes.
    pub fn shapes(&self) -> Vec<([usize; 3], [usize; 3])> {
        self.layers.iter().map(|l| (l.input, l.output)).collect()
    }

    pub fn n_params(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn param_ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    /// Number of forward passes evaluated so far.
    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    fn check(&self, params: &[f64], x: &Tensor4) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::shape(format!("{} parameters, network has {}", params.len(), self.n_params())));
        }
        if x.shape[1..] != self.input {
            return Err(Error::shape(format!("input sample shape {:?}, expected {:?}", &x.shape[1..], self.input)));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], x: &Tensor4) -> Result<Tensor4> {
        self.check(params, x)?;
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let mut cur = x.clone();
        for (layer, r) in self.layers.iter().zip(&self.ranges) {
            cur = layer.forward(&params[r.clone()], &cur);
        }
        debug_assert!(cur.data.iter().all(|v| v.is_finite()), "non-finite network output");
        Ok(cur)
    }

    pub fn forward_cached(&self, params: &[f64], x: &Tensor4) -> Result<(Tensor4, Cache)> {
        self.check(params, x)?;
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (layer, r) in self.layers.iter().zip(&self.ranges) {
            let next = layer.forward(&params[r.clone()], &cur);
            inputs.push(std::mem::replace(&mut cur, next));
        }
        let output_shape = cur.shape;
        Ok((cur, Cache { inputs, output_shape }))
    }

    /// Gradients of `<grad_out, f(x)>` with respect to the input and the parameters.
    pub fn backward(&self, params: &[f64], cache: &Cache, grad_out: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        if cache.inputs.len() != self.layers.len()
            || cache.inputs.iter().zip(&self.layers).any(|(t, l)| t.shape[1..] != l.input)
        {
            return Err(Error::shape("cache does not come from this network"));
        }
        if grad_out.shape != cache.output_shape {
            return Err(Error::shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                grad_out.shape, cache.output_shape
            )));
        }
        if params.len() != self.n_params() {
            return Err(Error::shape("parameter vector length changed since forward"));
        }
        let mut gp = vec![0.0; self.n_params()];
        let mut g = grad_out.clone();
        for ((layer, r), x) in self.layers.iter().zip(&self.ranges).zip(&cache.inputs).rev() {
            g = layer.backward(&params[r.clone()], x, &g, &mut gp[r.clone()]);
        }
        Ok((g, gp))
    }

    /// Uniform weights on `[-a, a]` with `a = sqrt(3 / fan_in)` (variance `1 / fan_in`),
    /// zero biases.
    pub fn init_params(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = stream(seed, Stream::Init, index);
        let mut out = vec![0.0; self.n_params()];
        for (layer, r) in self.layers.iter().zip(&self.ranges) {
            let a = (3.0 / layer.fan_in().max(1) as f64).sqrt();
            for v in &mut out[r.start..r.start + layer.n_weights()] {
                *v = rng.gen_range(-a..=a);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::shape(format!(
                "Adam state has {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { step: self.t as usize + 1, what: format!("gradient entry {i}") });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}
