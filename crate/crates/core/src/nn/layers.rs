//! Layers and the sequential network container.
//!
//! Convolutional data is shaped `[batch, channels, length]`; dense data is
//! `[batch, features]`. Forward passes return a per-layer cache consumed by
//! the matching backward pass, so one set of weights can serve several
//! concurrent forward traces (the Siamese branch runs twice per step).

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Parameter, Tensor};

/// Forward-pass mode; batch normalization is the only layer that cares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Conv padding: `Same` keeps the temporal length (stride 1, odd kernel).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingSpec {
    Same,
    Explicit(usize),
}

/// Serializable architecture descriptor; a network is a list of these.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: PaddingSpec,
    },
    BatchNorm1d {
        channels: usize,
    },
    Relu,
    MaxPool1d,
    UpsampleNearest2,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Sigmoid,
    Softmax,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone)]
pub struct Conv1d {
    pub weight: Parameter,
    pub bias: Parameter,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: PaddingSpec,
}

impl Conv1d {
    fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: PaddingSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel must be odd, got {kernel}"
            )));
        }
        if stride == 0 || (padding == PaddingSpec::Same && stride != 1) {
            return Err(Error::ShapeMismatch(
                "same padding requires stride 1".into(),
            ));
        }
        let fan_in = in_channels * kernel;
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let weight = Tensor::new(
            vec![out_channels, in_channels, kernel],
            (0..out_channels * in_channels * kernel)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
        )?;
        Ok(Conv1d {
            weight: Parameter::new(weight),
            bias: Parameter::new(Tensor::zeros(vec![out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    fn pad(&self) -> usize {
        match self.padding {
            PaddingSpec::Same => (self.kernel - 1) / 2,
            PaddingSpec::Explicit(p) => p,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        let [n, c_in, l] = shape3(x)?;
        if c_in != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {c_in}",
                self.in_channels
            )));
        }
        let (k, s, p) = (self.kernel, self.stride, self.pad());
        if l + 2 * p < k {
            return Err(Error::ShapeMismatch(format!(
                "input length {l} too short for kernel {k} with padding {p}"
            )));
        }
        let l_out = (l + 2 * p - k) / s + 1;
        let lp = l + 2 * p;
        let (c_out, xd) = (self.out_channels, x.data());
        let w = self.weight.value.data();
        let bias = self.bias.value.data();

        let mut out = vec![0.0f32; n * c_out * l_out];
        let mut padded = vec![0.0f32; c_in * lp];
        let mut acc = vec![0.0f64; l_out];
        for b in 0..n {
            fill_padded(&mut padded, xd, b, c_in, l, p);
            for co in 0..c_out {
                acc.fill(bias[co] as f64);
                for ci in 0..c_in {
                    let row = &padded[ci * lp..(ci + 1) * lp];
                    let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let wv = wv as f64;
                        if s == 1 {
                            for (j, a) in acc.iter_mut().enumerate() {
                                *a += wv * row[j + kk] as f64;
                            }
                        } else {
                            for (j, a) in acc.iter_mut().enumerate() {
                                *a += wv * row[j * s + kk] as f64;
                            }
                        }
                    }
                }
                let dst = &mut out[(b * c_out + co) * l_out..(b * c_out + co + 1) * l_out];
                for (d, &a) in dst.iter_mut().zip(acc.iter()) {
                    *d = a as f32;
                }
            }
        }
        Ok((
            Tensor::new(vec![n, c_out, l_out], out)?,
            LayerCache::Conv { input: x.clone() },
        ))
    }

    fn backward(&mut self, cache: &LayerCache, grad_out: &Tensor) -> Tensor {
        let LayerCache::Conv { input } = cache else {
            panic!("conv backward fed a foreign cache");
        };
        let [n, c_in, l] = shape3(input).expect("cached input is 3-d");
        let (k, s, p) = (self.kernel, self.stride, self.pad());
        let lp = l + 2 * p;
        let c_out = self.out_channels;
        let l_out = grad_out.dim(2);
        let g = grad_out.data();
        let xd = input.data();
        let w = self.weight.value.data();

        let mut dw = vec![0.0f64; c_out * c_in * k];
        let mut db = vec![0.0f64; c_out];
        let mut dx = vec![0.0f32; n * c_in * l];
        let mut padded = vec![0.0f32; c_in * lp];
        let mut dpadded = vec![0.0f64; c_in * lp];
        for b in 0..n {
            fill_padded(&mut padded, xd, b, c_in, l, p);
            dpadded.fill(0.0);
            for co in 0..c_out {
                let grow = &g[(b * c_out + co) * l_out..(b * c_out + co + 1) * l_out];
                db[co] += grow.iter().map(|&v| v as f64).sum::<f64>();
                for ci in 0..c_in {
                    let row = &padded[ci * lp..(ci + 1) * lp];
                    let drow = &mut dpadded[ci * lp..(ci + 1) * lp];
                    let wbase = (co * c_in + ci) * k;
                    for kk in 0..k {
                        let wv = w[wbase + kk] as f64;
                        let mut acc = 0.0f64;
                        if s == 1 {
                            for (j, &gv) in grow.iter().enumerate() {
                                let gv = gv as f64;
                                acc += gv * row[j + kk] as f64;
                                drow[j + kk] += gv * wv;
                            }
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                let gv = gv as f64;
                                acc += gv * row[j * s + kk] as f64;
                                drow[j * s + kk] += gv * wv;
                            }
                        }
                        dw[wbase + kk] += acc;
                    }
                }
            }
            for ci in 0..c_in {
                let dst = &mut dx[(b * c_in + ci) * l..(b * c_in + ci + 1) * l];
                let src = &dpadded[ci * lp + p..ci * lp + p + l];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v as f32;
                }
            }
        }
        accumulate(self.weight.grad.data_mut(), &dw);
        accumulate(self.bias.grad.data_mut(), &db);
        Tensor::new(vec![n, c_in, l], dx).expect("gradient shape matches input")
    }
}

fn fill_padded(padded: &mut [f32], xd: &[f32], b: usize, c_in: usize, l: usize, p: usize) {
    let lp = l + 2 * p;
    padded.fill(0.0);
    for ci in 0..c_in {
        padded[ci * lp + p..ci * lp + p + l]
            .copy_from_slice(&xd[(b * c_in + ci) * l..(b * c_in + ci + 1) * l]);
    }
}

fn accumulate(dst: &mut [f32], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s as f32;
    }
}

#[derive(Clone)]
pub struct BatchNorm1d {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    channels: usize,
}

impl BatchNorm1d {
    fn new(channels: usize) -> Self {
        BatchNorm1d {
            gamma: Parameter::new(Tensor::new(vec![channels], vec![1.0; channels]).unwrap()),
            beta: Parameter::new(Tensor::zeros(vec![channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            channels,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, LayerCache)> {
        let [n, c, l] = shape3(x)?;
        if c != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "batch norm over {} channels fed {c}",
                self.channels
            )));
        }
        if mode == Mode::Train && n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let m = (n * l) as f64;
        let xd = x.data();
        let mut xhat = vec![0.0f32; xd.len()];
        let mut inv_std = vec![0.0f64; c];
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut out = vec![0.0f32; xd.len()];

        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    for b in 0..n {
                        for &v in &xd[(b * c + ch) * l..(b * c + ch + 1) * l] {
                            sum += v as f64;
                        }
                    }
                    let mean = sum / m;
                    let mut ss = 0.0f64;
                    for b in 0..n {
                        for &v in &xd[(b * c + ch) * l..(b * c + ch + 1) * l] {
                            let d = v as f64 - mean;
                            ss += d * d;
                        }
                    }
                    let var = ss / m;
                    self.running_mean[ch] =
                        (BN_MOMENTUM * self.running_mean[ch] as f64 + (1.0 - BN_MOMENTUM) * mean)
                            as f32;
                    self.running_var[ch] =
                        (BN_MOMENTUM * self.running_var[ch] as f64 + (1.0 - BN_MOMENTUM) * var)
                            as f32;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[ch] as f64, self.running_var[ch] as f64),
            };
            let istd = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = istd;
            let (g, bta) = (gamma[ch] as f64, beta[ch] as f64);
            for b in 0..n {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    let xh = (xd[i] as f64 - mean) * istd;
                    xhat[i] = xh as f32;
                    out[i] = (g * xh + bta) as f32;
                }
            }
        }
        Ok((
            Tensor::new(vec![n, c, l], out)?,
            LayerCache::BatchNorm {
                xhat: Tensor::new(vec![n, c, l], xhat)?,
                inv_std,
                train: mode == Mode::Train,
            },
        ))
    }

    fn backward(&mut self, cache: &LayerCache, grad_out: &Tensor) -> Tensor {
        let LayerCache::BatchNorm { xhat, inv_std, train } = cache else {
            panic!("batch norm backward fed a foreign cache");
        };
        let [n, c, l] = shape3(xhat).expect("cached xhat is 3-d");
        let m = (n * l) as f64;
        let g = grad_out.data();
        let xh = xhat.data();
        let gamma = self.gamma.value.data();
        let mut dx = vec![0.0f32; g.len()];
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];

        for ch in 0..c {
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for b in 0..n {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    let gv = g[i] as f64;
                    sum_g += gv;
                    sum_gx += gv * xh[i] as f64;
                }
            }
            dgamma[ch] += sum_gx;
            dbeta[ch] += sum_g;
            let gam = gamma[ch] as f64;
            let istd = inv_std[ch];
            for b in 0..n {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    let gv = g[i] as f64;
                    let v = if *train {
                        // d/dx of batch-statistics normalization
                        gam * istd * (gv - sum_g / m - xh[i] as f64 * sum_gx / m)
                    } else {
                        gam * istd * gv
                    };
                    dx[i] = v as f32;
                }
            }
        }
        accumulate(self.gamma.grad.data_mut(), &dgamma);
        accumulate(self.beta.grad.data_mut(), &dbeta);
        Tensor::new(vec![n, c, l], dx).expect("gradient shape matches input")
    }
}

#[derive(Clone)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
    inputs: usize,
    outputs: usize,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = (6.0 / inputs as f64).sqrt() as f32;
        let weight = Tensor::new(
            vec![outputs, inputs],
            (0..outputs * inputs)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
        )?;
        Ok(Dense {
            weight: Parameter::new(weight),
            bias: Parameter::new(Tensor::zeros(vec![outputs])),
            inputs,
            outputs,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        if x.shape().len() != 2 || x.dim(1) != self.inputs {
            return Err(Error::ShapeMismatch(format!(
                "dense {}->{} fed shape {:?}",
                self.inputs,
                self.outputs,
                x.shape()
            )));
        }
        let (n, i_n, o_n) = (x.dim(0), self.inputs, self.outputs);
        let xd = x.data();
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut out = vec![0.0f32; n * o_n];
        for b in 0..n {
            let xrow = &xd[b * i_n..(b + 1) * i_n];
            for o in 0..o_n {
                let wrow = &w[o * i_n..(o + 1) * i_n];
                let mut acc = bias[o] as f64;
                for (xv, wv) in xrow.iter().zip(wrow) {
                    acc += *xv as f64 * *wv as f64;
                }
                out[b * o_n + o] = acc as f32;
            }
        }
        Ok((
            Tensor::new(vec![n, o_n], out)?,
            LayerCache::Dense { input: x.clone() },
        ))
    }

    fn backward(&mut self, cache: &LayerCache, grad_out: &Tensor) -> Tensor {
        let LayerCache::Dense { input } = cache else {
            panic!("dense backward fed a foreign cache");
        };
        let (n, i_n, o_n) = (input.dim(0), self.inputs, self.outputs);
        let xd = input.data();
        let g = grad_out.data();
        let w = self.weight.value.data();
        let mut dw = vec![0.0f64; o_n * i_n];
        let mut db = vec![0.0f64; o_n];
        let mut dx = vec![0.0f32; n * i_n];
        for b in 0..n {
            let xrow = &xd[b * i_n..(b + 1) * i_n];
            let grow = &g[b * o_n..(b + 1) * o_n];
            let mut dxrow = vec![0.0f64; i_n];
            for o in 0..o_n {
                let gv = grow[o] as f64;
                db[o] += gv;
                let wrow = &w[o * i_n..(o + 1) * i_n];
                let dwrow = &mut dw[o * i_n..(o + 1) * i_n];
                for i in 0..i_n {
                    dwrow[i] += gv * xrow[i] as f64;
                    dxrow[i] += gv * wrow[i] as f64;
                }
            }
            for (d, v) in dx[b * i_n..(b + 1) * i_n].iter_mut().zip(dxrow) {
                *d = v as f32;
            }
        }
        accumulate(self.weight.grad.data_mut(), &dw);
        accumulate(self.bias.grad.data_mut(), &db);
        Tensor::new(vec![n, i_n], dx).expect("gradient shape matches input")
    }
}

/// One layer of the sequential network.
#[derive(Clone)]
pub enum Layer {
    Conv1d(Conv1d),
    BatchNorm1d(BatchNorm1d),
    Relu,
    MaxPool1d,
    UpsampleNearest2,
    Flatten,
    Dense(Dense),
    Sigmoid,
    Softmax,
}

/// Per-layer state captured by a forward pass for its backward pass.
pub enum LayerCache {
    Conv { input: Tensor },
    BatchNorm { xhat: Tensor, inv_std: Vec<f64>, train: bool },
    Relu { mask: Vec<bool> },
    MaxPool { arg: Vec<u32>, in_shape: [usize; 3] },
    Upsample,
    Flatten { in_shape: Vec<usize> },
    Dense { input: Tensor },
    Sigmoid { output: Tensor },
    Softmax { output: Tensor },
}

fn shape3(x: &Tensor) -> Result<[usize; 3]> {
    if x.shape().len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected [batch, channels, length], got {:?}",
            x.shape()
        )));
    }
    Ok([x.dim(0), x.dim(1), x.dim(2)])
}

impl Layer {
    fn from_spec(spec: &LayerSpec, rng: &mut impl Rng) -> Result<Layer> {
        Ok(match *spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv1d(Conv1d::new(
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                rng,
            )?),
            LayerSpec::BatchNorm1d { channels } => Layer::BatchNorm1d(BatchNorm1d::new(channels)),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool1d => Layer::MaxPool1d,
            LayerSpec::UpsampleNearest2 => Layer::UpsampleNearest2,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::new(inputs, outputs, rng)?),
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Softmax => Layer::Softmax,
        })
    }

    fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::BatchNorm1d(b) => LayerSpec::BatchNorm1d {
                channels: b.channels,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool1d => LayerSpec::MaxPool1d,
            Layer::UpsampleNearest2 => LayerSpec::UpsampleNearest2,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Softmax => LayerSpec::Softmax,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, LayerCache)> {
        match self {
            Layer::Conv1d(c) => c.forward(x),
            Layer::BatchNorm1d(b) => b.forward(x, mode),
            Layer::Dense(d) => d.forward(x),
            Layer::Relu => {
                let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                let mut out = x.clone();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                Ok((out, LayerCache::Relu { mask }))
            }
            Layer::MaxPool1d => {
                let [n, c, l] = shape3(x)?;
                let l_out = l / 2;
                let xd = x.data();
                let mut out = vec![0.0f32; n * c * l_out];
                let mut arg = vec![0u32; n * c * l_out];
                for bc in 0..n * c {
                    let row = &xd[bc * l..(bc + 1) * l];
                    for j in 0..l_out {
                        let (a, b) = (row[2 * j], row[2 * j + 1]);
                        let (v, idx) = if a >= b { (a, 2 * j) } else { (b, 2 * j + 1) };
                        out[bc * l_out + j] = v;
                        arg[bc * l_out + j] = (bc * l + idx) as u32;
                    }
                }
                Ok((
                    Tensor::new(vec![n, c, l_out], out)?,
                    LayerCache::MaxPool {
                        arg,
                        in_shape: [n, c, l],
                    },
                ))
            }
            Layer::UpsampleNearest2 => {
                let [n, c, l] = shape3(x)?;
                let xd = x.data();
                let mut out = vec![0.0f32; n * c * l * 2];
                for bc in 0..n * c {
                    for j in 0..l {
                        let v = xd[bc * l + j];
                        out[bc * l * 2 + 2 * j] = v;
                        out[bc * l * 2 + 2 * j + 1] = v;
                    }
                }
                Ok((Tensor::new(vec![n, c, 2 * l], out)?, LayerCache::Upsample))
            }
            Layer::Flatten => {
                let [n, c, l] = shape3(x)?;
                Ok((
                    x.reshaped(vec![n, c * l])?,
                    LayerCache::Flatten {
                        in_shape: vec![n, c, l],
                    },
                ))
            }
            Layer::Sigmoid => {
                let mut out = x.clone();
                for v in out.data_mut() {
                    *v = (1.0 / (1.0 + (-*v as f64).exp())) as f32;
                }
                Ok((
                    out.clone(),
                    LayerCache::Sigmoid { output: out },
                ))
            }
            Layer::Softmax => {
                if x.shape().len() != 2 {
                    return Err(Error::ShapeMismatch(format!(
                        "softmax expects [batch, classes], got {:?}",
                        x.shape()
                    )));
                }
                let (n, k) = (x.dim(0), x.dim(1));
                let xd = x.data();
                let mut out = vec![0.0f32; n * k];
                for b in 0..n {
                    let row = &xd[b * k..(b + 1) * k];
                    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
                    let mut sum = 0.0f64;
                    let mut exps = vec![0.0f64; k];
                    for (e, &v) in exps.iter_mut().zip(row) {
                        *e = (v as f64 - max).exp();
                        sum += *e;
                    }
                    for (o, e) in out[b * k..(b + 1) * k].iter_mut().zip(exps) {
                        *o = (e / sum) as f32;
                    }
                }
                let out = Tensor::new(vec![n, k], out)?;
                Ok((
                    out.clone(),
                    LayerCache::Softmax { output: out },
                ))
            }
        }
    }

    fn backward(&mut self, cache: &LayerCache, grad_out: &Tensor) -> Tensor {
        match (self, cache) {
            (Layer::Conv1d(c), cache) => c.backward(cache, grad_out),
            (Layer::BatchNorm1d(b), cache) => b.backward(cache, grad_out),
            (Layer::Dense(d), cache) => d.backward(cache, grad_out),
            (Layer::Relu, LayerCache::Relu { mask }) => {
                let mut dx = grad_out.clone();
                for (v, keep) in dx.data_mut().iter_mut().zip(mask) {
                    if !keep {
                        *v = 0.0;
                    }
                }
                dx
            }
            (Layer::MaxPool1d, LayerCache::MaxPool { arg, in_shape }) => {
                let [n, c, l] = *in_shape;
                let mut dx = vec![0.0f32; n * c * l];
                for (&src, &g) in arg.iter().zip(grad_out.data()) {
                    dx[src as usize] += g;
                }
                Tensor::new(vec![n, c, l], dx).expect("gradient shape matches input")
            }
            (Layer::UpsampleNearest2, LayerCache::Upsample) => {
                let [n, c, l2] = shape3(grad_out).expect("upsample grad is 3-d");
                let l = l2 / 2;
                let g = grad_out.data();
                let mut dx = vec![0.0f32; n * c * l];
                for bc in 0..n * c {
                    for j in 0..l {
                        dx[bc * l + j] = g[bc * l2 + 2 * j] + g[bc * l2 + 2 * j + 1];
                    }
                }
                Tensor::new(vec![n, c, l], dx).expect("gradient shape matches input")
            }
            (Layer::Flatten, LayerCache::Flatten { in_shape }) => grad_out
                .reshaped(in_shape.clone())
                .expect("flatten grad reshapes back"),
            (Layer::Sigmoid, LayerCache::Sigmoid { output }) => {
                let mut dx = grad_out.clone();
                for (v, &y) in dx.data_mut().iter_mut().zip(output.data()) {
                    let y = y as f64;
                    *v = (*v as f64 * y * (1.0 - y)) as f32;
                }
                dx
            }
            (Layer::Softmax, LayerCache::Softmax { output }) => {
                let (n, k) = (output.dim(0), output.dim(1));
                let y = output.data();
                let g = grad_out.data();
                let mut dx = vec![0.0f32; n * k];
                for b in 0..n {
                    let yrow = &y[b * k..(b + 1) * k];
                    let grow = &g[b * k..(b + 1) * k];
                    let dot: f64 = yrow
                        .iter()
                        .zip(grow)
                        .map(|(&yv, &gv)| yv as f64 * gv as f64)
                        .sum();
                    for i in 0..k {
                        dx[b * k + i] = (yrow[i] as f64 * (grow[i] as f64 - dot)) as f32;
                    }
                }
                Tensor::new(vec![n, k], dx).expect("gradient shape matches input")
            }
            _ => panic!("layer backward fed a foreign cache"),
        }
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        match self {
            Layer::Conv1d(c) => {
                f(&mut c.weight);
                f(&mut c.bias);
            }
            Layer::BatchNorm1d(b) => {
                f(&mut b.gamma);
                f(&mut b.beta);
            }
            Layer::Dense(d) => {
                f(&mut d.weight);
                f(&mut d.bias);
            }
            _ => {}
        }
    }
}

/// Activations of one forward pass, consumed by `Network::backward`.
pub struct ForwardTrace {
    caches: Vec<LayerCache>,
}

/// A sequential stack of layers.
#[derive(Clone)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Builds the network from its descriptor, drawing initial weights from
    /// `rng` (Kaiming-uniform for conv/dense, unit gamma / zero beta for
    /// batch norm).
    pub fn from_specs(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Network> {
        let layers = specs
            .iter()
            .map(|s| Layer::from_spec(s, rng))
            .collect::<Result<_>>()?;
        Ok(Network { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardTrace)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let (next, cache) = layer.forward(&cur, mode)?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, ForwardTrace { caches }))
    }

    /// Eval-mode forward without keeping the trace.
    pub fn infer(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }

    /// Propagates `grad_out` back through the trace, accumulating parameter
    /// gradients, and returns the gradient with respect to the input.
    pub fn backward(&mut self, trace: &ForwardTrace, grad_out: &Tensor) -> Tensor {
        assert_eq!(trace.caches.len(), self.layers.len());
        let mut grad = grad_out.clone();
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches).rev() {
            grad = layer.backward(cache, &grad);
        }
        grad
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn step(&mut self, lr: f64, t: u64) {
        self.visit_params(&mut |p| p.step(lr, t));
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }

    /// Number of trainable scalars; a pure function of the descriptor.
    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.numel());
        n
    }

    /// Marks every parameter trainable or frozen.
    pub fn set_trainable(&mut self, trainable: bool) {
        self.visit_params(&mut |p| p.value.requires_grad = trainable);
    }

    /// Named parameter export, including batch-norm running statistics.
    /// Exported tensors are plain data (requires_grad cleared).
    pub fn export_params(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv1d(c) => {
                    out.push((format!("{i}.weight"), c.weight.value.clone()));
                    out.push((format!("{i}.bias"), c.bias.value.clone()));
                }
                Layer::BatchNorm1d(b) => {
                    out.push((format!("{i}.gamma"), b.gamma.value.clone()));
                    out.push((format!("{i}.beta"), b.beta.value.clone()));
                    out.push((
                        format!("{i}.running_mean"),
                        Tensor::new(vec![b.channels], b.running_mean.clone()).unwrap(),
                    ));
                    out.push((
                        format!("{i}.running_var"),
                        Tensor::new(vec![b.channels], b.running_var.clone()).unwrap(),
                    ));
                }
                Layer::Dense(d) => {
                    out.push((format!("{i}.weight"), d.weight.value.clone()));
                    out.push((format!("{i}.bias"), d.bias.value.clone()));
                }
                _ => {}
            }
        }
        for (_, t) in &mut out {
            t.requires_grad = false;
        }
        out
    }

    /// Loads parameters exported by `export_params`; names and shapes must
    /// match the descriptor exactly.
    pub fn import_params(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        let expected = self.export_params();
        if expected.len() != params.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, tensor), (want_name, want_tensor)) in params.iter().zip(&expected) {
            if name != want_name {
                return Err(Error::DimensionMismatch(format!(
                    "parameter {name} out of order, expected {want_name}"
                )));
            }
            if tensor.shape() != want_tensor.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "parameter {name}: shape {:?}, descriptor wants {:?}",
                    tensor.shape(),
                    want_tensor.shape()
                )));
            }
        }
        // overwrite values, keeping each parameter's trainable flag
        let mut iter = params.iter();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv1d(c) => {
                    set_value(&mut c.weight, take(&mut iter, &format!("{i}.weight")));
                    set_value(&mut c.bias, take(&mut iter, &format!("{i}.bias")));
                }
                Layer::BatchNorm1d(b) => {
                    set_value(&mut b.gamma, take(&mut iter, &format!("{i}.gamma")));
                    set_value(&mut b.beta, take(&mut iter, &format!("{i}.beta")));
                    b.running_mean = take(&mut iter, &format!("{i}.running_mean")).into_data();
                    b.running_var = take(&mut iter, &format!("{i}.running_var")).into_data();
                }
                Layer::Dense(d) => {
                    set_value(&mut d.weight, take(&mut iter, &format!("{i}.weight")));
                    set_value(&mut d.bias, take(&mut iter, &format!("{i}.bias")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Current parameter values in export order (cheap best-epoch snapshot).
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.export_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn restore(&mut self, snap: &[Tensor]) {
        let named: Vec<(String, Tensor)> = self
            .export_params()
            .into_iter()
            .map(|(n, _)| n)
            .zip(snap.iter().cloned())
            .collect();
        self.import_params(&named).expect("snapshot matches network");
    }
}

fn take<'a>(iter: &mut impl Iterator<Item = &'a (String, Tensor)>, name: &str) -> Tensor {
    let (n, t) = iter.next().expect("parameter list length checked");
    debug_assert_eq!(n, name);
    t.clone()
}

fn set_value(param: &mut Parameter, tensor: Tensor) {
    let trainable = param.value.requires_grad;
    param.value = tensor;
    param.value.requires_grad = trainable;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn t3(n: usize, c: usize, l: usize, data: Vec<f32>) -> Tensor {
        Tensor::new(vec![n, c, l], data).unwrap()
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let spec = LayerSpec::Conv1d {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: PaddingSpec::Same,
        };
        let mut net = Network::from_specs(&[spec], &mut rng()).unwrap();
        // overwrite the random kernel with [0, 1, 0] and zero bias
        net.visit_params(&mut |p| {
            if p.value.numel() == 3 {
                p.value.data_mut().copy_from_slice(&[0.0, 1.0, 0.0]);
            } else {
                p.value.data_mut().fill(0.0);
            }
        });
        let x = t3(1, 1, 6, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let y = net.infer(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn same_padding_keeps_length_400() {
        let spec = LayerSpec::Conv1d {
            in_channels: 1,
            out_channels: 4,
            kernel: 5,
            stride: 1,
            padding: PaddingSpec::Same,
        };
        let mut net = Network::from_specs(&[spec], &mut rng()).unwrap();
        let x = Tensor::zeros(vec![2, 1, 400]);
        let y = net.infer(&x).unwrap();
        assert_eq!(y.shape(), &[2, 4, 400]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let spec = LayerSpec::Conv1d {
            in_channels: 2,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: PaddingSpec::Same,
        };
        let mut net = Network::from_specs(&[spec], &mut rng()).unwrap();
        let x = Tensor::zeros(vec![1, 3, 10]);
        assert!(matches!(net.infer(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn maxpool_takes_pairwise_maxima() {
        let mut net = Network::from_specs(&[LayerSpec::MaxPool1d], &mut rng()).unwrap();
        let x = t3(1, 1, 4, vec![1.0, 3.0, 2.0, 5.0]);
        let y = net.infer(&x).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
        // odd length drops the trailing sample
        let x = t3(1, 1, 5, vec![1.0, 3.0, 2.0, 5.0, 9.0]);
        assert_eq!(net.infer(&x).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut net = Network::from_specs(&[LayerSpec::Relu], &mut rng()).unwrap();
        let x = t3(1, 1, 3, vec![-1.0, 0.0, 2.0]);
        assert_eq!(net.infer(&x).unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn upsample_duplicates_samples() {
        let mut net = Network::from_specs(&[LayerSpec::UpsampleNearest2], &mut rng()).unwrap();
        let x = t3(1, 1, 2, vec![1.0, 2.0]);
        assert_eq!(net.infer(&x).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
        let x = Tensor::zeros(vec![1, 1, 25]);
        assert_eq!(net.infer(&x).unwrap().shape(), &[1, 1, 50]);
    }

    #[test]
    fn batchnorm_standardizes_training_batches() {
        let mut net =
            Network::from_specs(&[LayerSpec::BatchNorm1d { channels: 2 }], &mut rng()).unwrap();
        let mut r = rng();
        let data: Vec<f32> = (0..2 * 2 * 50)
            .map(|_| r.gen_range(-3.0f32..5.0))
            .collect();
        let x = t3(2, 2, 50, data);
        let (y, _) = net.forward(&x, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| {
                    y.data()[(b * 2 + ch) * 50..(b * 2 + ch + 1) * 50]
                        .iter()
                        .map(|&v| v as f64)
                        .collect::<Vec<_>>()
                })
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() <= 1e-5, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() <= 1e-3, "channel {ch} var {var}");
        }
    }

    #[test]
    fn batchnorm_affine_contract() {
        let mut net =
            Network::from_specs(&[LayerSpec::BatchNorm1d { channels: 1 }], &mut rng()).unwrap();
        net.visit_params(&mut |p| {
            if p.value.data()[0] == 1.0 {
                p.value.data_mut()[0] = 2.0; // gamma
            } else {
                p.value.data_mut()[0] = 3.0; // beta
            }
        });
        let mut r = rng();
        let data: Vec<f32> = (0..4 * 100).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let x = t3(4, 1, 100, data);
        let (y, _) = net.forward(&x, Mode::Train).unwrap();
        let vals: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let std: f64 = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64)
            .sqrt();
        assert!((mean - 3.0).abs() <= 1e-3);
        assert!((std - 2.0).abs() <= 1e-3);
    }

    #[test]
    fn batchnorm_rejects_singleton_training_batch() {
        let mut net =
            Network::from_specs(&[LayerSpec::BatchNorm1d { channels: 1 }], &mut rng()).unwrap();
        let x = Tensor::zeros(vec![1, 1, 8]);
        assert!(matches!(
            net.forward(&x, Mode::Train),
            Err(Error::BatchTooSmall(1))
        ));
        assert!(net.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn param_count_is_descriptor_function() {
        let specs = [
            LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 16,
                kernel: 5,
                stride: 1,
                padding: PaddingSpec::Same,
            },
            LayerSpec::BatchNorm1d { channels: 16 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: 16 * 8,
                outputs: 4,
            },
        ];
        let mut a = Network::from_specs(&specs, &mut rng()).unwrap();
        let mut b = Network::from_specs(&specs, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let expect = (16 * 5 + 16) + (16 + 16) + (16 * 8 * 4 + 4);
        assert_eq!(a.param_count(), expect);
        assert_eq!(b.param_count(), expect);
    }

    #[test]
    fn export_import_round_trip() {
        let specs = [
            LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 3,
                kernel: 3,
                stride: 1,
                padding: PaddingSpec::Same,
            },
            LayerSpec::BatchNorm1d { channels: 3 },
            LayerSpec::Relu,
        ];
        let mut a = Network::from_specs(&specs, &mut rng()).unwrap();
        let mut b = Network::from_specs(&specs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = t3(2, 1, 10, (0..20).map(|i| i as f32 * 0.1).collect());
        let ya = a.infer(&x).unwrap();
        b.import_params(&a.export_params()).unwrap();
        let yb = b.infer(&x).unwrap();
        assert_eq!(ya.data(), yb.data());
    }
}
