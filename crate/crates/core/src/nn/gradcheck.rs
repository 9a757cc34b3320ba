//! Finite-difference gradient checking.
//!
//! Every differentiable op is checked against central finite differences of
//! an independent 64-bit shadow forward pass (plain-loop reference
//! implementations below, kept free of the production f32 code path). The
//! reported error is the largest per-coordinate deviation normalized by the
//! largest gradient magnitude.
//!
//! Test-support module: used by unit tests and the acceptance suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{loss, LayerSpec, LossKind, Mode, Network, PaddingSpec, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-3;

/// Acceptance bound on the normalized gradient error.
pub const GRAD_TOL: f64 = 1e-4;

// ---------------------------------------------------------------------------
// 64-bit shadow forwards
// ---------------------------------------------------------------------------

fn conv1d_ref(
    x: &[f64],
    (n, c_in, l): (usize, usize, usize),
    w: &[f64],
    (c_out, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let l_out = (l + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * c_out * l_out];
    for b in 0..n {
        for co in 0..c_out {
            for j in 0..l_out {
                let mut acc = bias[co];
                for ci in 0..c_in {
                    for kk in 0..k {
                        let pos = (j * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += w[(co * c_in + ci) * k + kk]
                                * x[(b * c_in + ci) * l + pos as usize];
                        }
                    }
                }
                out[(b * c_out + co) * l_out + j] = acc;
            }
        }
    }
    out
}

fn batchnorm_train_ref(
    x: &[f64],
    (n, c, l): (usize, usize, usize),
    gamma: &[f64],
    beta: &[f64],
) -> Vec<f64> {
    let eps = 1e-5;
    let m = (n * l) as f64;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let mut mean = 0.0;
        for b in 0..n {
            for i in 0..l {
                mean += x[(b * c + ch) * l + i];
            }
        }
        mean /= m;
        let mut var = 0.0;
        for b in 0..n {
            for i in 0..l {
                let d = x[(b * c + ch) * l + i] - mean;
                var += d * d;
            }
        }
        var /= m;
        let istd = 1.0 / (var + eps).sqrt();
        for b in 0..n {
            for i in 0..l {
                let idx = (b * c + ch) * l + i;
                out[idx] = gamma[ch] * (x[idx] - mean) * istd + beta[ch];
            }
        }
    }
    out
}

fn dense_ref(x: &[f64], (n, i_n): (usize, usize), w: &[f64], o_n: usize, bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * o_n];
    for b in 0..n {
        for o in 0..o_n {
            let mut acc = bias[o];
            for i in 0..i_n {
                acc += x[b * i_n + i] * w[o * i_n + i];
            }
            out[b * o_n + o] = acc;
        }
    }
    out
}

fn relu_ref(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

fn maxpool_ref(x: &[f64], rows: usize, l: usize) -> Vec<f64> {
    let l_out = l / 2;
    let mut out = vec![0.0; rows * l_out];
    for r in 0..rows {
        for j in 0..l_out {
            out[r * l_out + j] = x[r * l + 2 * j].max(x[r * l + 2 * j + 1]);
        }
    }
    out
}

fn upsample_ref(x: &[f64], rows: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * l * 2];
    for r in 0..rows {
        for j in 0..l {
            out[r * l * 2 + 2 * j] = x[r * l + j];
            out[r * l * 2 + 2 * j + 1] = x[r * l + j];
        }
    }
    out
}

fn sigmoid_ref(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

fn softmax_ref(x: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for b in 0..n {
        let row = &x[b * k..(b + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        for i in 0..k {
            out[b * k + i] = (row[i] - max).exp() / sum;
        }
    }
    out
}

fn loss_ref(p: &[f64], t: &[f64], kind: LossKind, batch: usize) -> f64 {
    match kind {
        LossKind::Mse => {
            p.iter()
                .zip(t)
                .map(|(&pv, &tv)| (pv - tv) * (pv - tv))
                .sum::<f64>()
                / p.len() as f64
        }
        LossKind::BinaryCrossEntropy => {
            p.iter()
                .zip(t)
                .map(|(&pv, &tv)| {
                    let pc = pv.clamp(1e-7, 1.0 - 1e-7);
                    -(tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln())
                })
                .sum::<f64>()
                / p.len() as f64
        }
        LossKind::CategoricalCrossEntropy => {
            p.iter()
                .zip(t)
                .map(|(&pv, &tv)| if tv == 0.0 { 0.0 } else { -tv * pv.max(1e-7).ln() })
                .sum::<f64>()
                / batch as f64
        }
    }
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

fn fd_grad(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
    let mut th = theta.to_vec();
    (0..th.len())
        .map(|i| {
            let orig = th[i];
            th[i] = orig + FD_STEP;
            let fp = f(&th);
            th[i] = orig - FD_STEP;
            let fm = f(&th);
            th[i] = orig;
            (fp - fm) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest per-coordinate deviation over the gradient scale.
fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric
        .iter()
        .map(|v| v.abs())
        .chain(analytic.iter().map(|&v| v.abs() as f64))
        .fold(1e-6f64, f64::max);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a as f64 - n).abs())
        .fold(0.0f64, f64::max)
        / scale
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn rand_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Runs one production forward/backward under a random cotangent and
/// returns (input grad, named param grads in visit order, cotangent).
fn production_grads(
    net: &mut Network,
    x: &Tensor,
    cot: &[f64],
) -> (Vec<f32>, Vec<Vec<f32>>) {
    net.zero_grad();
    let (out, trace) = net.forward(x, Mode::Train).expect("forward succeeds");
    assert_eq!(out.numel(), cot.len());
    let c = Tensor::new(out.shape().to_vec(), to_f32(cot)).unwrap();
    let dx = net.backward(&trace, &c);
    let mut param_grads = Vec::new();
    net.visit_params(&mut |p| param_grads.push(p.grad.data().to_vec()));
    (dx.data().to_vec(), param_grads)
}

fn scalarize(y: &[f64], cot: &[f64]) -> f64 {
    y.iter().zip(cot).map(|(a, b)| a * b).sum()
}

/// conv1d: input, weight, and bias gradients across random configurations.
pub fn check_conv1d(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (n, c_in, c_out) = (
            rng.gen_range(1..3usize),
            rng.gen_range(1..4usize),
            rng.gen_range(1..4usize),
        );
        let k = if case % 2 == 0 { 3 } else { 5 };
        let (stride, padding, pad) = if rng.gen_bool(0.5) {
            (1usize, PaddingSpec::Same, (k - 1) / 2)
        } else {
            let p = rng.gen_range(0..3usize);
            (rng.gen_range(1..3usize), PaddingSpec::Explicit(p), p)
        };
        let l = rng.gen_range(8..14usize).max(k);

        let spec = LayerSpec::Conv1d {
            in_channels: c_in,
            out_channels: c_out,
            kernel: k,
            stride,
            padding,
        };
        let mut net = Network::from_specs(&[spec], &mut rng).unwrap();
        // nonzero bias for generality
        let mut params = net.export_params();
        params[1].1 = Tensor::new(vec![c_out], to_f32(&rand_vec(&mut rng, c_out, -0.5, 0.5))).unwrap();
        net.import_params(&params).unwrap();

        let x = rand_vec(&mut rng, n * c_in * l, -2.0, 2.0);
        let w = to_f64(params[0].1.data());
        let b = to_f64(params[1].1.data());
        let l_out = (l + 2 * pad - k) / stride + 1;
        let cot = rand_vec(&mut rng, n * c_out * l_out, -1.0, 1.0);

        let xt = Tensor::new(vec![n, c_in, l], to_f32(&x)).unwrap();
        let (dx, pgrads) = production_grads(&mut net, &xt, &cot);

        let f_x = |th: &[f64]| {
            scalarize(
                &conv1d_ref(th, (n, c_in, l), &w, (c_out, k), &b, stride, pad),
                &cot,
            )
        };
        let f_w = |th: &[f64]| {
            scalarize(
                &conv1d_ref(&x, (n, c_in, l), th, (c_out, k), &b, stride, pad),
                &cot,
            )
        };
        let f_b = |th: &[f64]| {
            scalarize(
                &conv1d_ref(&x, (n, c_in, l), &w, (c_out, k), th, stride, pad),
                &cot,
            )
        };
        worst = worst.max(rel_err(&dx, &fd_grad(f_x, &x)));
        worst = worst.max(rel_err(&pgrads[0], &fd_grad(f_w, &w)));
        worst = worst.max(rel_err(&pgrads[1], &fd_grad(f_b, &b)));
    }
    worst
}

/// batch norm (training mode): input, gamma, beta.
pub fn check_batchnorm(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, c, l) = (
            rng.gen_range(2..5usize),
            rng.gen_range(1..4usize),
            rng.gen_range(3..7usize),
        );
        let mut net =
            Network::from_specs(&[LayerSpec::BatchNorm1d { channels: c }], &mut rng).unwrap();
        let mut params = net.export_params();
        params[0].1 = Tensor::new(vec![c], to_f32(&rand_vec(&mut rng, c, 0.5, 1.5))).unwrap();
        params[1].1 = Tensor::new(vec![c], to_f32(&rand_vec(&mut rng, c, -0.5, 0.5))).unwrap();
        net.import_params(&params).unwrap();

        let x = rand_vec(&mut rng, n * c * l, -2.0, 2.0);
        let gamma = to_f64(params[0].1.data());
        let beta = to_f64(params[1].1.data());
        let cot = rand_vec(&mut rng, n * c * l, -1.0, 1.0);

        let xt = Tensor::new(vec![n, c, l], to_f32(&x)).unwrap();
        let (dx, pgrads) = production_grads(&mut net, &xt, &cot);

        let f_x = |th: &[f64]| scalarize(&batchnorm_train_ref(th, (n, c, l), &gamma, &beta), &cot);
        let f_g = |th: &[f64]| scalarize(&batchnorm_train_ref(&x, (n, c, l), th, &beta), &cot);
        let f_b = |th: &[f64]| scalarize(&batchnorm_train_ref(&x, (n, c, l), &gamma, th), &cot);
        worst = worst.max(rel_err(&dx, &fd_grad(f_x, &x)));
        worst = worst.max(rel_err(&pgrads[0], &fd_grad(f_g, &gamma)));
        worst = worst.max(rel_err(&pgrads[1], &fd_grad(f_b, &beta)));
    }
    worst
}

/// dense: input, weight, bias.
pub fn check_dense(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, i_n, o_n) = (
            rng.gen_range(1..4usize),
            rng.gen_range(2..8usize),
            rng.gen_range(1..6usize),
        );
        let mut net = Network::from_specs(
            &[LayerSpec::Dense {
                inputs: i_n,
                outputs: o_n,
            }],
            &mut rng,
        )
        .unwrap();
        let mut params = net.export_params();
        params[1].1 = Tensor::new(vec![o_n], to_f32(&rand_vec(&mut rng, o_n, -0.5, 0.5))).unwrap();
        net.import_params(&params).unwrap();

        let x = rand_vec(&mut rng, n * i_n, -2.0, 2.0);
        let w = to_f64(params[0].1.data());
        let b = to_f64(params[1].1.data());
        let cot = rand_vec(&mut rng, n * o_n, -1.0, 1.0);

        let xt = Tensor::new(vec![n, i_n], to_f32(&x)).unwrap();
        let (dx, pgrads) = production_grads(&mut net, &xt, &cot);

        let f_x = |th: &[f64]| scalarize(&dense_ref(th, (n, i_n), &w, o_n, &b), &cot);
        let f_w = |th: &[f64]| scalarize(&dense_ref(&x, (n, i_n), th, o_n, &b), &cot);
        let f_b = |th: &[f64]| scalarize(&dense_ref(&x, (n, i_n), &w, o_n, th), &cot);
        worst = worst.max(rel_err(&dx, &fd_grad(f_x, &x)));
        worst = worst.max(rel_err(&pgrads[0], &fd_grad(f_w, &w)));
        worst = worst.max(rel_err(&pgrads[1], &fd_grad(f_b, &b)));
    }
    worst
}

fn check_unary(
    seed: u64,
    cases: usize,
    spec: LayerSpec,
    sample: impl Fn(&mut ChaCha8Rng, usize) -> Vec<f64>,
    reference: impl Fn(&[f64], (usize, usize, usize)) -> Vec<f64>,
    two_d: bool,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, c, l) = (
            rng.gen_range(1..3usize),
            rng.gen_range(1..4usize),
            rng.gen_range(4..11usize) & !1, // even length
        );
        let mut net = Network::from_specs(std::slice::from_ref(&spec), &mut rng).unwrap();
        let x = sample(&mut rng, n * c * l);
        let y_len = reference(&x, (n, c, l)).len();
        let cot = rand_vec(&mut rng, y_len, -1.0, 1.0);
        let shape = if two_d { vec![n, c * l] } else { vec![n, c, l] };
        let xt = Tensor::new(shape, to_f32(&x)).unwrap();
        let (dx, _) = production_grads(&mut net, &xt, &cot);
        let f_x = |th: &[f64]| scalarize(&reference(th, (n, c, l)), &cot);
        worst = worst.max(rel_err(&dx, &fd_grad(f_x, &x)));
    }
    worst
}

/// relu: inputs kept away from the kink at 0.
pub fn check_relu(seed: u64, cases: usize) -> f64 {
    check_unary(
        seed,
        cases,
        LayerSpec::Relu,
        |rng, len| {
            (0..len)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.05..2.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect()
        },
        |x, _| relu_ref(x),
        false,
    )
}

/// max pool: pair gaps kept wide enough that FD stays on one side.
pub fn check_maxpool(seed: u64, cases: usize) -> f64 {
    check_unary(
        seed,
        cases,
        LayerSpec::MaxPool1d,
        |rng, len| {
            let mut x = rand_vec(rng, len, -2.0, 2.0);
            for j in 0..len / 2 {
                if (x[2 * j] - x[2 * j + 1]).abs() < 0.05 {
                    x[2 * j] += 0.1;
                }
            }
            x
        },
        |x, (n, c, l)| maxpool_ref(x, n * c, l),
        false,
    )
}

pub fn check_upsample(seed: u64, cases: usize) -> f64 {
    check_unary(
        seed,
        cases,
        LayerSpec::UpsampleNearest2,
        |rng, len| rand_vec(rng, len, -2.0, 2.0),
        |x, (n, c, l)| upsample_ref(x, n * c, l),
        false,
    )
}

pub fn check_sigmoid(seed: u64, cases: usize) -> f64 {
    check_unary(
        seed,
        cases,
        LayerSpec::Sigmoid,
        |rng, len| rand_vec(rng, len, -3.0, 3.0),
        |x, _| sigmoid_ref(x),
        false,
    )
}

pub fn check_softmax(seed: u64, cases: usize) -> f64 {
    check_unary(
        seed,
        cases,
        LayerSpec::Softmax,
        |rng, len| rand_vec(rng, len, -2.0, 2.0),
        |x, (n, c, l)| softmax_ref(x, n, c * l),
        true,
    )
}

/// flatten is a reshape; its gradient must be the reshaped cotangent.
pub fn check_flatten(seed: u64, cases: usize) -> f64 {
    check_unary(
        seed,
        cases,
        LayerSpec::Flatten,
        |rng, len| rand_vec(rng, len, -2.0, 2.0),
        |x, _| x.to_vec(),
        false,
    )
}

/// losses: gradient of the scalar with respect to predictions.
pub fn check_losses(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, k) = (rng.gen_range(1..4usize), rng.gen_range(2..6usize));
        for kind in [
            LossKind::Mse,
            LossKind::BinaryCrossEntropy,
            LossKind::CategoricalCrossEntropy,
        ] {
            // cross-entropy probabilities stay in [0.1, 0.9]: the h = 1e-3
            // central difference needs the log curvature bounded to hold
            // its own accuracy below the 1e-4 gate
            let p = match kind {
                LossKind::Mse => rand_vec(&mut rng, n * k, -2.0, 2.0),
                _ => rand_vec(&mut rng, n * k, 0.1, 0.9),
            };
            let t = match kind {
                LossKind::Mse => rand_vec(&mut rng, n * k, -2.0, 2.0),
                LossKind::BinaryCrossEntropy => (0..n * k)
                    .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                    .collect(),
                LossKind::CategoricalCrossEntropy => {
                    let mut t = vec![0.0; n * k];
                    for b in 0..n {
                        t[b * k + rng.gen_range(0..k)] = 1.0;
                    }
                    t
                }
            };
            let pt = Tensor::new(vec![n, k], to_f32(&p)).unwrap();
            let tt = Tensor::new(vec![n, k], to_f32(&t)).unwrap();
            let (_, grad) = loss(&pt, &tt, kind).unwrap();
            let f = |th: &[f64]| loss_ref(th, &t, kind, n);
            worst = worst.max(rel_err(grad.data(), &fd_grad(f, &p)));
        }
    }
    worst
}

/// Runs every op check; returns (name, max rel err) pairs.
pub fn check_all(seed: u64, cases: usize) -> Vec<(&'static str, f64)> {
    vec![
        ("conv1d", check_conv1d(seed, cases)),
        ("batch_norm", check_batchnorm(seed.wrapping_add(1), cases)),
        ("dense", check_dense(seed.wrapping_add(2), cases)),
        ("relu", check_relu(seed.wrapping_add(3), cases)),
        ("max_pool1d", check_maxpool(seed.wrapping_add(4), cases)),
        ("upsample_nearest", check_upsample(seed.wrapping_add(5), cases)),
        ("sigmoid", check_sigmoid(seed.wrapping_add(6), cases)),
        ("softmax", check_softmax(seed.wrapping_add(7), cases)),
        ("flatten", check_flatten(seed.wrapping_add(8), cases)),
        ("loss", check_losses(seed.wrapping_add(9), cases)),
    ]
}
