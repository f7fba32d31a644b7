//! Finite-difference validation of the backprop engine.
//!
//! The forward pass is re-implemented here in f64 as an independent oracle.
//! Central differences on the f64 oracle are noise-free down to ~1e-10, so
//! the engine's analytic f32 gradients can be checked tightly — both as
//! per-tensor directional derivatives and on sampled individual weights.
//! A 2-parameter toy model is additionally checked to 1e-4 relative error
//! together with the exact ascent-step contract `delta_w == +lr * grad`.

use detox::model::{build_model, ArchId, ModelState};
use detox::nn::layers::Conv2d;
use detox::nn::loss::{cross_entropy, cross_entropy_grad};
use detox::nn::sgd::Sgd;
use detox::nn::Layer;
use detox::rng::rng_from_seed;
use ndarray::{Array4, ArrayD};
use rand::Rng;

// ---------------------------------------------------------------------------
// f64 oracle network
// ---------------------------------------------------------------------------

/// Parameters in the exact order the engine's `params_mut` reports them.
type Params = Vec<Vec<f64>>;

#[derive(Clone, Copy)]
enum Node {
    Conv { kh: usize, cin: usize, cout: usize, stride: usize, pad: usize, idx: usize },
    Bn { c: usize, idx: usize },
    Relu,
    MaxPool2,
    Gap,
    Linear { fin: usize, fout: usize, idx: usize },
    BlockStart { proj: bool },
    BlockEnd,
}

/// (batch, h, w, c) tensor as a nested Vec-free flat buffer.
#[derive(Clone)]
struct T4 {
    d: Vec<f64>,
    b: usize,
    h: usize,
    w: usize,
    c: usize,
}

impl T4 {
    fn at(&self, b: usize, y: usize, x: usize, c: usize) -> f64 {
        self.d[((b * self.h + y) * self.w + x) * self.c + c]
    }
}

fn conv_f64(x: &T4, w: &[f64], kh: usize, cout: usize, stride: usize, pad: usize) -> T4 {
    let (b, h, wd, cin) = (x.b, x.h, x.w, x.c);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kh) / stride + 1;
    let mut out = T4 { d: vec![0.0; b * ho * wo * cout], b, h: ho, w: wo, c: cout };
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                for oc in 0..cout {
                    let mut acc = 0.0;
                    for dy in 0..kh {
                        for dx in 0..kh {
                            let iy = (oy * stride + dy) as isize - pad as isize;
                            let ix = (ox * stride + dx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ic in 0..cin {
                                let wv = w[((dy * kh + dx) * cin + ic) * cout + oc];
                                acc += x.at(bi, iy as usize, ix as usize, ic) * wv;
                            }
                        }
                    }
                    out.d[((bi * ho + oy) * wo + ox) * cout + oc] = acc;
                }
            }
        }
    }
    out
}

fn bn_f64(x: &T4, gamma: &[f64], beta: &[f64], eps: f64) -> T4 {
    let n = (x.b * x.h * x.w) as f64;
    let c = x.c;
    let mut mean = vec![0.0; c];
    for (i, &v) in x.d.iter().enumerate() {
        mean[i % c] += v;
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; c];
    for (i, &v) in x.d.iter().enumerate() {
        let d = v - mean[i % c];
        var[i % c] += d * d;
    }
    for v in var.iter_mut() {
        *v /= n;
    }
    let mut out = x.clone();
    for (i, v) in out.d.iter_mut().enumerate() {
        let ch = i % c;
        *v = (*v - mean[ch]) / (var[ch] + eps).sqrt() * gamma[ch] + beta[ch];
    }
    out
}

fn relu_f64(x: &T4) -> T4 {
    let mut out = x.clone();
    for v in out.d.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

fn maxpool_f64(x: &T4) -> T4 {
    let (b, h, w, c) = (x.b, x.h, x.w, x.c);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = T4 { d: vec![0.0; b * ho * wo * c], b, h: ho, w: wo, c };
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let v = x.at(bi, oy * 2 + dy, ox * 2 + dx, ch);
                        if v > best {
                            best = v;
                        }
                    }
                    out.d[((bi * ho + oy) * wo + ox) * c + ch] = best;
                }
            }
        }
    }
    out
}

fn gap_f64(x: &T4) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; x.c]; x.b];
    for bi in 0..x.b {
        for y in 0..x.h {
            for xx in 0..x.w {
                for ch in 0..x.c {
                    out[bi][ch] += x.at(bi, y, xx, ch);
                }
            }
        }
    }
    let scale = 1.0 / (x.h * x.w) as f64;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    out
}

fn oracle_loss(nodes: &[Node], params: &Params, images: &T4, labels: &[usize]) -> f64 {
    let mut x = images.clone();
    let mut logits: Option<Vec<Vec<f64>>> = None;
    let mut i = 0;
    while i < nodes.len() {
        match nodes[i] {
            Node::Conv { kh, cin: _, cout, stride, pad, idx } => {
                x = conv_f64(&x, &params[idx], kh, cout, stride, pad);
            }
            Node::Bn { c: _, idx } => {
                x = bn_f64(&x, &params[idx], &params[idx + 1], 1e-5);
            }
            Node::Relu => x = relu_f64(&x),
            Node::MaxPool2 => x = maxpool_f64(&x),
            Node::Gap => {
                let pooled = gap_f64(&x);
                logits = Some(pooled);
            }
            Node::Linear { fin, fout, idx } => {
                let inp = logits.take().expect("linear after gap");
                let w = &params[idx];
                let b = &params[idx + 1];
                let out: Vec<Vec<f64>> = inp
                    .iter()
                    .map(|row| {
                        (0..fout)
                            .map(|o| {
                                b[o] + (0..fin).map(|f| row[f] * w[f * fout + o]).sum::<f64>()
                            })
                            .collect()
                    })
                    .collect();
                logits = Some(out);
            }
            Node::BlockStart { proj } => {
                // consume nodes until BlockEnd: bn1, relu, conv1, bn2, relu, conv2 [, proj conv]
                let o = {
                    let Node::Bn { idx, .. } = nodes[i + 1] else { panic!() };
                    relu_f64(&bn_f64(&x, &params[idx], &params[idx + 1], 1e-5))
                };
                let mut h = {
                    let Node::Conv { kh, cout, stride, pad, idx, .. } = nodes[i + 2] else { panic!() };
                    conv_f64(&o, &params[idx], kh, cout, stride, pad)
                };
                h = {
                    let Node::Bn { idx, .. } = nodes[i + 3] else { panic!() };
                    relu_f64(&bn_f64(&h, &params[idx], &params[idx + 1], 1e-5))
                };
                h = {
                    let Node::Conv { kh, cout, stride, pad, idx, .. } = nodes[i + 4] else { panic!() };
                    conv_f64(&h, &params[idx], kh, cout, stride, pad)
                };
                let skip = if proj {
                    let Node::Conv { kh, cout, stride, pad, idx, .. } = nodes[i + 5] else { panic!() };
                    conv_f64(&o, &params[idx], kh, cout, stride, pad)
                } else {
                    x.clone()
                };
                for (hv, sv) in h.d.iter_mut().zip(&skip.d) {
                    *hv += sv;
                }
                x = h;
                i += if proj { 6 } else { 5 };
                while !matches!(nodes[i], Node::BlockEnd) {
                    i += 1;
                }
            }
            Node::BlockEnd => {}
        }
        i += 1;
    }
    let logits = logits.expect("network produced no logits");
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln() + m;
        total += lse - row[y];
    }
    total / labels.len() as f64
}

fn small_cnn_nodes() -> Vec<Node> {
    vec![
        Node::Conv { kh: 3, cin: 3, cout: 32, stride: 1, pad: 1, idx: 0 },
        Node::Bn { c: 32, idx: 1 },
        Node::Relu,
        Node::MaxPool2,
        Node::Conv { kh: 3, cin: 32, cout: 64, stride: 1, pad: 1, idx: 3 },
        Node::Bn { c: 64, idx: 4 },
        Node::Relu,
        Node::MaxPool2,
        Node::Conv { kh: 3, cin: 64, cout: 128, stride: 1, pad: 1, idx: 6 },
        Node::Bn { c: 128, idx: 7 },
        Node::Relu,
        Node::Gap,
        Node::Linear { fin: 128, fout: 3, idx: 9 },
    ]
}

fn wrn_nodes() -> Vec<Node> {
    // param order per block: bn1.g, bn1.b, conv1.w, bn2.g, bn2.b, conv2.w [, proj.w]
    let mut nodes = vec![Node::Conv { kh: 3, cin: 3, cout: 16, stride: 1, pad: 1, idx: 0 }];
    let mut idx = 1;
    let mut block = |nodes: &mut Vec<Node>, cin: usize, cout: usize, stride: usize| {
        let proj = cin != cout || stride != 1;
        nodes.push(Node::BlockStart { proj });
        nodes.push(Node::Bn { c: cin, idx });
        nodes.push(Node::Conv { kh: 3, cin, cout, stride, pad: 1, idx: idx + 2 });
        nodes.push(Node::Bn { c: cout, idx: idx + 3 });
        nodes.push(Node::Conv { kh: 3, cin: cout, cout, stride: 1, pad: 1, idx: idx + 5 });
        if proj {
            nodes.push(Node::Conv { kh: 1, cin, cout, stride, pad: 0, idx: idx + 6 });
        }
        nodes.push(Node::BlockEnd);
        idx += if proj { 7 } else { 6 };
    };
    block(&mut nodes, 16, 16, 1);
    block(&mut nodes, 16, 16, 1);
    block(&mut nodes, 16, 32, 2);
    block(&mut nodes, 32, 32, 1);
    block(&mut nodes, 32, 64, 2);
    block(&mut nodes, 64, 64, 1);
    nodes.push(Node::Bn { c: 64, idx });
    nodes.push(Node::Relu);
    nodes.push(Node::Gap);
    nodes.push(Node::Linear { fin: 64, fout: 3, idx: idx + 2 });
    nodes
}

fn extract_params(model: &mut ModelState) -> Params {
    model
        .net
        .params_mut()
        .iter()
        .map(|p| p.value.iter().map(|&v| v as f64).collect())
        .collect()
}

fn engine_grads(model: &mut ModelState, images: &Array4<f32>, labels: &[usize]) -> Vec<ArrayD<f32>> {
    model.net.zero_grad();
    let logits = model.net.forward(images.clone().into_dyn(), true);
    let logits = logits.into_dimensionality::<ndarray::Ix2>().unwrap();
    let (_, probs) = cross_entropy(logits.view(), labels);
    let dl = cross_entropy_grad(&probs, labels, 1.0 / labels.len() as f32);
    model.net.backward(dl.into_dyn());
    model.net.params_mut().iter().map(|p| p.grad.clone()).collect()
}

fn check_against_oracle(arch: ArchId, nodes: &[Node]) {
    let mut model = build_model(arch, 3, 42).unwrap();
    let mut rng = rng_from_seed(7);
    let batch = 4;
    let side = 8;
    let mut images = Array4::<f32>::zeros((batch, side, side, 3));
    for v in images.iter_mut() {
        *v = rng.random_range(0.0f32..1.0);
    }
    let labels: Vec<usize> = (0..batch).map(|i| i % 3).collect();

    let grads = engine_grads(&mut model, &images, &labels);
    let mut params = extract_params(&mut model);
    let t4 = T4 {
        d: images.iter().map(|&v| v as f64).collect(),
        b: batch,
        h: side,
        w: side,
        c: 3,
    };

    // sanity: oracle and engine agree on the loss itself
    let oracle_base = oracle_loss(nodes, &params, &t4, &labels);
    let engine_loss = {
        let mut m = model.clone();
        let logits = m.net.forward(images.clone().into_dyn(), true);
        let logits = logits.into_dimensionality::<ndarray::Ix2>().unwrap();
        let (losses, _) = cross_entropy(logits.view(), &labels);
        losses.iter().map(|&v| v as f64).sum::<f64>() / labels.len() as f64
    };
    assert!(
        (oracle_base - engine_loss).abs() < 1e-4,
        "oracle loss {oracle_base} vs engine loss {engine_loss}"
    );

    // directional derivative per tensor, along a unit-norm random direction
    let h = 1e-5;
    for (pi, grad) in grads.iter().enumerate() {
        let len = grad.len();
        let scale = 1.0 / (len as f64).sqrt();
        let dir: Vec<f64> = (0..len)
            .map(|_| if rng.random_range(0..2) == 0 { scale } else { -scale })
            .collect();
        let analytic: f64 = grad
            .as_slice()
            .unwrap()
            .iter()
            .zip(&dir)
            .map(|(&g, &d)| g as f64 * d)
            .sum();
        let saved = params[pi].clone();
        for (v, d) in params[pi].iter_mut().zip(&dir) {
            *v += h * d;
        }
        let lp = oracle_loss(nodes, &params, &t4, &labels);
        params[pi].clone_from(&saved);
        for (v, d) in params[pi].iter_mut().zip(&dir) {
            *v -= h * d;
        }
        let lm = oracle_loss(nodes, &params, &t4, &labels);
        params[pi].clone_from(&saved);
        let fd = (lp - lm) / (2.0 * h);
        let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-6);
        assert!(
            rel < 5e-3,
            "tensor {pi}: directional engine {analytic:.6e} vs oracle fd {fd:.6e} (rel {rel:.2e})"
        );
    }

    // sampled individual weights
    let mut checked = 0;
    while checked < 40 {
        let pi = rng.random_range(0..params.len());
        let ei = rng.random_range(0..params[pi].len());
        let analytic = grads[pi].as_slice().unwrap()[ei] as f64;
        let orig = params[pi][ei];
        params[pi][ei] = orig + h;
        let lp = oracle_loss(nodes, &params, &t4, &labels);
        params[pi][ei] = orig - h;
        let lm = oracle_loss(nodes, &params, &t4, &labels);
        params[pi][ei] = orig;
        let fd = (lp - lm) / (2.0 * h);
        if fd.abs() < 1e-4 && analytic.abs() < 1e-4 {
            continue; // a weight this batch barely excites
        }
        checked += 1;
        let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs());
        assert!(
            rel < 1e-2,
            "param {pi}[{ei}]: engine {analytic:.6e} vs oracle fd {fd:.6e} (rel {rel:.2e})"
        );
    }
}

#[test]
fn small_cnn_gradients_match_f64_oracle() {
    check_against_oracle(ArchId::SmallCnn, &small_cnn_nodes());
}

#[test]
fn wideresnet_gradients_match_f64_oracle() {
    check_against_oracle(ArchId::WideResnet16_1, &wrn_nodes());
}


// ---------------------------------------------------------------------------
// 2-parameter toy model
// ---------------------------------------------------------------------------

/// f64 reference loss for the toy model: logits_i = [w0*x_i, w1*x_i].
fn toy_loss_f64(w: [f64; 2], xs: &[f64], ys: &[usize]) -> f64 {
    let mut total = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let l0 = w[0] * x;
        let l1 = w[1] * x;
        let m = l0.max(l1);
        let lse = ((l0 - m).exp() + (l1 - m).exp()).ln() + m;
        let ly = if y == 0 { l0 } else { l1 };
        total += lse - ly;
    }
    total / xs.len() as f64
}

#[test]
fn two_parameter_gradient_matches_f64_finite_differences() {
    // 1x1 conv with one input channel and two outputs: exactly two weights.
    let w0 = 0.43f32;
    let w1 = -0.27f32;
    let weight = ArrayD::from_shape_vec(vec![1, 2], vec![w0, w1]).unwrap();
    let mut conv = Conv2d::new(1, 1, 1, 2, 1, 0, weight, None);

    let xs = [0.9f64, 0.35, 0.6, 0.15];
    let ys = [0usize, 1, 0, 1];
    let mut images = Array4::<f32>::zeros((4, 1, 1, 1));
    for (i, &x) in xs.iter().enumerate() {
        images[[i, 0, 0, 0]] = x as f32;
    }

    // engine gradient
    let y = conv.forward(images.clone().into_dyn(), true);
    let logits = y
        .into_shape_with_order(ndarray::IxDyn(&[4, 2]))
        .unwrap()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    let (_, probs) = cross_entropy(logits.view(), &ys);
    let dl = cross_entropy_grad(&probs, &ys, 1.0 / 4.0);
    conv.backward(
        dl.into_shape_with_order(ndarray::IxDyn(&[4, 1, 1, 2]))
            .unwrap(),
    );
    let engine_grad = [conv.weight.grad[[0, 0]] as f64, conv.weight.grad[[0, 1]] as f64];

    // f64 central differences
    let h = 1e-6;
    let w = [w0 as f64, w1 as f64];
    for k in 0..2 {
        let mut wp = w;
        let mut wm = w;
        wp[k] += h;
        wm[k] -= h;
        let fd = (toy_loss_f64(wp, &xs, &ys) - toy_loss_f64(wm, &xs, &ys)) / (2.0 * h);
        let rel = (engine_grad[k] - fd).abs() / fd.abs().max(1e-12);
        assert!(
            rel < 1e-4,
            "param {k}: engine {:.8e} vs fd {:.8e} (rel {rel:.2e})",
            engine_grad[k],
            fd
        );
    }

    // ascent step contract: delta_w == +lr * grad with momentum disabled
    let lr = 0.05f32;
    let before = conv.weight.value.clone();
    let grad_snapshot = conv.weight.grad.clone();
    let mut opt = Sgd::new(lr, 0.0, 0.0, true);
    opt.step(&mut conv.params_mut());
    let after = conv.weight.value.clone();
    for i in 0..2 {
        let expected = before[[0, i]] + lr * grad_snapshot[[0, i]];
        assert_eq!(after[[0, i]], expected, "ascent step must be exactly +lr*grad");
    }
}
