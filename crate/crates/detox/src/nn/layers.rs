//! Layer implementations. Activations are NHWC `Array4` carried as `ArrayD`;
//! fully-connected activations are `(batch, features)`.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix2, Ix4};
use rayon::prelude::*;

use super::linalg::{matmul, matmul_acc_t};
use super::{Layer, Param};

fn as4(x: ArrayD<f32>) -> Array4<f32> {
    x.into_dimensionality::<Ix4>().expect("expected NHWC tensor")
}

fn as2(x: ArrayD<f32>) -> Array2<f32> {
    x.into_dimensionality::<Ix2>().expect("expected 2-d tensor")
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// 2-d convolution via im2col + GEMM. Weight layout is
/// `(kh*kw*cin, cout)` with the patch flattened row-major (dy, dx, cin).
#[derive(Clone)]
pub struct Conv2d {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<ConvCache>,
}

#[derive(Clone)]
struct ConvCache {
    col: Array2<f32>,
    in_dims: (usize, usize, usize), // (b, h, w) before padding
}

impl Conv2d {
    pub fn new(
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
        weight: ArrayD<f32>,
        bias: Option<ArrayD<f32>>,
    ) -> Self {
        assert_eq!(weight.shape(), [kh * kw * cin, cout]);
        Conv2d {
            kh,
            kw,
            cin,
            cout,
            stride,
            pad,
            weight: Param::new(weight, true),
            bias: bias.map(|b| Param::new(b, false)),
            cache: None,
        }
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kh) / self.stride + 1,
            (w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    fn pad_input(&self, x: &Array4<f32>) -> Array4<f32> {
        if self.pad == 0 {
            return x.clone();
        }
        let (b, h, w, c) = x.dim();
        let p = self.pad;
        let mut xp = Array4::<f32>::zeros((b, h + 2 * p, w + 2 * p, c));
        xp.slice_mut(ndarray::s![.., p..p + h, p..p + w, ..]).assign(x);
        xp
    }

    fn im2col(&self, xp: &Array4<f32>, ho: usize, wo: usize) -> Array2<f32> {
        let (b, hp, wp, c) = xp.dim();
        let k = self.kh * self.kw * c;
        let xs = xp.as_slice().expect("padded input is standard layout");
        let mut col = Array2::<f32>::zeros((b * ho * wo, k));
        {
            let cs = col.as_slice_mut().expect("col is standard layout");
            cs.par_chunks_mut(ho * wo * k).enumerate().for_each(|(bi, rows)| {
                let base = bi * hp * wp * c;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let row = (oy * wo + ox) * k;
                        for dy in 0..self.kh {
                            let iy = oy * self.stride + dy;
                            let src = base + (iy * wp + ox * self.stride) * c;
                            let dst = row + dy * self.kw * c;
                            rows[dst..dst + self.kw * c]
                                .copy_from_slice(&xs[src..src + self.kw * c]);
                        }
                    }
                }
            });
        }
        col
    }

    fn col2im(&self, dcol: &Array2<f32>, b: usize, hp: usize, wp: usize, ho: usize, wo: usize) -> Array4<f32> {
        let c = self.cin;
        let k = self.kh * self.kw * c;
        let mut dxp = Array4::<f32>::zeros((b, hp, wp, c));
        let ds = dcol.as_slice().expect("dcol is standard layout");
        {
            let out = dxp.as_slice_mut().expect("dxp is standard layout");
            out.par_chunks_mut(hp * wp * c).enumerate().for_each(|(bi, img)| {
                let rows = &ds[bi * ho * wo * k..(bi + 1) * ho * wo * k];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let row = (oy * wo + ox) * k;
                        for dy in 0..self.kh {
                            let iy = oy * self.stride + dy;
                            let dst = (iy * wp + ox * self.stride) * c;
                            let src = row + dy * self.kw * c;
                            for i in 0..self.kw * c {
                                img[dst + i] += rows[src + i];
                            }
                        }
                    }
                }
            });
        }
        dxp
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x = as4(x);
        let (b, h, w, cin) = x.dim();
        assert_eq!(cin, self.cin, "conv input channels");
        let (ho, wo) = self.out_dims(h, w);
        let xp = self.pad_input(&x);
        let col = self.im2col(&xp, ho, wo);
        let mut y = matmul(col.view(), self.weight.value.view().into_dimensionality().unwrap());
        if let Some(bias) = &self.bias {
            let bv = bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            y += &bv.insert_axis(Axis(0));
        }
        if train {
            self.cache = Some(ConvCache { col, in_dims: (b, h, w) });
        }
        y.into_shape_with_order((b, ho, wo, self.cout))
            .unwrap()
            .into_dyn()
    }

    fn backward(&mut self, dy: ArrayD<f32>) -> ArrayD<f32> {
        let cache = self.cache.take().expect("conv backward without forward");
        let dy = as4(dy);
        let (b, ho, wo, cout) = dy.dim();
        let (bb, h, w) = cache.in_dims;
        assert_eq!(b, bb);
        let dy2 = dy
            .into_shape_with_order((b * ho * wo, cout))
            .unwrap();
        let dw = matmul_acc_t(cache.col.view(), dy2.view());
        self.weight.grad += &dw;
        if let Some(bias) = &mut self.bias {
            let db = dy2.sum_axis(Axis(0));
            let mut g = bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            g += &db;
        }
        let wt = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let dcol = matmul(dy2.view(), wt.t());
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        let dxp = self.col2im(&dcol, b, hp, wp, ho, wo);
        let p = self.pad;
        let dx = if p == 0 {
            dxp
        } else {
            dxp.slice(ndarray::s![.., p..p + h, p..p + w, ..]).to_owned()
        };
        dx.into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    fn state(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut v = vec![("weight".to_string(), self.weight.value.clone())];
        if let Some(b) = &self.bias {
            v.push(("bias".to_string(), b.value.clone()));
        }
        v
    }

    fn state_mut(&mut self) -> Vec<(String, &mut ArrayD<f32>)> {
        let mut v = vec![("weight".to_string(), &mut self.weight.value)];
        if let Some(b) = &mut self.bias {
            v.push(("bias".to_string(), &mut b.value));
        }
        v
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

/// Per-channel batch normalization over NHWC input. Uses biased batch
/// variance for both normalization and the running estimate.
#[derive(Clone)]
pub struct BatchNorm2d {
    pub c: usize,
    pub eps: f32,
    pub momentum: f32,
    /// When false, train-mode forwards normalize with batch statistics but
    /// leave the running estimates untouched.
    pub track_stats: bool,
    /// When true, train-mode forwards normalize with the (frozen) running
    /// statistics instead of batch statistics.
    pub frozen_norm: bool,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: ArrayD<f32>,
    pub running_var: ArrayD<f32>,
    cache: Option<BnCache>,
}

#[derive(Clone)]
struct BnCache {
    xhat: Array2<f32>,
    invstd: Array1<f32>,
    dims: (usize, usize, usize, usize),
    frozen: bool,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        BatchNorm2d {
            c,
            eps: 1e-5,
            momentum: 0.1,
            track_stats: true,
            frozen_norm: false,
            gamma: Param::new(ArrayD::ones(vec![c]), false),
            beta: Param::new(ArrayD::zeros(vec![c]), false),
            running_mean: ArrayD::zeros(vec![c]),
            running_var: ArrayD::ones(vec![c]),
            cache: None,
        }
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x = as4(x);
        let (b, h, w, c) = x.dim();
        assert_eq!(c, self.c, "batchnorm channels");
        let n = (b * h * w) as f32;
        let x2 = x.into_shape_with_order((b * h * w, c)).unwrap();
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();

        let (mean, var) = if train && !self.frozen_norm {
            let mean = x2.sum_axis(Axis(0)) / n;
            let mut var = Array1::<f32>::zeros(c);
            for row in x2.rows() {
                for (j, v) in row.iter().enumerate() {
                    let d = v - mean[j];
                    var[j] += d * d;
                }
            }
            var /= n;
            if self.track_stats {
                let rm = self.running_mean.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
                let rv = self.running_var.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
                ndarray::Zip::from(rm).and(&mean).for_each(|r, &m| {
                    *r = (1.0 - self.momentum) * *r + self.momentum * m;
                });
                ndarray::Zip::from(rv).and(&var).for_each(|r, &v| {
                    *r = (1.0 - self.momentum) * *r + self.momentum * v;
                });
            }
            (mean, var)
        } else {
            (
                self.running_mean.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned(),
                self.running_var.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned(),
            )
        };

        let invstd = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = x2;
        for mut row in xhat.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) * invstd[j];
            }
        }
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * gamma[j] + beta[j];
            }
        }
        if train {
            self.cache = Some(BnCache {
                xhat,
                invstd,
                dims: (b, h, w, c),
                frozen: self.frozen_norm,
            });
        }
        y.into_shape_with_order((b, h, w, c)).unwrap().into_dyn()
    }

    fn backward(&mut self, dy: ArrayD<f32>) -> ArrayD<f32> {
        let BnCache { xhat, invstd, dims, frozen } =
            self.cache.take().expect("bn backward without forward");
        let (b, h, w, c) = dims;
        let n = (b * h * w) as f32;
        let dy2 = as4(dy).into_shape_with_order((b * h * w, c)).unwrap();

        let mut dgamma = Array1::<f32>::zeros(c);
        let mut dbeta = Array1::<f32>::zeros(c);
        for (dyr, xr) in dy2.rows().into_iter().zip(xhat.rows()) {
            for j in 0..c {
                dgamma[j] += dyr[j] * xr[j];
                dbeta[j] += dyr[j];
            }
        }
        {
            let mut g = self.gamma.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            g += &dgamma;
            let mut bgrad = self.beta.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            bgrad += &dbeta;
        }

        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut dx = dy2;
        if frozen {
            // normalization constants did not depend on the batch
            for mut dxr in dx.rows_mut() {
                for j in 0..c {
                    dxr[j] *= gamma[j] * invstd[j];
                }
            }
        } else {
            for (mut dxr, xr) in dx.rows_mut().into_iter().zip(xhat.rows()) {
                for j in 0..c {
                    let term = n * dxr[j] - dbeta[j] - xr[j] * dgamma[j];
                    dxr[j] = gamma[j] * invstd[j] / n * term;
                }
            }
        }
        dx.into_shape_with_order((b, h, w, c)).unwrap().into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn set_stat_tracking(&mut self, on: bool) {
        self.track_stats = on;
    }

    fn set_frozen_norm(&mut self, on: bool) {
        self.frozen_norm = on;
    }

    fn state(&self) -> Vec<(String, ArrayD<f32>)> {
        vec![
            ("gamma".to_string(), self.gamma.value.clone()),
            ("beta".to_string(), self.beta.value.clone()),
            ("running_mean".to_string(), self.running_mean.clone()),
            ("running_var".to_string(), self.running_var.clone()),
        ]
    }

    fn state_mut(&mut self) -> Vec<(String, &mut ArrayD<f32>)> {
        vec![
            ("gamma".to_string(), &mut self.gamma.value),
            ("beta".to_string(), &mut self.beta.value),
            ("running_mean".to_string(), &mut self.running_mean),
            ("running_var".to_string(), &mut self.running_var),
        ]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

#[derive(Clone, Default)]
pub struct Relu {
    mask: Option<ArrayD<f32>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }
}

impl Layer for Relu {
    fn forward(&mut self, mut x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        x.mapv_inplace(|v| v.max(0.0));
        if train {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        x
    }

    fn backward(&mut self, mut dy: ArrayD<f32>) -> ArrayD<f32> {
        let mask = self.mask.take().expect("relu backward without forward");
        dy *= &mask;
        dy
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// MaxPool 2x2
// ---------------------------------------------------------------------------

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
#[derive(Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<(Vec<u8>, (usize, usize, usize, usize))>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2 { argmax: None }
    }
}

impl Layer for MaxPool2 {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x = as4(x);
        let (b, h, w, c) = x.dim();
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Array4::<f32>::zeros((b, ho, wo, c));
        let mut arg = vec![0u8; b * ho * wo * c];
        let xs = x.as_slice().expect("pool input standard layout");
        {
            let ys = y.as_slice_mut().unwrap();
            for bi in 0..b {
                for oy in 0..ho {
                    for ox in 0..wo {
                        for ch in 0..c {
                            let mut best = f32::NEG_INFINITY;
                            let mut code = 0u8;
                            for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                                let idx = ((bi * h + oy * 2 + dy) * w + ox * 2 + dx) * c + ch;
                                if xs[idx] > best {
                                    best = xs[idx];
                                    code = k as u8;
                                }
                            }
                            let oidx = ((bi * ho + oy) * wo + ox) * c + ch;
                            ys[oidx] = best;
                            arg[oidx] = code;
                        }
                    }
                }
            }
        }
        if train {
            self.argmax = Some((arg, (b, h, w, c)));
        }
        y.into_dyn()
    }

    fn backward(&mut self, dy: ArrayD<f32>) -> ArrayD<f32> {
        let (arg, (b, h, w, c)) = self.argmax.take().expect("pool backward without forward");
        let dy = as4(dy);
        let (_, ho, wo, _) = dy.dim();
        let mut dx = Array4::<f32>::zeros((b, h, w, c));
        let dys = dy.as_slice().unwrap();
        let dxs = dx.as_slice_mut().unwrap();
        const OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        let oidx = ((bi * ho + oy) * wo + ox) * c + ch;
                        let (dyo, dxo) = OFFSETS[arg[oidx] as usize];
                        let idx = ((bi * h + oy * 2 + dyo) * w + ox * 2 + dxo) * c + ch;
                        dxs[idx] = dys[oidx];
                    }
                }
            }
        }
        dx.into_dyn()
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// Global average pool
// ---------------------------------------------------------------------------

#[derive(Clone, Default)]
pub struct GlobalAvgPool {
    dims: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { dims: None }
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x = as4(x);
        let (b, h, w, c) = x.dim();
        let x2 = x.into_shape_with_order((b, h * w, c)).unwrap();
        let y = x2.sum_axis(Axis(1)) / (h * w) as f32;
        if train {
            self.dims = Some((b, h, w, c));
        }
        y.into_dyn()
    }

    fn backward(&mut self, dy: ArrayD<f32>) -> ArrayD<f32> {
        let (b, h, w, c) = self.dims.take().expect("pool backward without forward");
        let dy = as2(dy);
        let scale = 1.0 / (h * w) as f32;
        let mut dx = Array4::<f32>::zeros((b, h, w, c));
        for bi in 0..b {
            for ch in 0..c {
                let g = dy[[bi, ch]] * scale;
                for y_ in 0..h {
                    for x_ in 0..w {
                        dx[[bi, y_, x_, ch]] = g;
                    }
                }
            }
        }
        dx.into_dyn()
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct Linear {
    pub weight: Param, // (in, out)
    pub bias: Param,   // (out)
    cache: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(weight: ArrayD<f32>, bias: ArrayD<f32>) -> Self {
        Linear {
            weight: Param::new(weight, true),
            bias: Param::new(bias, false),
            cache: None,
        }
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x = as2(x);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = matmul(x.view(), w);
        y += &bv.insert_axis(Axis(0));
        if train {
            self.cache = Some(x);
        }
        y.into_dyn()
    }

    fn backward(&mut self, dy: ArrayD<f32>) -> ArrayD<f32> {
        let x = self.cache.take().expect("linear backward without forward");
        let dy = as2(dy);
        let dw = matmul_acc_t(x.view(), dy.view());
        self.weight.grad += &dw;
        {
            let db = dy.sum_axis(Axis(0));
            let mut g = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            g += &db;
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        matmul(dy.view(), w.t()).into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn state(&self) -> Vec<(String, ArrayD<f32>)> {
        vec![
            ("weight".to_string(), self.weight.value.clone()),
            ("bias".to_string(), self.bias.value.clone()),
        ]
    }

    fn state_mut(&mut self) -> Vec<(String, &mut ArrayD<f32>)> {
        vec![
            ("weight".to_string(), &mut self.weight.value),
            ("bias".to_string(), &mut self.bias.value),
        ]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// Pre-activation residual block (WideResNet basic block)
// ---------------------------------------------------------------------------

/// `y = conv2(relu(bn2(conv1(o)))) + shortcut`, where `o = relu(bn1(x))`,
/// shortcut is `x` when shapes match, else a 1x1 projection of `o`.
#[derive(Clone)]
pub struct ResidualBlock {
    bn1: BatchNorm2d,
    relu1: Relu,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    conv2: Conv2d,
    projection: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new(bn1: BatchNorm2d, conv1: Conv2d, bn2: BatchNorm2d, conv2: Conv2d, projection: Option<Conv2d>) -> Self {
        ResidualBlock {
            bn1,
            relu1: Relu::new(),
            conv1,
            bn2,
            relu2: Relu::new(),
            conv2,
            projection,
        }
    }
}

impl Layer for ResidualBlock {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let o = self.relu1.forward(self.bn1.forward(x.clone(), train), train);
        let mut h = self.conv1.forward(o.clone(), train);
        h = self.relu2.forward(self.bn2.forward(h, train), train);
        h = self.conv2.forward(h, train);
        let skip = match &mut self.projection {
            Some(proj) => proj.forward(o, train),
            None => x,
        };
        h + skip
    }

    fn backward(&mut self, dy: ArrayD<f32>) -> ArrayD<f32> {
        let mut dh = self.conv2.backward(dy.clone());
        dh = self.bn2.backward(self.relu2.backward(dh));
        let mut do_ = self.conv1.backward(dh);
        match &mut self.projection {
            Some(proj) => {
                do_ += &proj.backward(dy);
                self.bn1.backward(self.relu1.backward(do_))
            }
            None => {
                let mut dx = self.bn1.backward(self.relu1.backward(do_));
                dx += &dy;
                dx
            }
        }
    }

    fn set_stat_tracking(&mut self, on: bool) {
        self.bn1.set_stat_tracking(on);
        self.bn2.set_stat_tracking(on);
    }

    fn set_frozen_norm(&mut self, on: bool) {
        self.bn1.set_frozen_norm(on);
        self.bn2.set_frozen_norm(on);
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv1.params_mut());
        v.extend(self.bn2.params_mut());
        v.extend(self.conv2.params_mut());
        if let Some(p) = &mut self.projection {
            v.extend(p.params_mut());
        }
        v
    }

    fn state(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut v = Vec::new();
        for (prefix, s) in [
            ("bn1", self.bn1.state()),
            ("conv1", self.conv1.state()),
            ("bn2", self.bn2.state()),
            ("conv2", self.conv2.state()),
        ] {
            v.extend(s.into_iter().map(|(k, t)| (format!("{prefix}.{k}"), t)));
        }
        if let Some(p) = &self.projection {
            v.extend(p.state().into_iter().map(|(k, t)| (format!("proj.{k}"), t)));
        }
        v
    }

    fn state_mut(&mut self) -> Vec<(String, &mut ArrayD<f32>)> {
        let mut v = Vec::new();
        for (k, t) in self.bn1.state_mut() {
            v.push((format!("bn1.{k}"), t));
        }
        for (k, t) in self.conv1.state_mut() {
            v.push((format!("conv1.{k}"), t));
        }
        for (k, t) in self.bn2.state_mut() {
            v.push((format!("bn2.{k}"), t));
        }
        for (k, t) in self.conv2.state_mut() {
            v.push((format!("conv2.{k}"), t));
        }
        if let Some(p) = &mut self.projection {
            for (k, t) in p.state_mut() {
                v.push((format!("proj.{k}"), t));
            }
        }
        v
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
