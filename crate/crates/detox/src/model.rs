//! Classifier architectures, model state, and bit-exact checkpointing.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayD, ArrayView4, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm2d, Conv2d, GlobalAvgPool, Linear, MaxPool2, Relu, ResidualBlock};
use crate::nn::loss::softmax;
use crate::nn::Network;
use crate::rng::{derive_seed, rng_from_seed};

const EVAL_BATCH: usize = 512;

/// Supported classifier architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchId {
    /// Three conv-norm-relu blocks (32/64/128 channels, two 2x pools),
    /// global average pool, linear head. The desk-scale reference net.
    #[serde(rename = "small_cnn")]
    SmallCnn,
    /// WideResNet-16-1: pre-activation residual blocks, widen factor 1.
    #[serde(rename = "wideresnet_16_1")]
    WideResnet16_1,
}

impl ArchId {
    pub fn parse(s: &str) -> Result<ArchId> {
        match s {
            "small_cnn" => Ok(ArchId::SmallCnn),
            "wideresnet_16_1" => Ok(ArchId::WideResnet16_1),
            other => Err(Error::config(format!("unknown architecture id: {other}"))),
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchId::SmallCnn => write!(f, "small_cnn"),
            ArchId::WideResnet16_1 => write!(f, "wideresnet_16_1"),
        }
    }
}

/// Which pipeline stage produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTag {
    Init,
    Sl,
    Au,
    Assft,
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StageTag::Init => "init",
            StageTag::Sl => "sl",
            StageTag::Au => "au",
            StageTag::Assft => "assft",
        };
        write!(f, "{s}")
    }
}

impl StageTag {
    pub fn parse(s: &str) -> Result<StageTag> {
        match s {
            "init" => Ok(StageTag::Init),
            "sl" => Ok(StageTag::Sl),
            "au" => Ok(StageTag::Au),
            "assft" => Ok(StageTag::Assft),
            other => Err(Error::format(format!("unknown stage tag: {other}"))),
        }
    }
}

/// A classifier plus the metadata needed to reproduce and reload it.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub arch: ArchId,
    pub class_count: usize,
    pub seed: u64,
    pub stage: StageTag,
    pub net: Network,
}

fn conv_init(
    rng: &mut rand_chacha::ChaCha8Rng,
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    pad: usize,
) -> Conv2d {
    let fan_in = (kh * kw * cin) as f32;
    let dist = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).unwrap();
    let mut w = ArrayD::zeros(vec![kh * kw * cin, cout]);
    for v in w.iter_mut() {
        *v = dist.sample(rng);
    }
    Conv2d::new(kh, kw, cin, cout, stride, pad, w, None)
}

fn linear_init(rng: &mut rand_chacha::ChaCha8Rng, fin: usize, fout: usize) -> Linear {
    let dist = Normal::new(0.0f32, 1.0 / (fin as f32).sqrt()).unwrap();
    let mut w = ArrayD::zeros(vec![fin, fout]);
    for v in w.iter_mut() {
        *v = dist.sample(rng);
    }
    Linear::new(w, ArrayD::zeros(vec![fout]))
}

fn build_small_cnn(class_count: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Network {
    let mut net = Network::default();
    net.push("conv1", conv_init(rng, 3, 3, 3, 32, 1, 1));
    net.push("bn1", BatchNorm2d::new(32));
    net.push("relu1", Relu::new());
    net.push("pool1", MaxPool2::new());
    net.push("conv2", conv_init(rng, 3, 3, 32, 64, 1, 1));
    net.push("bn2", BatchNorm2d::new(64));
    net.push("relu2", Relu::new());
    net.push("pool2", MaxPool2::new());
    net.push("conv3", conv_init(rng, 3, 3, 64, 128, 1, 1));
    net.push("bn3", BatchNorm2d::new(128));
    net.push("relu3", Relu::new());
    net.push("gap", GlobalAvgPool::new());
    net.push("fc", linear_init(rng, 128, class_count));
    net
}

fn residual_block(
    rng: &mut rand_chacha::ChaCha8Rng,
    cin: usize,
    cout: usize,
    stride: usize,
) -> ResidualBlock {
    let bn1 = BatchNorm2d::new(cin);
    let conv1 = conv_init(rng, 3, 3, cin, cout, stride, 1);
    let bn2 = BatchNorm2d::new(cout);
    let conv2 = conv_init(rng, 3, 3, cout, cout, 1, 1);
    let projection = if cin != cout || stride != 1 {
        Some(conv_init(rng, 1, 1, cin, cout, stride, 0))
    } else {
        None
    };
    ResidualBlock::new(bn1, conv1, bn2, conv2, projection)
}

fn build_wrn16(class_count: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Network {
    // depth 16 => (16-4)/6 = 2 blocks per group; widen factor 1.
    let mut net = Network::default();
    net.push("conv0", conv_init(rng, 3, 3, 3, 16, 1, 1));
    net.push("g1b1", residual_block(rng, 16, 16, 1));
    net.push("g1b2", residual_block(rng, 16, 16, 1));
    net.push("g2b1", residual_block(rng, 16, 32, 2));
    net.push("g2b2", residual_block(rng, 32, 32, 1));
    net.push("g3b1", residual_block(rng, 32, 64, 2));
    net.push("g3b2", residual_block(rng, 64, 64, 1));
    net.push("bn_final", BatchNorm2d::new(64));
    net.push("relu_final", Relu::new());
    net.push("gap", GlobalAvgPool::new());
    net.push("fc", linear_init(rng, 64, class_count));
    net
}

/// Construct a freshly initialized model. Initialization is a pure function
/// of `(arch, class_count, seed)`.
pub fn build_model(arch: ArchId, class_count: usize, seed: u64) -> Result<ModelState> {
    if class_count < 2 {
        return Err(Error::config(format!(
            "class_count must be at least 2, got {class_count}"
        )));
    }
    let mut rng = rng_from_seed(derive_seed(seed, &format!("init/{arch}")));
    let net = match arch {
        ArchId::SmallCnn => build_small_cnn(class_count, &mut rng),
        ArchId::WideResnet16_1 => build_wrn16(class_count, &mut rng),
    };
    Ok(ModelState {
        arch,
        class_count,
        seed,
        stage: StageTag::Init,
        net,
    })
}

impl ModelState {
    /// Raw logits in evaluation mode (running batch-norm statistics,
    /// no augmentation). Does not mutate `self`.
    pub fn predict_logits(&self, images: ArrayView4<f32>) -> Result<Array2<f32>> {
        let (n, _h, _w, c) = images.dim();
        if c != 3 {
            return Err(Error::data(format!("expected 3-channel images, got {c}")));
        }
        let mut net = self.net.clone();
        let mut out = Array2::<f32>::zeros((n, self.class_count));
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_BATCH).min(n);
            let batch = images
                .slice(ndarray::s![start..end, .., .., ..])
                .to_owned()
                .into_dyn();
            let logits = net.forward(batch, false);
            let logits = logits
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|_| Error::data("model produced non-2d logits".to_string()))?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&logits);
            start = end;
        }
        Ok(out)
    }

    /// Class-probability rows (softmax of the eval-mode logits). Each row is
    /// nonnegative and sums to 1 within float rounding.
    pub fn predict_proba(&self, images: ArrayView4<f32>) -> Result<Array2<f32>> {
        let logits = self.predict_logits(images)?;
        Ok(softmax(logits.view()))
    }

    /// Argmax predictions, ties broken toward the lower class index.
    pub fn predict_classes(&self, images: ArrayView4<f32>) -> Result<Vec<usize>> {
        let logits = self.predict_logits(images)?;
        Ok(argmax_rows(&logits))
    }

    /// All parameter and buffer tensors as little-endian bytes, for
    /// bit-exactness checks.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (_, t) in self.net.state() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode_checkpoint(self);
        crate::fsutil::write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<ModelState> {
        let mut f = fs::File::open(path)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        decode_checkpoint(&bytes)
    }
}

pub fn argmax_rows(m: &Array2<f32>) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            let mut bv = f32::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if v > bv {
                    bv = v;
                    best = i;
                }
            }
            best
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, header fields, then named tensors with shapes
// and raw little-endian f32 data. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"DETOXCK1";

fn put_str(out: &mut Vec<u8>, s: &str) {
    let b = s.as_bytes();
    out.extend_from_slice(&(b.len() as u16).to_le_bytes());
    out.extend_from_slice(b);
}

fn encode_checkpoint(m: &ModelState) -> Vec<u8> {
    let state = m.net.state();
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    put_str(&mut out, &m.arch.to_string());
    out.extend_from_slice(&(m.class_count as u32).to_le_bytes());
    put_str(&mut out, &m.stage.to_string());
    out.extend_from_slice(&m.seed.to_le_bytes());
    out.extend_from_slice(&(state.len() as u32).to_le_bytes());
    for (name, t) in &state {
        put_str(&mut out, name);
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::format("truncated checkpoint".to_string()));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format("bad utf8 in checkpoint".to_string()))
    }
}

fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut c = Cursor { b: bytes, pos: 0 };
    if c.take(8)? != CKPT_MAGIC {
        return Err(Error::format("not a checkpoint file (bad magic)".to_string()));
    }
    let arch = ArchId::parse(&c.string()?)?;
    let class_count = c.u32()? as usize;
    let stage = StageTag::parse(&c.string()?)?;
    let seed = c.u64()?;
    let n_tensors = c.u32()? as usize;
    let mut entries = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = c.string()?;
        let ndim = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = c.take(len * 4)?;
        let mut data = Vec::with_capacity(len);
        for ch in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes(ch.try_into().unwrap()));
        }
        let t = ArrayD::from_shape_vec(shape, data)
            .map_err(|e| Error::format(format!("bad tensor shape in checkpoint: {e}")))?;
        entries.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(Error::format("trailing bytes in checkpoint".to_string()));
    }
    let mut model = build_model(arch, class_count, seed)?;
    model.stage = stage;
    model.net.load_state(&entries)?;
    Ok(model)
}

/// Write a checkpoint to a byte buffer (used by tests for round-trip checks).
pub fn checkpoint_bytes(m: &ModelState) -> Vec<u8> {
    encode_checkpoint(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn same_seed_gives_bit_identical_weights() {
        let a = build_model(ArchId::SmallCnn, 10, 7).unwrap();
        let b = build_model(ArchId::SmallCnn, 10, 7).unwrap();
        assert_eq!(a.state_bytes(), b.state_bytes());
    }

    #[test]
    fn different_seeds_differ() {
        let a = build_model(ArchId::SmallCnn, 10, 7).unwrap();
        let b = build_model(ArchId::SmallCnn, 10, 8).unwrap();
        assert_ne!(a.state_bytes(), b.state_bytes());
    }

    #[test]
    fn predict_shape_and_row_sums() {
        let m = build_model(ArchId::SmallCnn, 10, 1).unwrap();
        let imgs = Array4::<f32>::from_elem((3, 16, 16, 3), 0.25);
        let p = m.predict_proba(imgs.view()).unwrap();
        assert_eq!(p.dim(), (3, 10));
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-5);
            for &v in row.iter() {
                assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn duplicate_inputs_give_identical_rows() {
        let m = build_model(ArchId::SmallCnn, 10, 2).unwrap();
        let mut imgs = Array4::<f32>::zeros((2, 12, 12, 3));
        for v in imgs.iter_mut() {
            *v = 0.5;
        }
        let p = m.predict_proba(imgs.view()).unwrap();
        let r0: Vec<f32> = p.row(0).to_vec();
        let r1: Vec<f32> = p.row(1).to_vec();
        assert_eq!(r0, r1);
    }

    #[test]
    fn class_count_too_small_rejected() {
        assert!(build_model(ArchId::SmallCnn, 1, 0).is_err());
    }

    #[test]
    fn wrn_forward_shape() {
        let m = build_model(ArchId::WideResnet16_1, 10, 3).unwrap();
        let imgs = Array4::<f32>::from_elem((2, 16, 16, 3), 0.1);
        let p = m.predict_proba(imgs.view()).unwrap();
        assert_eq!(p.dim(), (2, 10));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_model(ArchId::WideResnet16_1, 10, 11).unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let loaded = ModelState::load(&path).unwrap();
        assert_eq!(m.state_bytes(), loaded.state_bytes());
        assert_eq!(m.arch, loaded.arch);
        assert_eq!(m.stage, loaded.stage);
        assert_eq!(m.seed, loaded.seed);
        // saving the reloaded model reproduces the file byte-for-byte
        let again = checkpoint_bytes(&loaded);
        let original = std::fs::read(&path).unwrap();
        assert_eq!(original, again);
    }
}
