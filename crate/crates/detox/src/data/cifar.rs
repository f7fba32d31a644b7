//! Importer for the CIFAR-10 binary format (`data_batch_*.bin`,
//! `test_batch.bin`: records of 1 label byte + 3072 channel-planar bytes).

use std::fs;
use std::path::Path;

use ndarray::Array4;
use rand::Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

const RECORD: usize = 1 + 3 * 32 * 32;

fn parse_records(bytes: &[u8]) -> Result<(Vec<usize>, Vec<[u8; 3072]>)> {
    if bytes.len() % RECORD != 0 {
        return Err(Error::format(format!(
            "cifar batch size {} is not a multiple of {RECORD}",
            bytes.len()
        )));
    }
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for rec in bytes.chunks_exact(RECORD) {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::format(format!("cifar label {label} out of range")));
        }
        labels.push(label);
        pixels.push(rec[1..].try_into().unwrap());
    }
    Ok((labels, pixels))
}

fn to_dataset(labels: Vec<usize>, pixels: Vec<[u8; 3072]>) -> Result<LabeledDataset> {
    let n = labels.len();
    let mut images = Array4::<f32>::zeros((n, 32, 32, 3));
    for (i, px) in pixels.iter().enumerate() {
        for ch in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    images[[i, y, x, ch]] = px[ch * 1024 + y * 32 + x] as f32 / 255.0;
                }
            }
        }
    }
    LabeledDataset::new(images, labels, 10)
}

fn subsample(
    labels: Vec<usize>,
    pixels: Vec<[u8; 3072]>,
    n: usize,
    seed: u64,
) -> (Vec<usize>, Vec<[u8; 3072]>) {
    if n >= labels.len() {
        return (labels, pixels);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut rng = rng_from_seed(seed);
    for i in 0..n {
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
    }
    let mut idx = order[..n].to_vec();
    idx.sort_unstable();
    (
        idx.iter().map(|&i| labels[i]).collect(),
        idx.iter().map(|&i| pixels[i]).collect(),
    )
}

/// Read CIFAR-10 binary batches from `dir` and return seeded random
/// subsamples of `train_n` / `test_n` records as `[0,1]` float datasets.
pub fn import_cifar10(dir: &Path, train_n: usize, test_n: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut train_labels = Vec::new();
    let mut train_pixels = Vec::new();
    let mut found = false;
    for b in 1..=5 {
        let p = dir.join(format!("data_batch_{b}.bin"));
        if !p.exists() {
            continue;
        }
        found = true;
        let (l, px) = parse_records(&fs::read(&p)?)?;
        train_labels.extend(l);
        train_pixels.extend(px);
    }
    if !found {
        return Err(Error::config(format!(
            "no data_batch_*.bin files under {}",
            dir.display()
        )));
    }
    let test_path = dir.join("test_batch.bin");
    if !test_path.exists() {
        return Err(Error::config(format!("missing {}", test_path.display())));
    }
    let (test_labels, test_pixels) = parse_records(&fs::read(&test_path)?)?;

    let (tl, tp) = subsample(train_labels, train_pixels, train_n, derive_seed(seed, "cifar-train"));
    let (el, ep) = subsample(test_labels, test_pixels, test_n, derive_seed(seed, "cifar-test"));
    Ok((to_dataset(tl, tp)?, to_dataset(el, ep)?))
}
