//! On-disk dataset format: a directory holding
//!
//! * `meta.json` — class count, dims, target class, trigger/label-mode echo;
//! * `images.bin` — magic `DETOXIM1`, four u64 LE dims, then raw f32 LE data;
//! * `labels.txt` — one class id per line;
//! * `mask.txt` — one `0`/`1` per line.
//!
//! The round trip is bit-exact: pixel bytes are stored raw.

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::poison::LabelMode;
use super::triggers::TriggerSpec;
use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::fsutil;

const IMG_MAGIC: &[u8; 8] = b"DETOXIM1";

/// Sidecar metadata stored with a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema: String,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub class_count: usize,
    pub target_class: Option<usize>,
    /// Echo of the trigger used to poison this dataset, if any.
    pub trigger: Option<TriggerSpec>,
    pub label_mode: Option<LabelMode>,
}

pub const DATASET_SCHEMA: &str = "detox-dataset/1";

/// Write a dataset directory. `trigger`/`label_mode` echo how it was built.
pub fn save_dataset(
    ds: &LabeledDataset,
    dir: &Path,
    trigger: Option<&TriggerSpec>,
    label_mode: Option<LabelMode>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (h, w, c) = ds.image_dims();
    let meta = DatasetMeta {
        schema: DATASET_SCHEMA.to_string(),
        n: ds.len(),
        height: h,
        width: w,
        channels: c,
        class_count: ds.class_count,
        target_class: ds.target_class,
        trigger: trigger.cloned(),
        label_mode,
    };
    fsutil::write_atomic_string(&dir.join("meta.json"), &serde_json::to_string_pretty(&meta)?)?;

    let mut img = Vec::with_capacity(16 + ds.images.len() * 4);
    img.extend_from_slice(IMG_MAGIC);
    for d in [ds.len(), h, w, c] {
        img.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in ds.images.iter() {
        img.extend_from_slice(&v.to_le_bytes());
    }
    fsutil::write_atomic(&dir.join("images.bin"), &img)?;

    let labels: String = ds.labels.iter().map(|l| format!("{l}\n")).collect();
    fsutil::write_atomic_string(&dir.join("labels.txt"), &labels)?;

    let mask: String = ds
        .poison_mask
        .iter()
        .map(|&m| if m { "1\n" } else { "0\n" })
        .collect();
    fsutil::write_atomic_string(&dir.join("mask.txt"), &mask)?;
    Ok(())
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(LabeledDataset, DatasetMeta)> {
    let meta_path = dir.join("meta.json");
    let meta_str = fs::read_to_string(&meta_path)
        .map_err(|e| Error::format(format!("cannot read {}: {e}", meta_path.display())))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_str)
        .map_err(|e| Error::format(format!("bad meta.json: {e}")))?;
    if meta.schema != DATASET_SCHEMA {
        return Err(Error::format(format!(
            "unsupported dataset schema {}",
            meta.schema
        )));
    }

    let mut raw = Vec::new();
    fs::File::open(dir.join("images.bin"))?.read_to_end(&mut raw)?;
    if raw.len() < 40 || &raw[..8] != IMG_MAGIC {
        return Err(Error::format("images.bin: bad magic".to_string()));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u64::from_le_bytes(raw[8 + i * 8..16 + i * 8].try_into().unwrap()) as usize;
    }
    let [n, h, w, c] = dims;
    if (n, h, w, c) != (meta.n, meta.height, meta.width, meta.channels) {
        return Err(Error::format(
            "images.bin dims disagree with meta.json".to_string(),
        ));
    }
    let need = n * h * w * c * 4;
    let body = &raw[40..];
    if body.len() != need {
        return Err(Error::format(format!(
            "images.bin holds {} data bytes, expected {need}",
            body.len()
        )));
    }
    let mut data = Vec::with_capacity(n * h * w * c);
    for ch in body.chunks_exact(4) {
        data.push(f32::from_le_bytes(ch.try_into().unwrap()));
    }
    let images = Array4::from_shape_vec((n, h, w, c), data)
        .map_err(|e| Error::format(format!("images.bin: {e}")))?;

    let labels_str = fs::read_to_string(dir.join("labels.txt"))?;
    let labels = labels_str
        .lines()
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(format!("bad label line: {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mask_str = fs::read_to_string(dir.join("mask.txt"))?;
    let poison_mask = mask_str
        .lines()
        .map(|l| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::format(format!("bad mask line: {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;

    if labels.len() != n || poison_mask.len() != n {
        return Err(Error::format(format!(
            "labels/mask length ({}, {}) disagree with n={n}",
            labels.len(),
            poison_mask.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= meta.class_count) {
        return Err(Error::format(format!(
            "label {bad} out of range for {} classes",
            meta.class_count
        )));
    }

    let ds = LabeledDataset {
        images,
        labels,
        class_count: meta.class_count,
        poison_mask,
        target_class: meta.target_class,
    };
    Ok((ds, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::poison::{poison_dataset, PoisonConfig};
    use crate::data::triggers::badnets_patch;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_dataset(n: usize) -> LabeledDataset {
        let mut rng = rng_from_seed(99);
        let mut images = Array4::<f32>::zeros((n, 6, 6, 3));
        for v in images.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let labels = (0..n).map(|i| i % 4).collect();
        LabeledDataset::new(images, labels, 4).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = random_dataset(20);
        let spec = badnets_patch(3);
        let cfg = PoisonConfig {
            rate_alpha: 0.25,
            target_class: 2,
            label_mode: LabelMode::PoisonLabel,
            seed: 1,
        };
        let poisoned = poison_dataset(&ds, &cfg, &spec).unwrap();
        save_dataset(&poisoned, dir.path(), Some(&spec), Some(LabelMode::PoisonLabel)).unwrap();
        let (back, meta) = load_dataset(dir.path()).unwrap();

        assert_eq!(back.labels, poisoned.labels);
        assert_eq!(back.poison_mask, poisoned.poison_mask);
        assert_eq!(back.target_class, poisoned.target_class);
        assert_eq!(meta.trigger.as_ref().map(|t| t.kind()), Some("patch"));
        // pixel-level bit-exactness
        let a: Vec<u32> = poisoned.images.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.images.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);

        // saving again reproduces identical files
        let dir2 = tempfile::tempdir().unwrap();
        save_dataset(&back, dir2.path(), meta.trigger.as_ref(), meta.label_mode).unwrap();
        for f in ["images.bin", "labels.txt", "mask.txt", "meta.json"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(dir2.path().join(f)).unwrap(),
                "{f} differs"
            );
        }
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = random_dataset(4);
        save_dataset(&ds, dir.path(), None, None).unwrap();
        let p = dir.path().join("images.bin");
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn unknown_meta_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = random_dataset(4);
        save_dataset(&ds, dir.path(), None, None).unwrap();
        let p = dir.path().join("meta.json");
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        v["surprise"] = serde_json::json!(1);
        std::fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
