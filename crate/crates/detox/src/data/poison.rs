//! Dataset poisoning: select a target subset, inject the trigger, and (in
//! poison-label mode) rewrite labels to the target class.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::triggers::{apply_trigger, TriggerSpec};
use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Labels of tampered samples are rewritten to the target class.
    PoisonLabel,
    /// Labels are left untouched; only target-class samples are tampered.
    CleanLabel,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoisonConfig {
    pub rate_alpha: f64,
    pub target_class: usize,
    pub label_mode: LabelMode,
    pub seed: u64,
}

/// Round-half-up used for `m = n * alpha` and the filter quota.
pub fn round_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction + 0.5).floor() as usize
}

/// Draw `m` distinct elements from `pool` by partial Fisher-Yates shuffle.
fn sample_indices(pool: &mut Vec<usize>, m: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let n = pool.len();
    for i in 0..m {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool[..m].to_vec()
}

/// Build the tampered dataset: exactly `round(n * alpha)` samples get the
/// trigger. Poison-label mode draws uniformly from the whole dataset and
/// rewrites labels to the target class; clean-label mode draws only from
/// samples already labeled with the target class and leaves labels alone.
pub fn poison_dataset(
    clean: &LabeledDataset,
    cfg: &PoisonConfig,
    spec: &TriggerSpec,
) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&cfg.rate_alpha) {
        return Err(Error::config(format!(
            "poisoning rate {} outside [0,1]",
            cfg.rate_alpha
        )));
    }
    if cfg.target_class >= clean.class_count {
        return Err(Error::config(format!(
            "target class {} out of range for {} classes",
            cfg.target_class, clean.class_count
        )));
    }
    if clean.poison_mask.iter().any(|&m| m) {
        return Err(Error::data("input dataset is already poisoned".to_string()));
    }
    spec.validate()?;

    let n = clean.len();
    let m = round_count(n, cfg.rate_alpha);
    let mut out = clean.clone();
    if m == 0 {
        return Ok(out);
    }

    let mut rng = rng_from_seed(derive_seed(cfg.seed, "poison"));
    let chosen = match cfg.label_mode {
        LabelMode::PoisonLabel => {
            let mut pool: Vec<usize> = (0..n).collect();
            sample_indices(&mut pool, m, &mut rng)
        }
        LabelMode::CleanLabel => {
            let mut pool: Vec<usize> = (0..n)
                .filter(|&i| clean.labels[i] == cfg.target_class)
                .collect();
            if pool.len() < m {
                return Err(Error::data(format!(
                    "clean-label poisoning needs {m} samples of class {}, found {}",
                    cfg.target_class,
                    pool.len()
                )));
            }
            sample_indices(&mut pool, m, &mut rng)
        }
    };

    for &i in &chosen {
        let patched = apply_trigger(out.images.index_axis(ndarray::Axis(0), i), spec)?;
        out.images.index_axis_mut(ndarray::Axis(0), i).assign(&patched);
        if cfg.label_mode == LabelMode::PoisonLabel {
            out.labels[i] = cfg.target_class;
        }
        out.poison_mask[i] = true;
    }
    out.target_class = Some(cfg.target_class);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::triggers::badnets_patch;
    use ndarray::Array4;

    fn dataset(n: usize, classes: usize, seed: u64) -> LabeledDataset {
        let mut rng = rng_from_seed(seed);
        let mut images = Array4::<f32>::zeros((n, 8, 8, 3));
        for v in images.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let labels = (0..n).map(|i| i % classes).collect();
        LabeledDataset::new(images, labels, classes).unwrap()
    }

    fn cfg(rate: f64, mode: LabelMode) -> PoisonConfig {
        PoisonConfig {
            rate_alpha: rate,
            target_class: 3,
            label_mode: mode,
            seed: 5,
        }
    }

    #[test]
    fn poison_label_marks_exactly_m_samples() {
        let ds = dataset(100, 10, 1);
        let out = poison_dataset(&ds, &cfg(0.1, LabelMode::PoisonLabel), &badnets_patch(3)).unwrap();
        let (clean, poisoned) = out.subset_views();
        assert_eq!(poisoned.len(), 10);
        assert_eq!(clean.len() + poisoned.len(), 100);
        for &i in &poisoned {
            assert_eq!(out.labels[i], 3);
        }
        assert_eq!(out.target_class(), Some(3));
    }

    #[test]
    fn zero_rate_is_identity() {
        let ds = dataset(40, 4, 2);
        let out = poison_dataset(&ds, &cfg(0.0, LabelMode::PoisonLabel), &badnets_patch(3)).unwrap();
        assert_eq!(out.images, ds.images);
        assert_eq!(out.labels, ds.labels);
        assert!(out.poison_mask().iter().all(|&m| !m));
        assert_eq!(out.target_class(), None);
    }

    #[test]
    fn clean_label_draws_only_target_class_and_keeps_labels() {
        let ds = dataset(1000, 10, 3);
        let out = poison_dataset(&ds, &cfg(0.1, LabelMode::CleanLabel), &badnets_patch(3)).unwrap();
        let (_, poisoned) = out.subset_views();
        assert_eq!(poisoned.len(), 100);
        for &i in &poisoned {
            assert_eq!(out.labels[i], 3, "label rewritten");
            assert_eq!(ds.labels[i], 3, "drawn outside target class");
        }
        assert_eq!(out.labels, ds.labels);
    }

    #[test]
    fn clean_label_shortfall_is_a_named_error() {
        let ds = dataset(40, 10, 4); // only 4 samples per class
        let err = poison_dataset(&ds, &cfg(0.5, LabelMode::CleanLabel), &badnets_patch(3))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("class 3"), "{msg}");
        assert!(msg.contains("20"), "{msg}");
    }

    #[test]
    fn poison_label_changes_exactly_m_labels() {
        let ds = dataset(200, 10, 6);
        let out = poison_dataset(&ds, &cfg(0.25, LabelMode::PoisonLabel), &badnets_patch(3)).unwrap();
        let changed = ds
            .labels
            .iter()
            .zip(&out.labels)
            .filter(|(a, b)| a != b)
            .count();
        let already_target = out
            .subset_views()
            .1
            .iter()
            .filter(|&&i| ds.labels[i] == 3)
            .count();
        assert_eq!(changed + already_target, 50);
    }

    #[test]
    fn seeded_selection_is_reproducible() {
        let ds = dataset(100, 10, 7);
        let a = poison_dataset(&ds, &cfg(0.2, LabelMode::PoisonLabel), &badnets_patch(3)).unwrap();
        let b = poison_dataset(&ds, &cfg(0.2, LabelMode::PoisonLabel), &badnets_patch(3)).unwrap();
        assert_eq!(a.poison_mask, b.poison_mask);
        assert_eq!(a.images, b.images);
    }

    #[test]
    fn double_poisoning_rejected() {
        let ds = dataset(50, 5, 8);
        let cfg1 = PoisonConfig {
            rate_alpha: 0.1,
            target_class: 1,
            label_mode: LabelMode::PoisonLabel,
            seed: 0,
        };
        let once = poison_dataset(&ds, &cfg1, &badnets_patch(3)).unwrap();
        assert!(poison_dataset(&once, &cfg1, &badnets_patch(3)).is_err());
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_count(100, 0.105), 11); // 10.5 -> 11
        assert_eq!(round_count(100, 0.104), 10);
        assert_eq!(round_count(3, 0.5), 2); // 1.5 -> 2
    }
}
