//! Supervised learning stage and the per-epoch metrics shared by all stages.

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, Strength};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{EvalMonitor, EvalReport};
use crate::model::{ModelState, StageTag};
use crate::nn::loss::{cross_entropy, cross_entropy_grad};
use crate::nn::sgd::Sgd;
use crate::rng::{derive_seed, derive_seed_n, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    /// Random horizontal flip plus a small translation.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub augmentation: Augmentation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            augmentation: Augmentation::Standard,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// One epoch's worth of stage metrics. Fields that do not apply to a stage
/// stay `None` (e.g. the poisoned-subset series on untampered data).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub clean_train_acc: Option<f64>,
    pub poisoned_train_acc: Option<f64>,
    pub clean_seen: usize,
    pub poisoned_seen: usize,
    pub pseudo_label_rate: Option<f64>,
    /// Held-out metrics, present when an evaluation monitor was attached.
    pub clean_accuracy: Option<f64>,
    pub attack_success_rate: Option<f64>,
}

impl EpochRecord {
    pub fn empty(epoch: usize) -> Self {
        EpochRecord {
            epoch,
            mean_loss: 0.0,
            clean_train_acc: None,
            poisoned_train_acc: None,
            clean_seen: 0,
            poisoned_seen: 0,
            pseudo_label_rate: None,
            clean_accuracy: None,
            attack_success_rate: None,
        }
    }

    /// Overall train accuracy recombined from the per-subset counts.
    pub fn overall_train_acc(&self) -> Option<f64> {
        let total = self.clean_seen + self.poisoned_seen;
        if total == 0 {
            return None;
        }
        let clean_correct = self.clean_train_acc.unwrap_or(0.0) * self.clean_seen as f64;
        let poisoned_correct = self.poisoned_train_acc.unwrap_or(0.0) * self.poisoned_seen as f64;
        Some((clean_correct + poisoned_correct) / total as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: StageTag,
    pub epochs: Vec<EpochRecord>,
    pub final_eval: Option<EvalReport>,
}

impl StageMetrics {
    pub fn new(stage: StageTag) -> Self {
        StageMetrics {
            stage,
            epochs: Vec::new(),
            final_eval: None,
        }
    }
}

/// Gather `idx` into a batch tensor, optionally augmenting each sample with
/// a seed derived from `(aug_seed, epoch, dataset index)`.
pub(crate) fn gather_batch(
    images: &Array4<f32>,
    idx: &[usize],
    aug: Option<(Strength, u64, usize)>,
) -> Array4<f32> {
    let (_, h, w, c) = images.dim();
    let mut out = Array4::<f32>::zeros((idx.len(), h, w, c));
    for (row, &i) in idx.iter().enumerate() {
        let src = images.index_axis(ndarray::Axis(0), i);
        match aug {
            Some((strength, base, epoch)) => {
                let seed = derive_seed_n(base, &[epoch as u64, i as u64]);
                out.index_axis_mut(ndarray::Axis(0), row)
                    .assign(&augment(src, strength, seed));
            }
            None => {
                out.index_axis_mut(ndarray::Axis(0), row).assign(&src);
            }
        }
    }
    out
}

pub(crate) fn shuffled(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Stage SL: standard supervised training on the (possibly tampered)
/// dataset, recording clean-subset and poisoned-subset training accuracy per
/// epoch so the backdoor-learning gap is visible.
pub fn supervised_train(
    model: ModelState,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    monitor: Option<&EvalMonitor>,
) -> Result<(ModelState, StageMetrics)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::data("cannot train on an empty dataset".to_string()));
    }
    if model.class_count != ds.class_count {
        return Err(Error::config(format!(
            "model has {} classes, dataset has {}",
            model.class_count, ds.class_count
        )));
    }

    // ground truth used for metric tracking only (never for updates)
    let poisoned_flags: Vec<bool> = ds.poison_mask().to_vec();
    let any_poisoned = poisoned_flags.iter().any(|&m| m);

    let mut model = model;
    let mut metrics = StageMetrics::new(StageTag::Sl);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, cfg.weight_decay, false);
    let shuffle_seed = derive_seed(cfg.seed, "sl/shuffle");
    let aug_seed = derive_seed(cfg.seed, "sl/augment");
    let n = ds.len();

    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_seed_n(shuffle_seed, &[epoch as u64]));
        let order = shuffled(n, &mut rng);
        let mut loss_sum = 0.0f64;
        let mut clean_correct = 0usize;
        let mut clean_seen = 0usize;
        let mut poisoned_correct = 0usize;
        let mut poisoned_seen = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let aug = match cfg.augmentation {
                Augmentation::None => None,
                Augmentation::Standard => Some((Strength::Weak, aug_seed, epoch)),
            };
            let batch = gather_batch(&ds.images, chunk, aug);
            let labels = ds.gather_labels(chunk);

            let logits = model.net.forward(batch.into_dyn(), true);
            let logits = logits.into_dimensionality::<ndarray::Ix2>().unwrap();
            let (losses, probs) = cross_entropy(logits.view(), &labels);
            let batch_loss: f64 = losses.iter().map(|&v| v as f64).sum::<f64>();
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: "sl".to_string(),
                    epoch,
                });
            }
            loss_sum += batch_loss;

            let preds = crate::model::argmax_rows(&logits);
            for ((&i, &label), &pred) in chunk.iter().zip(&labels).zip(&preds) {
                let hit = (pred == label) as usize;
                if poisoned_flags[i] {
                    poisoned_correct += hit;
                    poisoned_seen += 1;
                } else {
                    clean_correct += hit;
                    clean_seen += 1;
                }
            }

            let grad = cross_entropy_grad(&probs, &labels, 1.0 / labels.len() as f32);
            model.net.zero_grad();
            model.net.backward(grad.into_dyn());
            opt.step(&mut model.net.params_mut());
        }

        let mut rec = EpochRecord::empty(epoch);
        rec.mean_loss = loss_sum / n as f64;
        rec.clean_seen = clean_seen;
        rec.poisoned_seen = poisoned_seen;
        rec.clean_train_acc = (clean_seen > 0).then(|| clean_correct as f64 / clean_seen as f64);
        rec.poisoned_train_acc = if any_poisoned && poisoned_seen > 0 {
            Some(poisoned_correct as f64 / poisoned_seen as f64)
        } else {
            None
        };
        if let Some(mon) = monitor {
            if mon.due(epoch, cfg.epochs) {
                let (ca, asr) = mon.snapshot(&model)?;
                rec.clean_accuracy = Some(ca);
                rec.attack_success_rate = asr;
            }
        }
        metrics.epochs.push(rec);
    }

    model.stage = StageTag::Sl;
    if let Some(mon) = monitor {
        metrics.final_eval = Some(mon.report(&model)?);
    }
    Ok((model, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::linearly_separable_pair;
    use crate::model::{build_model, ArchId};

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            augmentation: Augmentation::None,
            seed: 3,
        }
    }

    #[test]
    fn zero_epochs_leaves_weights_untouched() {
        let ds = linearly_separable_pair(8, 8, 8, 0).unwrap();
        let model = build_model(ArchId::SmallCnn, 2, 1).unwrap();
        let before = model.state_bytes();
        let (out, metrics) = supervised_train(model, &ds, &tiny_config(0), None).unwrap();
        assert_eq!(out.state_bytes(), before);
        assert!(metrics.epochs.is_empty());
    }

    #[test]
    fn class_mismatch_rejected() {
        let ds = linearly_separable_pair(8, 8, 8, 0).unwrap();
        let model = build_model(ArchId::SmallCnn, 10, 1).unwrap();
        assert!(supervised_train(model, &ds, &tiny_config(1), None).is_err());
    }

    // Oracle first: a perceptron on raw pixels must separate the set, which
    // certifies linear separability before we ask the CNN to fit it.
    #[test]
    fn linearly_separable_set_is_fit_exactly() {
        let ds = linearly_separable_pair(40, 8, 8, 7).unwrap();

        // perceptron oracle on flattened pixels
        let dim = 8 * 8 * 3;
        let flat: Vec<Vec<f64>> = (0..ds.len())
            .map(|i| {
                ds.images
                    .index_axis(ndarray::Axis(0), i)
                    .iter()
                    .map(|&v| v as f64)
                    .collect()
            })
            .collect();
        let mut w = vec![0.0f64; dim + 1];
        let mut separated = false;
        for _ in 0..200 {
            let mut errors = 0;
            for (x, &y) in flat.iter().zip(&ds.labels) {
                let t = if y == 0 { -1.0 } else { 1.0 };
                let act: f64 = w[dim] + x.iter().zip(&w[..dim]).map(|(a, b)| a * b).sum::<f64>();
                if act * t <= 0.0 {
                    errors += 1;
                    for (wi, &xi) in w[..dim].iter_mut().zip(x) {
                        *wi += t * xi;
                    }
                    w[dim] += t;
                }
            }
            if errors == 0 {
                separated = true;
                break;
            }
        }
        assert!(separated, "oracle: set is not linearly separable");

        let model = build_model(ArchId::SmallCnn, 2, 1).unwrap();
        let (_, metrics) = supervised_train(model, &ds, &tiny_config(50), None).unwrap();
        let last = metrics.epochs.last().unwrap();
        assert_eq!(last.overall_train_acc(), Some(1.0));
    }

    #[test]
    fn untampered_data_has_no_poisoned_series() {
        let ds = linearly_separable_pair(12, 8, 8, 2).unwrap();
        let model = build_model(ArchId::SmallCnn, 2, 5).unwrap();
        let (_, metrics) = supervised_train(model, &ds, &tiny_config(2), None).unwrap();
        for rec in &metrics.epochs {
            assert!(rec.poisoned_train_acc.is_none());
            assert_eq!(rec.poisoned_seen, 0);
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let ds = linearly_separable_pair(16, 8, 8, 4).unwrap();
        let run = || {
            let model = build_model(ArchId::SmallCnn, 2, 9).unwrap();
            let cfg = TrainConfig {
                augmentation: Augmentation::Standard,
                ..tiny_config(3)
            };
            supervised_train(model, &ds, &cfg, None).unwrap().0
        };
        assert_eq!(run().state_bytes(), run().state_bytes());
    }

    #[test]
    fn subset_decomposition_matches_overall_accuracy() {
        use crate::data::poison::{poison_dataset, LabelMode, PoisonConfig};
        use crate::data::triggers::badnets_patch;

        let ds = linearly_separable_pair(30, 8, 8, 5).unwrap();
        let cfg = PoisonConfig {
            rate_alpha: 0.2,
            target_class: 1,
            label_mode: LabelMode::PoisonLabel,
            seed: 2,
        };
        let poisoned = poison_dataset(&ds, &cfg, &badnets_patch(3)).unwrap();
        let model = build_model(ArchId::SmallCnn, 2, 11).unwrap();
        let (_, metrics) = supervised_train(model, &poisoned, &tiny_config(3), None).unwrap();
        for rec in &metrics.epochs {
            assert_eq!(rec.clean_seen, 24);
            assert_eq!(rec.poisoned_seen, 6);
            let overall = rec.overall_train_acc().unwrap();
            let recombined = (rec.clean_train_acc.unwrap() * 24.0
                + rec.poisoned_train_acc.unwrap() * 6.0)
                / 30.0;
            assert!((overall - recombined).abs() < 1e-12);
        }
    }
}
