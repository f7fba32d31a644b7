//! Stage AU: remove the backdoor by gradient ascent on the filtered
//! poisoned subset.

use serde::{Deserialize, Serialize};

use crate::audit;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::EvalMonitor;
use crate::model::{ModelState, StageTag};
use crate::nn::loss::{cross_entropy, cross_entropy_grad};
use crate::nn::sgd::Sgd;
use crate::rng::{derive_seed, derive_seed_n, rng_from_seed};
use crate::train::{gather_batch, shuffled, EpochRecord, StageMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    /// Skip further ascent in an epoch once the batch loss exceeds this
    /// bound (nats). Unbounded ascent destroys the model.
    pub loss_clamp: Option<f32>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            epochs: 20,
            learning_rate: 0.01,
            loss_clamp: Some(10.0),
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Maximize the supervised loss on `ds[p_idx]`. Ascent uses the configured
/// learning rate with momentum off; weight decay does not apply.
pub fn active_unlearn(
    model: ModelState,
    ds: &LabeledDataset,
    p_idx: &[usize],
    cfg: &UnlearnConfig,
    monitor: Option<&EvalMonitor>,
) -> Result<(ModelState, StageMetrics)> {
    if p_idx.is_empty() {
        return Err(Error::config(
            "active unlearning needs a nonempty filtered poisoned subset".to_string(),
        ));
    }
    if let Some(&bad) = p_idx.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::config(format!("index {bad} out of range")));
    }
    if !matches!(model.stage, StageTag::Sl | StageTag::Assft) {
        return Err(Error::Stage {
            stage: "au".to_string(),
            reason: format!("expected an sl or assft checkpoint, got {}", model.stage),
        });
    }
    if cfg.learning_rate <= 0.0 {
        return Err(Error::config("learning rate must be positive".to_string()));
    }

    let mut model = model;
    let mut metrics = StageMetrics::new(StageTag::Au);
    let mut opt = Sgd::new(cfg.learning_rate, 0.0, 0.0, true);
    let shuffle_seed = derive_seed(cfg.seed, "au/shuffle");
    // ascend under the frozen normalization statistics: the forget set is
    // tiny and all one class, so batch statistics would both distort the
    // gradients and wreck the running estimates
    model.net.set_frozen_norm(true);

    for epoch in 0..cfg.epochs {
        let rec = audit::denied(|| -> Result<EpochRecord> {
            let mut rng = rng_from_seed(derive_seed_n(shuffle_seed, &[epoch as u64]));
            let order = shuffled(p_idx.len(), &mut rng);
            let mut loss_sum = 0.0f64;
            for chunk in order.chunks(cfg.batch_size) {
                let idx: Vec<usize> = chunk.iter().map(|&k| p_idx[k]).collect();
                let batch = gather_batch(&ds.images, &idx, None);
                let labels = ds.gather_labels(&idx);

                // measure pre-update loss without touching the model (the
                // clamp decision must leave a clamped model bit-identical)
                let batch_mean = {
                    let mut probe = model.net.clone();
                    let logits = probe.forward(batch.clone().into_dyn(), false);
                    let logits = logits.into_dimensionality::<ndarray::Ix2>().unwrap();
                    let (losses, _) = cross_entropy(logits.view(), &labels);
                    losses.iter().map(|&v| v as f64).sum::<f64>() / labels.len() as f64
                };
                if !batch_mean.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        stage: "au".to_string(),
                        epoch,
                    });
                }
                loss_sum += batch_mean * labels.len() as f64;

                let clamped = cfg
                    .loss_clamp
                    .map(|c| batch_mean > c as f64)
                    .unwrap_or(false);
                if !clamped {
                    let logits = model.net.forward(batch.into_dyn(), true);
                    let logits = logits.into_dimensionality::<ndarray::Ix2>().unwrap();
                    let (_, probs) = cross_entropy(logits.view(), &labels);
                    let grad = cross_entropy_grad(&probs, &labels, 1.0 / labels.len() as f32);
                    model.net.zero_grad();
                    model.net.backward(grad.into_dyn());
                    opt.step(&mut model.net.params_mut());
                }
            }
            let mut rec = EpochRecord::empty(epoch);
            rec.mean_loss = loss_sum / p_idx.len() as f64;
            Ok(rec)
        })?;

        let mut rec = rec;
        if let Some(mon) = monitor {
            if mon.due(epoch, cfg.epochs) {
                let (ca, asr) = mon.snapshot(&model)?;
                rec.clean_accuracy = Some(ca);
                rec.attack_success_rate = asr;
            }
        }
        metrics.epochs.push(rec);
    }

    model.net.set_frozen_norm(false);
    model.stage = StageTag::Au;
    if let Some(mon) = monitor {
        metrics.final_eval = Some(mon.report(&model)?);
    }
    Ok((model, metrics))
}
