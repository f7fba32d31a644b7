//! Stage ASSFT: semi-supervised fine-tuning.
//!
//! The filtered clean subset keeps its labels; every other sample loses its
//! label (tampered samples included — without labels the trigger-to-target
//! association cannot be relearned, and strong augmentation corrupts the
//! trigger itself). Each step combines a supervised loss on weakly
//! augmented labeled samples with a consistency loss: confident predictions
//! on weak views become pseudo-labels for strong views.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::audit;
use crate::augment::Strength;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::EvalMonitor;
use crate::model::{argmax_rows, ModelState, StageTag};
use crate::nn::loss::{cross_entropy, cross_entropy_grad, softmax};
use crate::nn::sgd::Sgd;
use crate::nn::Network;
use crate::rng::{derive_seed, derive_seed_n, rng_from_seed};
use crate::train::{shuffled, EpochRecord, StageMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SSLConfig {
    pub epochs: usize,
    /// Weight of the unlabeled consistency term.
    pub lambda_u: f32,
    /// Weight of the regularizer, realized as L2 weight decay.
    pub beta_reg: f32,
    /// Pseudo-label confidence threshold, in (0, 1).
    pub confidence_tau: f32,
    /// Unlabeled-to-labeled batch size ratio.
    pub unlabeled_ratio: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SSLConfig {
    fn default() -> Self {
        SSLConfig {
            epochs: 30,
            lambda_u: 1.0,
            beta_reg: 5e-4,
            confidence_tau: 0.95,
            unlabeled_ratio: 7,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl SSLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence_tau > 0.0 && self.confidence_tau < 1.0) {
            return Err(Error::config(format!(
                "confidence threshold {} outside (0,1)",
                self.confidence_tau
            )));
        }
        if self.lambda_u < 0.0 || self.beta_reg < 0.0 {
            return Err(Error::config("loss weights must be nonnegative".to_string()));
        }
        if self.unlabeled_ratio == 0 || self.batch_size == 0 {
            return Err(Error::config("batch sizes must be at least 1".to_string()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive".to_string()));
        }
        Ok(())
    }
}

/// The labeled/unlabeled split fed to `ssl_train`.
#[derive(Debug, Clone)]
pub struct SemiDataset {
    pub labeled_images: Array4<f32>,
    pub labeled_labels: Vec<usize>,
    pub unlabeled_images: Array4<f32>,
    /// Original dataset indices, kept for bookkeeping.
    pub labeled_src: Vec<usize>,
    pub unlabeled_src: Vec<usize>,
    pub class_count: usize,
}

/// Keep labels only on `clean_idx`; every other sample goes to the
/// unlabeled pool with its label discarded.
pub fn strip_labels(ds: &LabeledDataset, clean_idx: &[usize]) -> Result<SemiDataset> {
    audit::denied(|| {
        if let Some(&bad) = clean_idx.iter().find(|&&i| i >= ds.len()) {
            return Err(Error::config(format!("index {bad} out of range")));
        }
        let mut keep = vec![false; ds.len()];
        for &i in clean_idx {
            keep[i] = true;
        }
        let unlabeled_src: Vec<usize> = (0..ds.len()).filter(|&i| !keep[i]).collect();
        Ok(SemiDataset {
            labeled_images: ds.gather_images(clean_idx),
            labeled_labels: ds.gather_labels(clean_idx),
            unlabeled_images: ds.gather_images(&unlabeled_src),
            labeled_src: clean_idx.to_vec(),
            unlabeled_src,
            class_count: ds.class_count,
        })
    })
}

/// Eval-mode prediction on a batch; used for pseudo-labels. Runs on a
/// throwaway copy of the network, so no state or gradient can leak back.
pub(crate) fn pseudo_labels(net: &Network, batch: &Array4<f32>) -> (Vec<usize>, Vec<f32>) {
    let mut frozen = net.clone();
    let logits = frozen.forward(batch.clone().into_dyn(), false);
    let logits = logits.into_dimensionality::<ndarray::Ix2>().unwrap();
    let probs = softmax(logits.view());
    let labels = argmax_rows(&probs);
    let confidence: Vec<f32> = probs
        .rows()
        .into_iter()
        .map(|r| r.iter().cloned().fold(0.0f32, f32::max))
        .collect();
    (labels, confidence)
}

/// Cycling shuffled sampler over the labeled set.
struct LabeledStream {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    cycle: u64,
    seed: u64,
}

impl LabeledStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = LabeledStream {
            n,
            order: Vec::new(),
            pos: 0,
            cycle: 0,
            seed,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = rng_from_seed(derive_seed_n(self.seed, &[self.cycle]));
        self.order = shuffled(self.n, &mut rng);
        self.pos = 0;
        self.cycle += 1;
    }

    fn next_batch(&mut self, k: usize) -> Vec<usize> {
        let k = k.min(self.n);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.n {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Stage ASSFT. Per step the objective is
/// `mean CE(weak labeled) + lambda_u * mean_over_batch(1[conf >= tau] * CE(strong unlabeled, pseudo)) + beta_reg * L2`.
pub fn ssl_train(
    model: ModelState,
    semi: &SemiDataset,
    cfg: &SSLConfig,
    monitor: Option<&EvalMonitor>,
) -> Result<(ModelState, StageMetrics)> {
    cfg.validate()?;
    if semi.labeled_labels.is_empty() {
        return Err(Error::config(
            "semi-supervised fine-tuning needs a nonempty labeled set".to_string(),
        ));
    }
    if !matches!(model.stage, StageTag::Au | StageTag::Sl) {
        return Err(Error::Stage {
            stage: "assft".to_string(),
            reason: format!("expected an au or sl checkpoint, got {}", model.stage),
        });
    }
    if model.class_count != semi.class_count {
        return Err(Error::config(format!(
            "model has {} classes, dataset has {}",
            model.class_count, semi.class_count
        )));
    }

    let mut model = model;
    let mut metrics = StageMetrics::new(StageTag::Assft);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, cfg.beta_reg, false);
    let n_u = semi.unlabeled_images.dim().0;
    let use_unlabeled = cfg.lambda_u > 0.0 && n_u > 0;
    let mut labeled_stream = LabeledStream::new(
        semi.labeled_labels.len(),
        derive_seed(cfg.seed, "assft/labeled"),
    );
    let shuffle_seed = derive_seed(cfg.seed, "assft/unlabeled");
    let aug_seed = derive_seed(cfg.seed, "assft/augment");
    let u_chunk = cfg.batch_size * cfg.unlabeled_ratio;

    for epoch in 0..cfg.epochs {
        let rec = audit::denied(|| -> Result<EpochRecord> {
            let u_order: Vec<usize> = if use_unlabeled {
                let mut rng = rng_from_seed(derive_seed_n(shuffle_seed, &[epoch as u64]));
                shuffled(n_u, &mut rng)
            } else {
                Vec::new()
            };
            let steps = if use_unlabeled {
                n_u.div_ceil(u_chunk)
            } else {
                semi.labeled_labels.len().div_ceil(cfg.batch_size)
            };

            let mut loss_sum = 0.0f64;
            let mut accepted = 0usize;
            let mut u_seen = 0usize;

            for step in 0..steps {
                model.net.zero_grad();

                // labeled branch: weak views
                let lab_idx = labeled_stream.next_batch(cfg.batch_size);
                let lab_batch = gather_weak(
                    &semi.labeled_images,
                    &lab_idx,
                    aug_seed,
                    &[1, epoch as u64, step as u64],
                );
                let lab_labels: Vec<usize> =
                    lab_idx.iter().map(|&i| semi.labeled_labels[i]).collect();
                let logits = model.net.forward(lab_batch.into_dyn(), true);
                let logits = logits.into_dimensionality::<ndarray::Ix2>().unwrap();
                let (losses, probs) = cross_entropy(logits.view(), &lab_labels);
                let lab_mean =
                    losses.iter().map(|&v| v as f64).sum::<f64>() / lab_labels.len() as f64;
                if !lab_mean.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        stage: "assft".to_string(),
                        epoch,
                    });
                }
                let grad =
                    cross_entropy_grad(&probs, &lab_labels, 1.0 / lab_labels.len() as f32);
                model.net.backward(grad.into_dyn());
                let mut step_loss = lab_mean;

                // unlabeled branch: pseudo-labels from weak views, trained
                // through strong views
                if use_unlabeled {
                    let u_idx: Vec<usize> = u_order
                        [step * u_chunk..((step + 1) * u_chunk).min(n_u)]
                        .to_vec();
                    let weak = gather_weak(
                        &semi.unlabeled_images,
                        &u_idx,
                        aug_seed,
                        &[2, epoch as u64, step as u64],
                    );
                    let (pseudo, confidence) = pseudo_labels(&model.net, &weak);
                    let mask: Vec<bool> = confidence
                        .iter()
                        .map(|&c| c >= cfg.confidence_tau)
                        .collect();
                    accepted += mask.iter().filter(|&&m| m).count();
                    u_seen += u_idx.len();

                    let strong = gather_strong(
                        &semi.unlabeled_images,
                        &u_idx,
                        aug_seed,
                        &[3, epoch as u64, step as u64],
                    );
                    // strong views train through batch statistics, but only
                    // the trusted labeled stream updates the running
                    // estimates the eval path depends on
                    model.net.set_stat_tracking(false);
                    let s_logits = model.net.forward(strong.into_dyn(), true);
                    let s_logits = s_logits.into_dimensionality::<ndarray::Ix2>().unwrap();
                    let (s_losses, s_probs) = cross_entropy(s_logits.view(), &pseudo);
                    let u_loss: f64 = s_losses
                        .iter()
                        .zip(&mask)
                        .filter(|(_, &m)| m)
                        .map(|(&v, _)| v as f64)
                        .sum::<f64>()
                        / u_idx.len() as f64;
                    if !u_loss.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            stage: "assft".to_string(),
                            epoch,
                        });
                    }
                    step_loss += cfg.lambda_u as f64 * u_loss;

                    let mut s_grad = cross_entropy_grad(
                        &s_probs,
                        &pseudo,
                        cfg.lambda_u / u_idx.len() as f32,
                    );
                    for (row, &m) in mask.iter().enumerate() {
                        if !m {
                            s_grad.row_mut(row).fill(0.0);
                        }
                    }
                    model.net.backward(s_grad.into_dyn());
                    model.net.set_stat_tracking(true);
                }

                opt.step(&mut model.net.params_mut());
                loss_sum += step_loss;
            }

            let mut rec = EpochRecord::empty(epoch);
            rec.mean_loss = loss_sum / steps as f64;
            rec.pseudo_label_rate = if u_seen > 0 {
                Some(accepted as f64 / u_seen as f64)
            } else {
                None
            };
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

    model.stage = StageTag::Assft;
    if let Some(mon) = monitor {
        metrics.final_eval = Some(mon.report(&model)?);
    }
    Ok((model, metrics))
}

fn gather_weak(images: &Array4<f32>, idx: &[usize], base: u64, coords: &[u64]) -> Array4<f32> {
    gather_view(images, idx, base, coords, Strength::Weak)
}

fn gather_strong(images: &Array4<f32>, idx: &[usize], base: u64, coords: &[u64]) -> Array4<f32> {
    gather_view(images, idx, base, coords, Strength::Strong)
}

fn gather_view(
    images: &Array4<f32>,
    idx: &[usize],
    base: u64,
    coords: &[u64],
    strength: Strength,
) -> Array4<f32> {
    let (_, h, w, c) = images.dim();
    let mut out = Array4::<f32>::zeros((idx.len(), h, w, c));
    for (row, &i) in idx.iter().enumerate() {
        let mut full = coords.to_vec();
        full.push(row as u64);
        let seed = derive_seed_n(base, &full);
        let img = crate::augment::augment(images.index_axis(ndarray::Axis(0), i), strength, seed);
        out.index_axis_mut(ndarray::Axis(0), row).assign(&img);
    }
    out
}
