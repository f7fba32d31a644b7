//! Entropy-based sample filtering.
//!
//! After the supervised stage the model predicts tampered samples with low
//! entropy and clean samples with high entropy. Sorting by prediction
//! entropy therefore splits the dataset: the lowest-entropy `n*gamma`
//! samples form the filtered poisoned subset, and the highest-entropy
//! samples, drawn class-balanced over the given labels, form the filtered
//! clean subset. A training-loss ranking (`loss_filter_split`) is kept as
//! the classical baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit;
use crate::data::poison::round_count;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::nn::loss::cross_entropy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMethod {
    Entropy,
    Loss,
}

/// The outcome of a filtering pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterResult {
    /// Per-sample ranking score: prediction entropy in bits for the entropy
    /// method, per-sample cross-entropy loss in nats for the loss method.
    pub scores: Vec<f64>,
    /// Filtered poisoned subset: the `round(n*gamma)` lowest-scoring samples.
    pub poisoned_idx: Vec<usize>,
    /// Filtered clean subset: highest-scoring samples, class-balanced.
    pub clean_idx: Vec<usize>,
    pub gamma: f64,
    pub method: FilterMethod,
}

/// Shannon entropy in bits with the `0 log 0 = 0` convention.
///
/// Input must be a probability vector: nonnegative entries summing to 1
/// within 1e-5.
pub fn entropy(prob: &[f32]) -> Result<f64> {
    let mut sum = 0.0f64;
    for &p in prob {
        if p < 0.0 || !p.is_finite() {
            return Err(Error::data(format!("bad probability entry {p}")));
        }
        sum += p as f64;
    }
    if (sum - 1.0).abs() > 1e-5 {
        return Err(Error::data(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    let mut h = 0.0f64;
    for &p in prob {
        let p = p as f64;
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    Ok(h)
}

/// Sort sample indices ascending by `(score, index)`.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

/// Split the quota across classes: `quota / classes` each, remainder to the
/// lowest class ids.
fn class_quotas(quota: usize, classes: usize) -> Vec<usize> {
    let base = quota / classes;
    let rem = quota % classes;
    (0..classes).map(|c| base + usize::from(c < rem)).collect()
}

fn split_from_scores(
    scores: Vec<f64>,
    labels: &[usize],
    class_count: usize,
    gamma: f64,
    method: FilterMethod,
) -> Result<FilterResult> {
    let n = scores.len();
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::config(format!(
            "filtering rate {gamma} outside (0, 0.5]"
        )));
    }
    let quota = round_count(n, gamma);
    if quota < class_count {
        return Err(Error::config(format!(
            "filtering quota {quota} is smaller than the class count {class_count}"
        )));
    }

    let order = ranked(&scores);
    let poisoned_idx: Vec<usize> = order[..quota].to_vec();
    let in_poisoned: Vec<bool> = {
        let mut v = vec![false; n];
        for &i in &poisoned_idx {
            v[i] = true;
        }
        v
    };

    // clean side: walk the ranking from the top (highest score) and take
    // per-class quotas over the given labels, never re-using D'_p members
    let quotas = class_quotas(quota, class_count);
    let mut taken = vec![0usize; class_count];
    let mut clean_idx = Vec::with_capacity(quota);
    for &i in order.iter().rev() {
        if in_poisoned[i] {
            continue;
        }
        let c = labels[i];
        if taken[c] < quotas[c] {
            taken[c] += 1;
            clean_idx.push(i);
            if clean_idx.len() == quota {
                break;
            }
        }
    }
    if clean_idx.len() < quota {
        let short = quotas
            .iter()
            .zip(&taken)
            .enumerate()
            .find(|(_, (q, t))| t < q)
            .map(|(c, _)| c)
            .unwrap_or(0);
        return Err(Error::data(format!(
            "class {short} has too few remaining samples for the clean-side quota"
        )));
    }

    Ok(FilterResult {
        scores,
        poisoned_idx,
        clean_idx,
        gamma,
        method,
    })
}

/// Entropy-based split of a tampered dataset into `(D'_p, D'_c)`.
pub fn filter_split(model: &ModelState, ds: &LabeledDataset, gamma: f64) -> Result<FilterResult> {
    audit::denied(|| {
        let probs = model.predict_proba(ds.images.view())?;
        let scores: Vec<f64> = probs
            .rows()
            .into_iter()
            .map(|row| entropy(row.as_slice().expect("contiguous row")))
            .collect::<Result<Vec<_>>>()?;
        split_from_scores(scores, &ds.labels, ds.class_count, gamma, FilterMethod::Entropy)
    })
}

/// The training-loss baseline: identical contract, ranking by per-sample
/// cross-entropy loss instead of prediction entropy.
pub fn loss_filter_split(
    model: &ModelState,
    ds: &LabeledDataset,
    gamma: f64,
) -> Result<FilterResult> {
    audit::denied(|| {
        let logits = model.predict_logits(ds.images.view())?;
        let (losses, _) = cross_entropy(logits.view(), &ds.labels);
        let scores: Vec<f64> = losses.iter().map(|&v| v as f64).collect();
        split_from_scores(scores, &ds.labels, ds.class_count, gamma, FilterMethod::Loss)
    })
}

/// Evaluation-only filter quality: `(precision of D'_p, purity of D'_c)`
/// against the ground-truth mask. The defense itself never sees these.
pub fn filter_precision(result: &FilterResult, ds: &LabeledDataset) -> (f64, f64) {
    let mask = ds.poison_mask();
    let frac = |idx: &[usize], want_poisoned: bool| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().filter(|&&i| mask[i] == want_poisoned).count() as f64 / idx.len() as f64
    };
    (frac(&result.poisoned_idx, true), frac(&result.clean_idx, false))
}

impl FilterResult {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic_string(path, &serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<FilterResult> {
        let s = std::fs::read_to_string(path)?;
        let r: FilterResult = serde_json::from_str(&s)
            .map_err(|e| Error::format(format!("bad filter file: {e}")))?;
        Ok(r)
    }
}
