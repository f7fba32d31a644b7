//! Clean accuracy, attack success rate, and CSV artifact emission.

use std::path::{Path, PathBuf};

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::data::triggers::{apply_trigger, TriggerSpec};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{ModelState, StageTag};
use crate::train::StageMetrics;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub stage: StageTag,
    pub clean_accuracy: f64,
    /// Absent when no attack was evaluated (untampered runs).
    pub attack_success_rate: Option<f64>,
    pub per_class_accuracy: Vec<f64>,
    pub n_eval: usize,
    pub n_attacked: Option<usize>,
}

/// Accuracy of predictions against labels. The hard anchor behind
/// `clean_accuracy`.
pub fn accuracy_from_predictions(preds: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(preds.len(), labels.len());
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / preds.len() as f64
}

/// Fraction of predictions equal to the target class. The hard anchor
/// behind `attack_success_rate`.
pub fn asr_from_predictions(preds: &[usize], target: usize) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|&&p| p == target).count() as f64 / preds.len() as f64
}

/// Standard test accuracy on untampered data.
pub fn clean_accuracy(model: &ModelState, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::data("empty evaluation set".to_string()));
    }
    if test.any_poisoned() {
        return Err(Error::data(
            "clean accuracy requires an untampered evaluation set".to_string(),
        ));
    }
    let preds = model.predict_classes(test.images.view())?;
    Ok(accuracy_from_predictions(&preds, &test.labels))
}

/// Per-class accuracy vector on untampered data.
pub fn per_class_accuracy(model: &ModelState, test: &LabeledDataset) -> Result<Vec<f64>> {
    let preds = model.predict_classes(test.images.view())?;
    let mut hits = vec![0usize; test.class_count];
    let mut counts = vec![0usize; test.class_count];
    for (&p, &l) in preds.iter().zip(&test.labels) {
        counts[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
        .collect())
}

/// Attack success rate: inject the trigger into every test sample and
/// measure how often the model predicts the target class. By convention
/// samples whose true label already equals the target are excluded (they
/// succeed vacuously); pass `include_target = true` to keep them.
pub fn attack_success_rate(
    model: &ModelState,
    clean_test: &LabeledDataset,
    spec: &TriggerSpec,
    target: usize,
    include_target: bool,
) -> Result<f64> {
    if clean_test.any_poisoned() {
        return Err(Error::data(
            "attack success rate requires an untampered evaluation set".to_string(),
        ));
    }
    let idx: Vec<usize> = (0..clean_test.len())
        .filter(|&i| include_target || clean_test.labels[i] != target)
        .collect();
    if idx.is_empty() {
        return Err(Error::data(
            "no evaluation samples outside the target class".to_string(),
        ));
    }
    let (h, w, c) = clean_test.image_dims();
    let mut triggered = Array4::<f32>::zeros((idx.len(), h, w, c));
    for (row, &i) in idx.iter().enumerate() {
        let img = apply_trigger(clean_test.images.index_axis(Axis(0), i), spec)?;
        triggered.index_axis_mut(Axis(0), row).assign(&img);
    }
    let preds = model.predict_classes(triggered.view())?;
    Ok(asr_from_predictions(&preds, target))
}

/// Full evaluation of one checkpoint.
pub fn evaluate(
    model: &ModelState,
    test: &LabeledDataset,
    attack: Option<(&TriggerSpec, usize)>,
) -> Result<EvalReport> {
    let ca = clean_accuracy(model, test)?;
    let per_class = per_class_accuracy(model, test)?;
    let (asr, n_attacked) = match attack {
        Some((spec, target)) => {
            let n_att = test.labels.iter().filter(|&&l| l != target).count();
            (
                Some(attack_success_rate(model, test, spec, target, false)?),
                Some(n_att),
            )
        }
        None => (None, None),
    };
    Ok(EvalReport {
        stage: model.stage,
        clean_accuracy: ca,
        attack_success_rate: asr,
        per_class_accuracy: per_class,
        n_eval: test.len(),
        n_attacked,
    })
}

/// Held-out evaluation hook that stages call between epochs.
pub struct EvalMonitor<'a> {
    pub test: &'a LabeledDataset,
    pub attack: Option<(&'a TriggerSpec, usize)>,
    /// Evaluate every `every` epochs (the final epoch always reports).
    pub every: usize,
}

impl<'a> EvalMonitor<'a> {
    pub fn new(test: &'a LabeledDataset, attack: Option<(&'a TriggerSpec, usize)>) -> Self {
        EvalMonitor {
            test,
            attack,
            every: 1,
        }
    }

    pub fn due(&self, epoch: usize, total_epochs: usize) -> bool {
        let every = self.every.max(1);
        (epoch + 1) % every == 0 || epoch + 1 == total_epochs
    }

    /// `(clean accuracy, attack success rate)` for one epoch record.
    pub fn snapshot(&self, model: &ModelState) -> Result<(f64, Option<f64>)> {
        let ca = clean_accuracy(model, self.test)?;
        let asr = match self.attack {
            Some((spec, target)) => {
                Some(attack_success_rate(model, self.test, spec, target, false)?)
            }
            None => None,
        };
        Ok((ca, asr))
    }

    pub fn report(&self, model: &ModelState) -> Result<EvalReport> {
        evaluate(model, self.test, self.attack)
    }
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Long-format per-epoch curves for a set of stages. For the supervised
/// stage this carries the clean/poisoned training-accuracy pair per epoch.
pub fn curves_csv(curves: &[StageMetrics]) -> String {
    let mut out = String::from(
        "stage,epoch,mean_loss,clean_train_acc,poisoned_train_acc,pseudo_label_rate,clean_accuracy,attack_success_rate\n",
    );
    for m in curves {
        for r in &m.epochs {
            out.push_str(&format!(
                "{},{},{:.6},{},{},{},{},{}\n",
                m.stage,
                r.epoch,
                r.mean_loss,
                fmt_opt(r.clean_train_acc),
                fmt_opt(r.poisoned_train_acc),
                fmt_opt(r.pseudo_label_rate),
                fmt_opt(r.clean_accuracy),
                fmt_opt(r.attack_success_rate),
            ));
        }
    }
    out
}

/// One row per evaluation report (stage ablation/table shape).
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("stage,clean_accuracy,attack_success_rate,n_eval,n_attacked,per_class_accuracy\n");
    for r in reports {
        let per_class = r
            .per_class_accuracy
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{:.6},{},{},{},{}\n",
            r.stage,
            r.clean_accuracy,
            fmt_opt(r.attack_success_rate),
            r.n_eval,
            r.n_attacked.map(|v| v.to_string()).unwrap_or_default(),
            per_class,
        ));
    }
    out
}

/// Write the CSV artifacts for a run. Returns the paths written.
/// Re-running on identical inputs produces byte-identical files.
pub fn emit_report(
    reports: &[EvalReport],
    curves: &[StageMetrics],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io(e))?;
    let reports_path = out_dir.join("reports.csv");
    let curves_path = out_dir.join("curves.csv");
    crate::fsutil::write_atomic_string(&reports_path, &reports_csv(reports))?;
    crate::fsutil::write_atomic_string(&curves_path, &curves_csv(curves))?;
    Ok(vec![reports_path, curves_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StageTag;
    use crate::train::EpochRecord;

    #[test]
    fn prediction_anchors_are_exact() {
        // oracle predictions: always right
        let labels = vec![0, 1, 2, 3, 4];
        assert_eq!(accuracy_from_predictions(&labels, &labels), 1.0);
        // never-target predictions: asr exactly 0
        let preds = vec![0, 1, 2, 0, 1];
        assert_eq!(asr_from_predictions(&preds, 7), 0.0);
        // always-target: asr exactly 1
        let preds = vec![7; 5];
        assert_eq!(asr_from_predictions(&preds, 7), 1.0);
    }

    #[test]
    fn constant_class_model_scores_class_prior() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let preds = vec![4usize; 100];
        let acc = accuracy_from_predictions(&preds, &labels);
        assert!((acc - 0.1).abs() < 1e-12);
    }

    #[test]
    fn asr_is_order_invariant() {
        let preds = vec![1, 2, 1, 0, 1, 1];
        let mut rev = preds.clone();
        rev.reverse();
        assert_eq!(asr_from_predictions(&preds, 1), asr_from_predictions(&rev, 1));
    }

    #[test]
    fn accuracy_plus_error_is_one() {
        let labels = vec![0, 1, 0, 1, 1, 0, 1];
        let preds = vec![0, 0, 0, 1, 1, 1, 1];
        let acc = accuracy_from_predictions(&preds, &labels);
        let err = preds.iter().zip(&labels).filter(|(p, l)| p != l).count() as f64
            / preds.len() as f64;
        assert!((acc + err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_curves_give_header_only_csv() {
        let csv = curves_csv(&[]);
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("stage,epoch,"));
    }

    #[test]
    fn one_report_gives_one_row() {
        let r = EvalReport {
            stage: StageTag::Sl,
            clean_accuracy: 0.75,
            attack_success_rate: Some(0.99),
            per_class_accuracy: vec![0.5, 1.0],
            n_eval: 8,
            n_attacked: Some(4),
        };
        let csv = reports_csv(&[r]);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("stage,"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("sl,0.750000,0.990000,8,4,"));
        assert!(lines.next().is_none());
    }

    #[test]
    fn curves_csv_has_one_row_per_epoch() {
        let mut m = StageMetrics::new(StageTag::Sl);
        for e in 0..4 {
            let mut r = EpochRecord::empty(e);
            r.mean_loss = 0.5;
            r.clean_train_acc = Some(0.8);
            r.poisoned_train_acc = Some(0.9);
            m.epochs.push(r);
        }
        let csv = curves_csv(&[m]);
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn emit_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let m = StageMetrics::new(StageTag::Au);
        let paths = emit_report(&[], &[m.clone()], dir.path()).unwrap();
        let first: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let paths2 = emit_report(&[], &[m], dir.path()).unwrap();
        let second: Vec<Vec<u8>> = paths2.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
    }
}
