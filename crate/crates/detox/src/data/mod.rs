//! Datasets and the attack side: trigger injection and dataset poisoning.

pub mod cifar;
pub mod io;
pub mod poison;
pub mod synth;
pub mod triggers;

use ndarray::Array4;

use crate::audit;
use crate::error::{Error, Result};

/// An image-classification dataset with attacker-side ground truth.
///
/// `poison_mask` and `target_class` record which samples were tampered; they
/// exist for evaluation only and are behind audited accessors — the defense
/// path must never read them (see [`crate::audit`]).
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// `(n, height, width, channels)`, values in `[0, 1]`.
    pub images: Array4<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub(crate) poison_mask: Vec<bool>,
    pub(crate) target_class: Option<usize>,
}

impl LabeledDataset {
    /// Build an untampered dataset. The poison mask starts all-false.
    pub fn new(images: Array4<f32>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let n = images.dim().0;
        if labels.len() != n {
            return Err(Error::data(format!(
                "{} labels for {} images",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        for &v in images.iter() {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::data(format!("image value {v} outside [0,1]")));
            }
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_count,
            poison_mask: vec![false; n],
            target_class: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(height, width, channels)` of one image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.images.dim();
        (h, w, c)
    }

    /// Audited accessor for the ground-truth poison mask.
    pub fn poison_mask(&self) -> &[bool] {
        audit::record_ground_truth_access();
        &self.poison_mask
    }

    /// Audited accessor for the ground-truth target class.
    pub fn target_class(&self) -> Option<usize> {
        audit::record_ground_truth_access();
        self.target_class
    }

    /// True if any sample is marked poisoned. Audited.
    pub fn any_poisoned(&self) -> bool {
        audit::record_ground_truth_access();
        self.poison_mask.iter().any(|&m| m)
    }

    /// Index views partitioning the dataset by the ground-truth mask:
    /// `(clean_indices, poisoned_indices)`. Evaluation-side plumbing; the
    /// access is audited.
    pub fn subset_views(&self) -> (Vec<usize>, Vec<usize>) {
        audit::record_ground_truth_access();
        let mut clean = Vec::new();
        let mut poisoned = Vec::new();
        for (i, &m) in self.poison_mask.iter().enumerate() {
            if m {
                poisoned.push(i);
            } else {
                clean.push(i);
            }
        }
        (clean, poisoned)
    }

    /// Copy out the images at `idx` as a batch tensor.
    pub fn gather_images(&self, idx: &[usize]) -> Array4<f32> {
        let (h, w, c) = self.image_dims();
        let mut out = Array4::<f32>::zeros((idx.len(), h, w, c));
        for (row, &i) in idx.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.images.index_axis(ndarray::Axis(0), i));
        }
        out
    }

    pub fn gather_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn tiny(n: usize, classes: usize) -> LabeledDataset {
        let images = Array4::<f32>::from_elem((n, 4, 4, 3), 0.5);
        let labels = (0..n).map(|i| i % classes).collect();
        LabeledDataset::new(images, labels, classes).unwrap()
    }

    #[test]
    fn new_rejects_bad_labels() {
        let images = Array4::<f32>::zeros((2, 4, 4, 3));
        assert!(LabeledDataset::new(images, vec![0, 5], 3).is_err());
    }

    #[test]
    fn new_rejects_out_of_range_pixels() {
        let mut images = Array4::<f32>::zeros((1, 4, 4, 3));
        images[[0, 0, 0, 0]] = 1.5;
        assert!(LabeledDataset::new(images, vec![0], 2).is_err());
    }

    #[test]
    fn subset_views_partition() {
        let mut ds = tiny(3, 3);
        ds.poison_mask = vec![true, false, true];
        let (clean, poisoned) = ds.subset_views();
        assert_eq!(clean, vec![1]);
        assert_eq!(poisoned, vec![0, 2]);
        assert_eq!(clean.len() + poisoned.len(), ds.len());
    }

    #[test]
    fn all_false_mask_gives_full_clean_view() {
        let ds = tiny(4, 2);
        let (clean, poisoned) = ds.subset_views();
        assert_eq!(clean.len(), 4);
        assert!(poisoned.is_empty());
        assert_eq!(ds.target_class(), None);
    }
}
