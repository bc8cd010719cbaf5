//! Per-image top-K_N class selection from zero-shot scores.

use crate::backbone::zero_shot_logits;
use crate::error::{DptError, Result};
use crate::tensor::Tensor;

/// Classes chosen to drive the class-aware prompt generator for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSelection {
    /// Distinct class ids, highest zero-shot score first.
    pub indices: Vec<usize>,
    /// Set when the training label had to be forced into the selection.
    pub forced_ground_truth: Option<usize>,
}

impl ClassSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, class: usize) -> Option<usize> {
        self.indices.iter().position(|&c| c == class)
    }
}

/// `a` ranks before `b`: higher score, lower index on ties.
fn ranks_before(scores: &[f32], a: usize, b: usize) -> bool {
    scores[a] > scores[b] || (scores[a] == scores[b] && a < b)
}

/// Top `k_n` of `scores` by bounded insertion; ties go to the lower class id.
///
/// When `training_label` is given and missing from the top set it replaces
/// the lowest-ranked entry.
pub fn select_top_scores(scores: &[f32], k_n: usize, training_label: Option<usize>) -> Result<ClassSelection> {
    if k_n < 1 {
        return Err(DptError::Parameter("K_N must be at least 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(DptError::Parameter("class scores contain NaN".into()));
    }
    if let Some(label) = training_label {
        if label >= scores.len() {
            return Err(DptError::Label { label, classes: scores.len() });
        }
    }
    let keep = k_n.min(scores.len());
    let mut top: Vec<usize> = Vec::with_capacity(keep + 1);
    for c in 0..scores.len() {
        let at = top.iter().position(|&t| ranks_before(scores, c, t)).unwrap_or(top.len());
        if at < keep {
            top.insert(at, c);
            top.truncate(keep);
        } else if top.len() < keep {
            top.push(c);
        }
    }
    let mut forced = None;
    if let Some(label) = training_label {
        if !top.contains(&label) {
            *top.last_mut().expect("keep >= 1") = label;
            forced = Some(label);
        }
    }
    Ok(ClassSelection { indices: top, forced_ground_truth: forced })
}

/// Ranks classes by zero-shot logits of `image_feature` against the
/// hand-crafted class features and keeps the best `k_n`.
pub fn select_topk_classes(
    image_feature: &Tensor,
    handcrafted_class_features: &Tensor,
    temperature: f32,
    k_n: usize,
    training_label: Option<usize>,
) -> Result<ClassSelection> {
    let logits = zero_shot_logits(image_feature, handcrafted_class_features, temperature)?;
    let scores = logits.to_vec();
    select_top_scores(&scores, k_n, training_label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturates_to_all_classes_in_score_order() {
        let s = select_top_scores(&[0.1, 0.9, 0.5], 10, None).unwrap();
        assert_eq!(s.indices, vec![1, 2, 0]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let s = select_top_scores(&[1.0, 2.0, 2.0, 1.0], 3, None).unwrap();
        assert_eq!(s.indices, vec![1, 2, 0]);
    }

    #[test]
    fn label_injection_replaces_last() {
        let s = select_top_scores(&[5.0, 4.0, 3.0, 2.0, 1.0], 3, Some(4)).unwrap();
        assert_eq!(s.indices, vec![0, 1, 4]);
        assert_eq!(s.forced_ground_truth, Some(4));
        let s = select_top_scores(&[5.0, 4.0, 3.0], 2, Some(1)).unwrap();
        assert_eq!(s.forced_ground_truth, None);
    }

    #[test]
    fn zero_k_is_parameter_error() {
        assert!(matches!(select_top_scores(&[1.0], 0, None), Err(DptError::Parameter(_))));
    }
}
