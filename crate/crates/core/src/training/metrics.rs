//! Binary classification metrics. Class 1 (fake) is the positive class for
//! the confusion matrix and the ROC AUC.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub true_real: usize,
    pub false_fake: usize,
    pub false_real: usize,
    pub true_fake: usize,
}

impl Confusion {
    pub fn from_predictions(labels: &[u8], preds: &[u8]) -> Confusion {
        assert_eq!(labels.len(), preds.len(), "labels and predictions differ in length");
        let mut c = Confusion::default();
        for (&l, &p) in labels.iter().zip(preds) {
            match (l, p) {
                (0, 0) => c.true_real += 1,
                (0, _) => c.false_fake += 1,
                (_, 0) => c.false_real += 1,
                _ => c.true_fake += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.true_real + self.false_fake + self.false_real + self.true_fake
    }

    /// (true positives, false positives, false negatives) treating `class` as positive.
    fn counts(&self, class: u8) -> (usize, usize, usize) {
        if class == 1 {
            (self.true_fake, self.false_fake, self.false_real)
        } else {
            (self.true_real, self.false_real, self.false_fake)
        }
    }

    /// F1 of `class` as the fraction `2tp / (2tp + fp + fn)`, or `0/1` when
    /// the class is neither present nor predicted.
    fn f1_fraction(&self, class: u8) -> (u128, u128) {
        let (tp, fp, fn_) = self.counts(class);
        let den = 2 * tp + fp + fn_;
        if den == 0 {
            (0, 1)
        } else {
            ((2 * tp) as u128, den as u128)
        }
    }

    /// Mean of the two class F1 scores, summed as exact fractions so the
    /// result is the correctly rounded rational value.
    pub fn macro_f1(&self) -> f64 {
        let (a, b) = self.f1_fraction(0);
        let (c, d) = self.f1_fraction(1);
        (a * d + c * b) as f64 / (2 * b * d) as f64
    }

    pub fn class_metrics(&self, class: u8) -> ClassMetrics {
        let (tp, fp, fn_) = self.counts(class);
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // 2PR/(P+R) written in counts: 2tp / (2tp + fp + fn). Zero when nothing is predicted or present.
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        ClassMetrics { precision, recall, f1, support: tp + fn_ }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

pub fn accuracy(labels: &[u8], preds: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().zip(preds).filter(|(l, p)| l == p).count() as f64 / labels.len() as f64
}

/// Unweighted mean of the two per-class F1 scores.
pub fn macro_f1(labels: &[u8], preds: &[u8]) -> f64 {
    Confusion::from_predictions(labels, preds).macro_f1()
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs in which the positive scores higher, ties
/// counting one half. Returns 0.5 when either class is absent.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> f64 {
    assert_eq!(labels.len(), scores.len(), "labels and scores differ in length");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks within tie groups.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        pos_rank_sum += avg_rank * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

/// Predicted class from the fake-class probability (argmax; ties go to real).
pub fn predict_label(p_fake: f64) -> u8 {
    u8::from(p_fake > 1.0 - p_fake)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_graphs: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: f64,
    pub real: ClassMetrics,
    pub fake: ClassMetrics,
    pub confusion: Confusion,
}

impl EvalReport {
    /// Metrics from true labels and fake-class probabilities.
    pub fn from_scores(labels: &[u8], p_fake: &[f64]) -> EvalReport {
        let preds: Vec<u8> = p_fake.iter().map(|&p| predict_label(p)).collect();
        let confusion = Confusion::from_predictions(labels, &preds);
        EvalReport {
            num_graphs: labels.len(),
            accuracy: accuracy(labels, &preds),
            macro_f1: confusion.macro_f1(),
            auc: roc_auc(labels, p_fake),
            real: confusion.class_metrics(0),
            fake: confusion.class_metrics(1),
            confusion,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_f1_hand_example() {
        // fake: tp 1, fp 0, fn 1 -> F1 2/3; real: tp 2, fp 1, fn 0 -> F1 4/5
        assert_eq!(macro_f1(&[1, 1, 0, 0], &[1, 0, 0, 0]), 11.0 / 15.0);
    }

    #[test]
    fn perfect_predictions() {
        let r = EvalReport::from_scores(&[0, 1, 1, 0], &[0.1, 0.9, 0.8, 0.3]);
        assert_eq!((r.accuracy, r.macro_f1, r.auc), (1.0, 1.0, 1.0));
        assert_eq!(r.confusion.total(), 4);
    }

    #[test]
    fn tied_scores_give_half_auc() {
        assert_eq!(roc_auc(&[0, 1, 1, 0, 1], &[0.4; 5]), 0.5);
    }

    #[test]
    fn auc_counts_ties_as_half() {
        // pairs (pos, neg): (0.8,0.2) win, (0.8,0.5) win, (0.5,0.2) win, (0.5,0.5) tie
        assert_eq!(roc_auc(&[1, 1, 0, 0], &[0.8, 0.5, 0.2, 0.5]), 3.5 / 4.0);
    }

    #[test]
    fn absent_class_gives_zero_f1_for_it() {
        let c = Confusion::from_predictions(&[0, 0], &[0, 0]);
        assert_eq!(c.class_metrics(1).f1, 0.0);
        assert_eq!(macro_f1(&[0, 0], &[0, 0]), 0.5);
        assert_eq!(roc_auc(&[0, 0], &[0.1, 0.2]), 0.5);
    }

    #[test]
    fn half_probability_predicts_real() {
        assert_eq!(predict_label(0.5), 0);
        assert_eq!(predict_label(0.5000001), 1);
    }
}
