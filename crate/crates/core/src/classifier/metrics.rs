//! Classification reports: confusion matrix, per-class precision/recall/F1,
//! accuracy, macro and support-weighted averages, and one-vs-rest PR-AUC.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("empty evaluation set")]
    Empty,
    #[error("{truth} truth labels but {pred} predictions")]
    Length { truth: usize, pred: usize },
    #[error("label {0} out of range")]
    Label(usize),
    #[error("confusion matrix must be square and match the label list")]
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub labels: Vec<String>,
    /// `confusion[t][p]`: rows are truth, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    /// Macro average of one-vs-rest average precision over classes with at
    /// least one positive; present only when scores were supplied.
    pub pr_auc_macro: Option<f64>,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassificationReport {
    pub fn from_confusion(labels: &[&str], confusion: Vec<Vec<usize>>) -> Result<Self, MetricsError> {
        let k = labels.len();
        if confusion.len() != k || confusion.iter().any(|r| r.len() != k) {
            return Err(MetricsError::Shape);
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(MetricsError::Empty);
        }
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|r| r[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let kf = k as f64;
        let macro_avg = Averages {
            precision: per_class.iter().map(|m| m.precision).sum::<f64>() / kf,
            recall: per_class.iter().map(|m| m.recall).sum::<f64>() / kf,
            f1: per_class.iter().map(|m| m.f1).sum::<f64>() / kf,
        };
        let w = |f: fn(&ClassMetrics) -> f64| {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        };
        let weighted_avg = Averages {
            precision: w(|m| m.precision),
            recall: w(|m| m.recall),
            f1: w(|m| m.f1),
        };
        Ok(Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            confusion,
            per_class,
            accuracy: ratio(correct, total),
            macro_avg,
            weighted_avg,
            pr_auc_macro: None,
            total,
        })
    }

    pub fn from_predictions(labels: &[&str], truth: &[usize], pred: &[usize]) -> Result<Self, MetricsError> {
        if truth.len() != pred.len() {
            return Err(MetricsError::Length {
                truth: truth.len(),
                pred: pred.len(),
            });
        }
        if truth.is_empty() {
            return Err(MetricsError::Empty);
        }
        let k = labels.len();
        let mut confusion = vec![vec![0; k]; k];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k {
                return Err(MetricsError::Label(t));
            }
            if p >= k {
                return Err(MetricsError::Label(p));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(labels, confusion)
    }

    /// Adds macro one-vs-rest PR-AUC from per-sample class probabilities.
    pub fn with_scores(mut self, truth: &[usize], scores: &[Vec<f64>]) -> Self {
        let k = self.labels.len();
        let aps: Vec<f64> = (0..k)
            .filter_map(|c| {
                let pairs: Vec<(f64, bool)> =
                    truth.iter().zip(scores).map(|(&t, s)| (s[c], t == c)).collect();
                average_precision(&pairs)
            })
            .collect();
        if !aps.is_empty() {
            self.pr_auc_macro = Some(aps.iter().sum::<f64>() / aps.len() as f64);
        }
        self
    }
}

/// Step-wise area under the precision-recall curve: `Σ (R_n − R_{n−1}) P_n`
/// over score thresholds, tied scores sharing one threshold. `None` when
/// there are no positives.
pub fn average_precision(pairs: &[(f64, bool)]) -> Option<f64> {
    let positives = pairs.iter().filter(|p| p.1).count();
    if positives == 0 {
        return None;
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut seen, mut ap, mut last_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            seen += 1;
            tp += usize::from(sorted[i].1);
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        ap += (recall - last_recall) * (tp as f64 / seen as f64);
        last_recall = recall;
    }
    Some(ap)
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>10}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1", "support")?;
        for (label, m) in self.labels.iter().zip(&self.per_class) {
            writeln!(
                f,
                "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>10}",
                label, m.precision, m.recall, m.f1, m.support
            )?;
        }
        writeln!(f)?;
        writeln!(f, "{:<14}{:>10}{:>10}{:>10.2}{:>10}", "accuracy", "-", "-", self.accuracy, self.total)?;
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            writeln!(
                f,
                "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>10}",
                name, a.precision, a.recall, a.f1, self.total
            )?;
        }
        if let Some(ap) = self.pr_auc_macro {
            writeln!(f, "pr-auc (macro, one-vs-rest): {ap:.2}")?;
        }
        writeln!(f)?;
        writeln!(f, "confusion (rows = truth, columns = predicted)")?;
        for (label, row) in self.labels.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            writeln!(f, "{:<14}{}", label, cells.join(""))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_example() {
        let r = ClassificationReport::from_predictions(&["a", "b"], &[0, 1, 1], &[0, 0, 1]).unwrap();
        assert_abs_diff_eq!(r.accuracy, 2.0 / 3.0);
        assert_eq!(r.confusion, vec![vec![1, 0], vec![1, 1]]);
        assert_abs_diff_eq!(r.per_class[0].precision, 0.5);
        assert_abs_diff_eq!(r.per_class[1].recall, 0.5);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 3, 2, 1];
        let r = ClassificationReport::from_predictions(&["w", "x", "y", "z"], &y, &y).unwrap();
        assert_abs_diff_eq!(r.macro_avg.f1, 1.0);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert_eq!(c == 0, i != j);
            }
        }
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(ClassificationReport::from_predictions(&["a"], &[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn average_precision_by_hand() {
        // ranks: +, -, +  -> recall 1/2 at precision 1, recall 1 at precision 2/3
        let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)]).unwrap();
        assert_abs_diff_eq!(ap, 0.5 + 0.5 * 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(average_precision(&[(0.1, false)]), None);
        // all tied: one threshold, precision = prevalence
        let ap = average_precision(&[(0.5, true), (0.5, false)]).unwrap();
        assert_abs_diff_eq!(ap, 0.5);
    }
}
