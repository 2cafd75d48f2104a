//! Accuracy and macro one-vs-rest precision, recall and F-score.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::preprocess::OSClass;

const K: usize = OSClass::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassTally {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
}

/// Metrics for one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n: u64,
    pub accuracy: f64,
    /// Macro average of the per-class precisions.
    pub precision: f64,
    /// Macro average of the per-class recalls.
    pub recall: f64,
    /// `2PR/(P+R)` from the macro precision and recall.
    pub f_score: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: [[u64; K]; K],
    pub per_class: [ClassTally; K],
    /// Set when any ratio had a zero denominator and was defined as 0.
    pub zero_division: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: [[u64; K]; K]) -> Result<Self> {
        let n: u64 = confusion.iter().flatten().sum();
        if n == 0 {
            return Err(Error::Validation("cannot evaluate zero predictions".into()));
        }
        let mut zero_division = false;
        let per_class: [ClassTally; K] = std::array::from_fn(|c| {
            let tp = confusion[c][c];
            let fn_ = confusion[c].iter().sum::<u64>() - tp;
            let fp = (0..K).map(|r| confusion[r][c]).sum::<u64>() - tp;
            ClassTally {
                tp,
                fp,
                fn_,
                tn: n - tp - fp - fn_,
                precision: ratio(tp, tp + fp, &mut zero_division),
                recall: ratio(tp, tp + fn_, &mut zero_division),
            }
        });
        let precision = per_class.iter().map(|t| t.precision).sum::<f64>() / K as f64;
        let recall = per_class.iter().map(|t| t.recall).sum::<f64>() / K as f64;
        let f_score = if precision + recall == 0.0 {
            zero_division = true;
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let trace: u64 = (0..K).map(|c| confusion[c][c]).sum();
        Ok(Metrics {
            n,
            accuracy: trace as f64 / n as f64,
            precision,
            recall,
            f_score,
            confusion,
            per_class,
            zero_division,
        })
    }
}

pub fn confusion_matrix(preds: &[OSClass], labels: &[OSClass]) -> Result<[[u64; K]; K]> {
    if preds.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = [[0u64; K]; K];
    for (p, l) in preds.iter().zip(labels) {
        m[l.index()][p.index()] += 1;
    }
    Ok(m)
}

pub fn evaluate(preds: &[OSClass], labels: &[OSClass]) -> Result<Metrics> {
    Metrics::from_confusion(confusion_matrix(preds, labels)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Per-fold metrics with mean and standard deviation across folds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub folds: Vec<Metrics>,
    pub mean: Summary,
    /// Sample standard deviation over folds (0 for a single fold).
    pub std: Summary,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<Metrics>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Validation("no folds to aggregate".into()));
        }
        let stat = |f: fn(&Metrics) -> f64| {
            let n = folds.len() as f64;
            let mean = folds.iter().map(f).sum::<f64>() / n;
            let std = if folds.len() < 2 {
                0.0
            } else {
                (folds.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            (mean, std)
        };
        let (a, sa) = stat(|m| m.accuracy);
        let (p, sp) = stat(|m| m.precision);
        let (r, sr) = stat(|m| m.recall);
        let (f, sf) = stat(|m| m.f_score);
        Ok(MetricsReport {
            folds,
            mean: Summary { accuracy: a, precision: p, recall: r, f_score: f },
            std: Summary { accuracy: sa, precision: sp, recall: sr, f_score: sf },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use OSClass::*;

    #[test]
    fn perfect_predictions() {
        let l = [Short, Mid, Long, Long];
        let m = evaluate(&l, &l).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f_score), (1.0, 1.0, 1.0, 1.0));
        assert!(!m.zero_division);
    }

    #[test]
    fn hand_worked_confusion() {
        let m = Metrics::from_confusion([[2, 1, 0], [0, 3, 0], [1, 0, 2]]).unwrap();
        assert_eq!(m.accuracy, 7.0 / 9.0);
        let p = (2.0 / 3.0 + 3.0 / 4.0 + 1.0) / 3.0;
        let r = (2.0 / 3.0 + 1.0 + 2.0 / 3.0) / 3.0;
        assert!((m.precision - p).abs() < 1e-15);
        assert!((m.recall - r).abs() < 1e-15);
        assert!((m.f_score - 2.0 * p * r / (p + r)).abs() < 1e-15);
        assert_eq!(m.per_class[0].fp, 1);
        assert_eq!(m.per_class[2].tn, 6);
    }

    #[test]
    fn never_predicted_class_sets_flag() {
        let m = evaluate(&[Short, Short, Short], &[Short, Mid, Long]).unwrap();
        assert!(m.zero_division);
        assert_eq!(m.per_class[1].precision, 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(matches!(evaluate(&[Short], &[Short, Mid]), Err(Error::Validation(_))));
    }

    #[test]
    fn fold_statistics() {
        let a = Metrics::from_confusion([[1, 0, 0], [0, 1, 0], [0, 0, 1]]).unwrap();
        let b = Metrics::from_confusion([[0, 1, 0], [0, 1, 0], [0, 0, 1]]).unwrap();
        let r = MetricsReport::from_folds(vec![a.clone(), b]).unwrap();
        assert!((r.mean.accuracy - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((r.std.accuracy - (1.0f64 / 3.0) / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(MetricsReport::from_folds(vec![a]).unwrap().std.accuracy, 0.0);
    }
}
