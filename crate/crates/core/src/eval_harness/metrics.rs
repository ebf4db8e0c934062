use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    /// Tallies `(predicted, true)` pairs of binary labels.
    pub fn tally(outcomes: &[(u8, u8)]) -> Result<Self, EvalError> {
        let mut m = ConfusionMatrix::default();
        for &(predicted, truth) in outcomes {
            match (predicted, truth) {
                (1, 1) => m.tp += 1,
                (1, 0) => m.fp += 1,
                (0, 0) => m.tn += 1,
                (0, 1) => m.fn_ += 1,
                other => return Err(EvalError::NonBinary(other.0.max(other.1))),
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            f1,
        }
    }
}

/// Positive-class precision, recall and F1. Any 0/0 ratio is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn compute_metrics(outcomes: &[(u8, u8)]) -> Result<Metrics, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::NoOutcomes);
    }
    Ok(ConfusionMatrix::tally(outcomes)?.metrics())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_precision_full_recall() {
        let m = compute_metrics(&[(1, 1), (1, 0)]).unwrap();
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = compute_metrics(&[(1, 1), (0, 0), (1, 1)]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let none = compute_metrics(&[(0, 1), (0, 0)]).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert!(matches!(compute_metrics(&[]), Err(EvalError::NoOutcomes)));
        assert!(matches!(compute_metrics(&[(2, 1)]), Err(EvalError::NonBinary(2))));
    }
}
