//! Evaluation metrics over predicted classes or outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Accuracy,
    Uar,
    WeightedF1,
    Mse,
}

impl MetricId {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Accuracy => "accuracy",
            MetricId::Uar => "uar",
            MetricId::WeightedF1 => "weighted_f1",
            MetricId::Mse => "mse",
        }
    }

    /// Whether the metric is computed from class decisions.
    pub fn is_classification(self) -> bool {
        self != MetricId::Mse
    }

    /// Direction in which the metric improves.
    pub fn higher_is_better(self) -> bool {
        self != MetricId::Mse
    }
}

impl std::fmt::Display for MetricId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| Error::UnknownId {
            kind: "metric",
            id: s.into(),
            suggestion: None,
        })
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// `counts[true][predicted]` over `k` classes.
pub fn confusion(predicted: &[usize], actual: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if predicted.is_empty() || predicted.len() != actual.len() {
        return Err(Error::InvalidArgument(format!(
            "metrics need equal, non-empty prediction and target lists ({} vs {})",
            predicted.len(),
            actual.len()
        )));
    }
    let mut m = vec![vec![0; k]; k];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p >= k || a >= k {
            return Err(Error::InvalidArgument(format!("class index outside 0..{k}")));
        }
        m[a][p] += 1;
    }
    Ok(m)
}

pub fn accuracy(predicted: &[usize], actual: &[usize], k: usize) -> Result<f64> {
    let m = confusion(predicted, actual, k)?;
    let correct: usize = (0..k).map(|c| m[c][c]).sum();
    Ok(correct as f64 / predicted.len() as f64)
}

/// Mean recall over classes present in `actual`.
pub fn uar(predicted: &[usize], actual: &[usize], k: usize) -> Result<f64> {
    let m = confusion(predicted, actual, k)?;
    let recalls: Vec<f64> = (0..k)
        .filter_map(|c| {
            let support: usize = m[c].iter().sum();
            (support > 0).then(|| m[c][c] as f64 / support as f64)
        })
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Support-weighted mean of per-class F1 (zero when precision and recall
/// are both zero).
pub fn weighted_f1(predicted: &[usize], actual: &[usize], k: usize) -> Result<f64> {
    let m = confusion(predicted, actual, k)?;
    let n = predicted.len() as f64;
    let mut total = 0.0;
    for c in 0..k {
        let support: usize = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted_c: usize = (0..k).map(|r| m[r][c]).sum();
        let tp = m[c][c] as f64;
        let precision = if predicted_c > 0 { tp / predicted_c as f64 } else { 0.0 };
        let recall = tp / support as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += support as f64 / n * f1;
    }
    Ok(total)
}

pub fn mse(outputs: &[f64], targets: &[f64]) -> Result<f64> {
    if outputs.is_empty() || outputs.len() != targets.len() {
        return Err(Error::InvalidArgument("mse needs equal, non-empty vectors".into()));
    }
    Ok(outputs.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / outputs.len() as f64)
}

/// Computes `metric` from score rows (probabilities or outputs) and target
/// rows, both `[N, K]` flattened.
pub fn compute(metric: MetricId, scores: &[f64], targets: &[f64], k: usize) -> Result<f64> {
    if metric == MetricId::Mse {
        return mse(scores, targets);
    }
    if k == 0 || scores.len() != targets.len() || !scores.len().is_multiple_of(k) {
        return Err(Error::Shape(format!("{metric} needs [N, {k}] scores and targets")));
    }
    let predicted: Vec<usize> = scores.chunks(k).map(argmax).collect();
    let actual: Vec<usize> = targets.chunks(k).map(argmax).collect();
    match metric {
        MetricId::Accuracy => accuracy(&predicted, &actual, k),
        MetricId::Uar => uar(&predicted, &actual, k),
        MetricId::WeightedF1 => weighted_f1(&predicted, &actual, k),
        MetricId::Mse => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        assert_eq!(accuracy(&y, &y, 3).unwrap(), 1.0);
        assert_eq!(uar(&y, &y, 3).unwrap(), 1.0);
        assert_eq!(weighted_f1(&y, &y, 3).unwrap(), 1.0);
    }

    #[test]
    fn uar_of_recalls_one_and_half() {
        let actual = [0, 0, 1, 1];
        let predicted = [0, 0, 1, 0];
        assert_eq!(uar(&predicted, &actual, 2).unwrap(), 0.75);
    }

    #[test]
    fn uar_skips_absent_classes() {
        assert_eq!(uar(&[0, 2], &[0, 0], 3).unwrap(), 0.5);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(accuracy(&[], &[], 2).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    /// Weighted F1 from an explicitly enumerated confusion matrix.
    fn f1_oracle(predicted: &[usize], actual: &[usize], k: usize) -> f64 {
        let n = actual.len() as f64;
        let mut out = 0.0;
        for c in 0..k {
            let tp = predicted.iter().zip(actual).filter(|(p, a)| **p == c && **a == c).count() as f64;
            let fp = predicted.iter().zip(actual).filter(|(p, a)| **p == c && **a != c).count() as f64;
            let fn_ = predicted.iter().zip(actual).filter(|(p, a)| **p != c && **a == c).count() as f64;
            let support = tp + fn_;
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
            out += support / n * f1;
        }
        out
    }

    #[test]
    fn weighted_f1_three_class_fixture() {
        let actual = [0, 0, 0, 1, 1, 2, 2, 2, 2, 1];
        let predicted = [0, 1, 0, 1, 2, 2, 2, 0, 2, 1];
        let got = weighted_f1(&predicted, &actual, 3).unwrap();
        assert!((got - f1_oracle(&predicted, &actual, 3)).abs() < 1e-9);
        // Class F1s 2/3, 2/3, 3/4 with supports 3, 3, 4.
        assert!((got - (0.3 * 2.0 / 3.0 * 2.0 + 0.4 * 0.75)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weighted_f1_matches_oracle(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (predicted, actual): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let got = weighted_f1(&predicted, &actual, 4).unwrap();
            prop_assert!((got - f1_oracle(&predicted, &actual, 4)).abs() < 1e-9);
            let acc = accuracy(&predicted, &actual, 4).unwrap();
            let u = uar(&predicted, &actual, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&got));
        }
    }
}
