//! Response-level confusion counts and the recall/precision/F1/accuracy
//! derived from them. The positive class is "hallucinated".

use serde::{Deserialize, Serialize};

use crate::repair::DetectorVerdict;

/// A response is flagged iff the detector reported at least one span.
pub fn classify(verdict: &DetectorVerdict) -> bool {
    verdict.is_hallucinated()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{predictions} predictions but {actuals} labels")]
pub struct LengthMismatch {
    pub predictions: usize,
    pub actuals: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_counts(self)
    }
}

pub fn confusion(predictions: &[bool], actuals: &[bool]) -> Result<ConfusionCounts, LengthMismatch> {
    if predictions.len() != actuals.len() {
        return Err(LengthMismatch { predictions: predictions.len(), actuals: actuals.len() });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &a) in predictions.iter().zip(actuals) {
        c.record(p, a);
    }
    Ok(c)
}

/// Metrics with a zero denominator are `None` and serialize as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean; absent when either input is absent or both are zero.
pub fn f1_score(recall: Option<f64>, precision: Option<f64>) -> Option<f64> {
    let (r, p) = (recall?, precision?);
    (r + p > 0.0).then(|| 2.0 * r * p / (r + p))
}

impl Metrics {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let recall = ratio(c.tp, c.tp + c.fn_);
        let precision = ratio(c.tp, c.tp + c.fp);
        Self {
            recall,
            precision,
            f1: f1_score(recall, precision),
            accuracy: ratio(c.tp + c.tn, c.total()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use alloc::vec;

    #[test]
    fn classify_by_emptiness() {
        assert!(!classify(&DetectorVerdict::empty()));
        assert!(classify(&DetectorVerdict::new(vec![String::from("x")]).unwrap()));
    }

    #[test]
    fn confusion_cases() {
        let c = confusion(&[true, false], &[true, false]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
        let c = confusion(&[true, true, false, false], &[true, false, true, false]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let c = confusion(&[false; 3], &[true; 3]).unwrap();
        assert_eq!(c.fn_, 3);
        assert_eq!(
            confusion(&[true], &[]),
            Err(LengthMismatch { predictions: 1, actuals: 0 })
        );
    }

    #[test]
    fn degenerate_denominators() {
        let m = ConfusionCounts { tp: 0, fp: 0, tn: 4, fn_: 0 }.metrics();
        assert_eq!(m.recall, None);
        assert_eq!(m.precision, None);
        assert_eq!(m.f1, None);
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(ConfusionCounts::default().metrics().accuracy, None);
    }

    #[test]
    fn zero_recall_and_precision_has_no_f1() {
        let m = ConfusionCounts { tp: 0, fp: 2, tn: 0, fn_: 3 }.metrics();
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.precision, Some(0.0));
        assert_eq!(m.f1, None);
    }

    #[test]
    fn f1_from_rates() {
        assert!((f1_score(Some(0.710), Some(0.446)).unwrap() - 0.548).abs() <= 0.0005);
        assert!((f1_score(Some(0.938), Some(0.366)).unwrap() - 0.527).abs() <= 0.0005);
    }

    #[test]
    fn serialized_field_names() {
        let json = serde_json::to_string(&ConfusionCounts { tp: 1, fp: 2, tn: 3, fn_: 4 }).unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
        let json = serde_json::to_string(&ConfusionCounts::default().metrics()).unwrap();
        assert_eq!(json, r#"{"recall":null,"precision":null,"f1":null,"accuracy":null}"#);
    }
}
