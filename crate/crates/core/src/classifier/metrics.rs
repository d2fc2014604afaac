use serde::{Deserialize, Serialize};

use super::NUM_CLASSES;
use crate::data::DefectClass;
use crate::error::{invalid, Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(truth: &[DefectClass], predicted: &[DefectClass]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(invalid!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        ));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(predicted) {
        cm.counts[t.id()][p.id()] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Indexed by class id: pitting, intact, rust.
    pub per_class: [ClassMetrics; NUM_CLASSES],
    /// Unweighted means of the per-class values.
    pub macro_avg: ClassMetrics,
    /// trace / total.
    pub accuracy: f64,
    /// Cells whose denominator was zero and were reported as 0.
    pub undefined: Vec<String>,
}

/// Column order of the results table: precision, recall, F1 for each class,
/// then the macro average, then overall accuracy.
pub const METRIC_NAMES: [&str; 13] = [
    "pitting_precision",
    "pitting_recall",
    "pitting_f1",
    "intact_precision",
    "intact_recall",
    "intact_f1",
    "rust_precision",
    "rust_recall",
    "rust_f1",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "overall_accuracy",
];

fn ratio(num: u64, den: u64, name: String, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Insufficient("confusion matrix is empty".into()));
    }
    let mut undefined = Vec::new();
    let mut per_class = [ClassMetrics::default(); NUM_CLASSES];
    for (c, out) in per_class.iter_mut().enumerate() {
        let name = DefectClass::ALL[c].name();
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..NUM_CLASSES).map(|r| cm.counts[r][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let precision = ratio(tp, predicted, format!("{name}_precision"), &mut undefined);
        let recall = ratio(tp, actual, format!("{name}_recall"), &mut undefined);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            undefined.push(format!("{name}_f1"));
            0.0
        };
        *out = ClassMetrics { precision, recall, f1 };
    }
    let k = NUM_CLASSES as f64;
    let macro_avg = ClassMetrics {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
    };
    Ok(MetricsReport {
        per_class,
        macro_avg,
        accuracy: cm.trace() as f64 / total as f64,
        undefined,
    })
}

impl MetricsReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 13] {
        let mut out = [0.0; 13];
        for (c, m) in self.per_class.iter().enumerate() {
            out[3 * c] = m.precision;
            out[3 * c + 1] = m.recall;
            out[3 * c + 2] = m.f1;
        }
        out[9] = self.macro_avg.precision;
        out[10] = self.macro_avg.recall;
        out[11] = self.macro_avg.f1;
        out[12] = self.accuracy;
        out
    }

    /// Inverse of [`values`](Self::values); macro cells are taken as given,
    /// as in averaged reference tables.
    pub fn from_values(v: [f64; 13]) -> Self {
        let cell = |i: usize| ClassMetrics { precision: v[i], recall: v[i + 1], f1: v[i + 2] };
        Self {
            per_class: [cell(0), cell(3), cell(6)],
            macro_avg: cell(9),
            accuracy: v[12],
            undefined: Vec::new(),
        }
    }

    /// Cellwise arithmetic mean, including the macro cells.
    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Insufficient("no reports to average".into()));
        }
        let mut acc = [0.0; 13];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let n = reports.len() as f64;
        let mut out = Self::from_values(acc.map(|a| a / n));
        let mut undefined: Vec<String> = reports.iter().flat_map(|r| r.undefined.iter().cloned()).collect();
        undefined.sort();
        undefined.dedup();
        out.undefined = undefined;
        Ok(out)
    }

    pub fn csv_header() -> String {
        METRIC_NAMES.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_class() {
        // pitting: TP 8, FN 2 (row), FP 2 (column).
        let cm = ConfusionMatrix { counts: [[8, 2, 0], [1, 5, 0], [1, 0, 3]] };
        let m = metrics(&cm).unwrap();
        assert!((m.per_class[0].precision - 0.8).abs() < 1e-12);
        assert!((m.per_class[0].recall - 0.8).abs() < 1e-12);
        assert!((m.per_class[0].f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix { counts: [[3, 0, 0], [0, 4, 0], [0, 0, 1]] };
        assert!(metrics(&cm).unwrap().values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn confusion_counts() {
        use DefectClass::*;
        let cm = confusion(&[Pitting], &[Rust]).unwrap();
        assert_eq!(cm.counts[0][2], 1);
        assert_eq!(cm.total(), 1);
        assert!(confusion(&[Pitting], &[]).is_err());
        let cm = confusion(&[Pitting, Intact, Rust], &[Pitting, Intact, Rust]).unwrap();
        assert_eq!(cm.trace(), 3);
    }

    #[test]
    fn zero_denominators_flagged() {
        let cm = ConfusionMatrix { counts: [[0, 3, 0], [0, 4, 0], [0, 0, 0]] };
        let m = metrics(&cm).unwrap();
        assert_eq!(m.per_class[0].precision, 0.0);
        assert!(m.undefined.contains(&"pitting_precision".to_string()));
        assert!(m.undefined.contains(&"rust_recall".to_string()));
        assert!(metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn macro_f1_is_mean_of_class_f1() {
        let cm = ConfusionMatrix { counts: [[5, 1, 2], [0, 9, 1], [3, 0, 4]] };
        let m = metrics(&cm).unwrap();
        let mean = m.per_class.iter().map(|c| c.f1).sum::<f64>() / 3.0;
        assert_eq!(m.macro_avg.f1, mean);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), m);
        assert_eq!(MetricsReport::from_values(m.values()).values(), m.values());
        assert_eq!(MetricsReport::csv_header().split(',').count(), 13);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let cm = ConfusionMatrix { counts: [[3, 1, 0], [2, 7, 1], [0, 3, 4]] };
        let r = metrics(&cm).unwrap();
        let back: MetricsReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn accuracy_invariant_under_relabeling(c in proptest::array::uniform9(0u64..20), perm in Just([2usize, 0, 1])) {
            let mut cm = ConfusionMatrix::default();
            for i in 0..9 { cm.counts[i / 3][i % 3] = c[i]; }
            prop_assume!(cm.total() > 0);
            let mut pm = ConfusionMatrix::default();
            for r in 0..3 { for k in 0..3 { pm.counts[perm[r]][perm[k]] = cm.counts[r][k]; } }
            prop_assert_eq!(metrics(&cm).unwrap().accuracy, metrics(&pm).unwrap().accuracy);
        }

        #[test]
        fn entries_sum_to_n(t in proptest::collection::vec(0usize..3, 1..50), seed in any::<u64>()) {
            let p: Vec<DefectClass> = t.iter().enumerate()
                .map(|(i, _)| DefectClass::from_id(((seed >> (i % 60)) % 3) as usize).unwrap()).collect();
            let t: Vec<DefectClass> = t.into_iter().map(|i| DefectClass::from_id(i).unwrap()).collect();
            prop_assert_eq!(confusion(&t, &p).unwrap().total(), t.len() as u64);
        }
    }
}
