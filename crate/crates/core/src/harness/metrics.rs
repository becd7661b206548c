use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification metrics over one evaluated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// Mean training loss per epoch, when produced by a training run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_curve: Vec<f64>,
}

impl MetricsReport {
    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        n_labels: usize,
    ) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::shape(
                "metrics",
                &[labels.len()],
                &[predictions.len()],
            ));
        }
        if labels.is_empty() {
            return Err(Error::invalid("no utterances to evaluate"));
        }
        let mut confusion = vec![vec![0usize; n_labels]; n_labels];
        for (&y, &p) in labels.iter().zip(predictions) {
            for (what, v) in [("label", y), ("prediction", p)] {
                if v >= n_labels {
                    return Err(Error::Index {
                        what,
                        index: v,
                        len: n_labels,
                    });
                }
            }
            confusion[y][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let m = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..m).map(|k| confusion[k][k]).sum();
        let mut per_class_f1 = Vec::with_capacity(m);
        let mut weighted_f1 = 0.0;
        for k in 0..m {
            let tp = confusion[k][k] as f64;
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            // F1 = 2TP / (2TP + FP + FN); zero when the class never occurs.
            let denom = (support + predicted) as f64;
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / denom };
            per_class_f1.push(f1);
            weighted_f1 += support as f64 / total.max(1) as f64 * f1;
        }
        MetricsReport {
            accuracy: correct as f64 / total.max(1) as f64,
            weighted_f1,
            per_class_f1,
            confusion,
            loss_curve: Vec::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Writes the confusion matrix as CSV: a header row of label names, then
/// one row per true label.
pub fn write_confusion_csv(
    path: &Path,
    report: &MetricsReport,
    label_names: &[String],
) -> Result<()> {
    let m = report.confusion.len();
    let names: Vec<String> = (0..m)
        .map(|k| label_names.get(k).cloned().unwrap_or_else(|| k.to_string()))
        .collect();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in names.iter().zip(&report.confusion) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|c| c.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = MetricsReport::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 4).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.per_class_f1[3], 0.0);
        assert_eq!(r.total(), 4);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(MetricsReport::from_predictions(&[0], &[0, 1], 2).is_err());
        assert!(MetricsReport::from_predictions(&[], &[], 2).is_err());
        assert!(MetricsReport::from_predictions(&[2], &[0], 2).is_err());
    }

    #[test]
    fn json_schema_keys() {
        let r = MetricsReport::from_predictions(&[0, 1], &[0, 0], 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            ["accuracy", "confusion", "per_class_f1", "weighted_f1"]
        );
    }

    #[test]
    fn confusion_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let r = MetricsReport::from_predictions(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        write_confusion_csv(&path, &r, &["hap".into(), "sad".into()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "true\\predicted,hap,sad\nhap,1,0\nsad,1,1\n");
    }
}
