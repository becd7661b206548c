//! Accuracy and weighted F1 computed from precision and recall, one class
//! at a time, by scanning the label and prediction lists.

pub struct OracleMetrics {
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
    pub weighted_f1: f64,
}

pub fn oracle_metrics(labels: &[usize], preds: &[usize], m: usize) -> OracleMetrics {
    let n = labels.len();
    let accuracy = labels.iter().zip(preds).filter(|(y, p)| y == p).count() as f64 / n as f64;
    let mut per_class_f1 = Vec::new();
    let mut weighted_f1 = 0.0;
    for k in 0..m {
        let tp = labels
            .iter()
            .zip(preds)
            .filter(|&(&y, &p)| y == k && p == k)
            .count() as f64;
        let fp = labels
            .iter()
            .zip(preds)
            .filter(|&(&y, &p)| y != k && p == k)
            .count() as f64;
        let fn_ = labels
            .iter()
            .zip(preds)
            .filter(|&(&y, &p)| y == k && p != k)
            .count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let freq = labels.iter().filter(|&&y| y == k).count() as f64 / n as f64;
        per_class_f1.push(f1);
        weighted_f1 += freq * f1;
    }
    OracleMetrics {
        accuracy,
        per_class_f1,
        weighted_f1,
    }
}
