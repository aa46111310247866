/// Unweighted mean of per-class F1 over the classes present in `labels`.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> f64 {
    assert_eq!(preds.len(), labels.len(), "macro_f1: length mismatch");
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p == y {
            tp[y] += 1;
        } else {
            fn_[y] += 1;
            if p < num_classes {
                fp[p] += 1;
            }
        }
    }
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..num_classes {
        if tp[c] + fn_[c] == 0 {
            continue;
        }
        present += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        total += 2.0 * tp[c] as f64 / denom as f64;
    }
    if present == 0 {
        0.0
    } else {
        total / present as f64
    }
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(preds.len(), labels.len(), "accuracy: length mismatch");
    if labels.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

/// Mean and `1.96 · s / √T` with the unbiased sample standard deviation.
pub fn mean_ci95(scores: &[f64]) -> (f64, f64) {
    let t = scores.len();
    if t == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = scores.iter().sum::<f64>() / t as f64;
    if t < 2 {
        return (mean, 0.0);
    }
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (t - 1) as f64;
    (mean, 1.96 * var.sqrt() / (t as f64).sqrt())
}
