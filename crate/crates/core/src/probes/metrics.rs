//! Classification scores.

use crate::error::{Error, Result};

/// Macro-averaged F1 over every class that occurs in either the truth or
/// the predictions. A class with no true and no predicted members is skipped.
pub fn macro_f1(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::LabelMisalignment(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let k = truth.iter().chain(predicted).max().copied().unwrap_or(0) + 1;
    let mut tp = vec![0usize; k];
    let mut n_true = vec![0usize; k];
    let mut n_pred = vec![0usize; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        n_true[t] += 1;
        n_pred[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut classes = 0;
    for c in 0..k {
        if n_true[c] == 0 && n_pred[c] == 0 {
            continue;
        }
        classes += 1;
        // F1 = 2 tp / (|true| + |pred|)
        sum += 2.0 * tp[c] as f64 / (n_true[c] + n_pred[c]) as f64;
    }
    Ok(sum / classes as f64)
}

/// Macro-F1 of always predicting the most frequent class of `truth`.
pub fn majority_baseline_f1(truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let k = truth.iter().max().copied().unwrap_or(0) + 1;
    let mut counts = vec![0usize; k];
    for &t in truth {
        counts[t] += 1;
    }
    // ties go to the lowest class index
    let majority = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
    macro_f1(truth, &vec![majority; truth.len()])
}

/// Expected macro-F1 of a uniform random guesser over the classes present
/// in `truth`: for class share `p` among `k` classes, `F1 = 2p/(1 + kp)`.
pub fn random_guess_f1(truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let k_max = truth.iter().max().copied().unwrap_or(0) + 1;
    let mut counts = vec![0usize; k_max];
    for &t in truth {
        counts[t] += 1;
    }
    let present: Vec<f64> = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 / truth.len() as f64)
        .collect();
    let k = present.len() as f64;
    Ok(present.iter().map(|p| 2.0 * p / (1.0 + k * p)).sum::<f64>() / k)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
