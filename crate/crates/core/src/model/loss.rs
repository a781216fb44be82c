use super::ModelError;

const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

pub(crate) fn cross_entropy_row(probs: &[f64], class: usize) -> f64 {
    -probs[class].max(PROB_FLOOR).ln()
}

/// Mean over rows of `-sum_i y_i ln p_i`, with `p` clamped to `1e-12`.
pub fn cross_entropy(probs: &[Vec<f64>], one_hot: &[Vec<f64>]) -> Result<f64, ModelError> {
    if probs.len() != one_hot.len() || probs.is_empty() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} probability rows for {} label rows",
            probs.len(),
            one_hot.len()
        )));
    }
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(one_hot) {
        if p.len() != y.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "row of {} probabilities vs {} labels",
                p.len(),
                y.len()
            )));
        }
        total -= p.iter().zip(y).map(|(p, y)| y * p.max(PROB_FLOOR).ln()).sum::<f64>();
    }
    Ok(total / probs.len() as f64)
}

pub fn one_hot(class: usize, n_classes: usize) -> Vec<f64> {
    (0..n_classes).map(|k| if k == class { 1.0 } else { 0.0 }).collect()
}
