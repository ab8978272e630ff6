use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    logits.expect_rank(2, "logits")?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0;
    for ((row, g), &label) in logits.data().chunks(k).zip(grad.chunks_mut(k)).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (row[label] - max);
        for (j, (gv, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - max - log_sum).exp();
            *gv = (p - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteValue("softmax cross-entropy".into()));
    }
    Ok((loss, Tensor::new(vec![n, k], grad)?))
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let k = scores.shape().get(1).copied().unwrap_or(1).max(1);
    scores
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::zeros(&[3, 10]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((grad.data()[0] - (0.1 - 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logit_gives_zero_loss() {
        let logits = Tensor::new(vec![1, 3], vec![0.0, 1e9, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        let s = Tensor::new(vec![2, 3], vec![1.0, 1.0, 0.0, -1.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_rows(&s), vec![0, 1]);
    }
}
