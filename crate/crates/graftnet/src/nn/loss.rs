//! Cross-entropy over softmax logits, plus the batch accuracy helper.
//! Loss is reduced by batch mean. Log-probabilities go through
//! log-sum-exp, so large logits do not overflow.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_logits<'a>(logits: &'a Tensor, context: &str) -> Result<(&'a [f64], usize, usize)> {
    match logits.shape() {
        [n, k] => Ok((logits.data(), *n, *k)),
        other => Err(Error::Shape {
            context: context.into(),
            expected: "[batch, classes]".into(),
            actual: format!("{other:?}"),
        }),
    }
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&z| (z - m).exp()).sum();
    m + sum.ln()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (data, n, k) = check_logits(logits, "softmax_rows")?;
    let mut out = Tensor::zeros(vec![n, k]);
    for i in 0..n {
        let row = &data[i * k..(i + 1) * k];
        let lse = log_sum_exp(row);
        for j in 0..k {
            out.data_mut()[i * k + j] = (row[j] - lse).exp();
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood of the true labels.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (data, n, k) = check_logits(logits, "cross_entropy_loss")?;
    check_labels(labels, n, k)?;
    if n == 0 {
        return Err(Error::Argument("cross entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let row = &data[i * k..(i + 1) * k];
        total += log_sum_exp(row) - row[labels[i]];
    }
    Ok(total / n as f64)
}

/// Loss plus its gradient w.r.t. the logits: (softmax - onehot) / N.
pub fn cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let loss = cross_entropy_loss(logits, labels)?;
    let (_, n, k) = check_logits(logits, "cross_entropy_grad")?;
    let mut grad = softmax_rows(logits)?;
    let scale = 1.0 / n as f64;
    for i in 0..n {
        grad.data_mut()[i * k + labels[i]] -= 1.0;
    }
    for g in grad.data_mut() {
        *g *= scale;
    }
    Ok((loss, grad))
}

/// Fraction of rows whose argmax equals the label. Ties resolve to the
/// lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (data, n, k) = check_logits(logits, "accuracy")?;
    check_labels(labels, n, k)?;
    if n == 0 {
        return Err(Error::Argument("accuracy of an empty batch".into()));
    }
    let mut correct = 0usize;
    for i in 0..n {
        let row = &data[i * k..(i + 1) * k];
        let mut best = 0usize;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one_and_order_is_kept() {
        let logits = t(&[2, 3], &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]);
        let p = softmax_rows(&logits).unwrap();
        for i in 0..2 {
            let row = &p.data()[i * 3..(i + 1) * 3];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row[0] < row[1] && row[1] < row[2]);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let logits = t(&[1, 2], &[1000.0, 1000.0]);
        let p = softmax_rows(&logits).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-12);
        assert!(p.all_finite());
    }

    #[test]
    fn certain_correct_prediction_has_near_zero_loss() {
        // Logit margin of 60: softmax probability of the label is 1 - ~e-60.
        let logits = t(&[1, 3], &[60.0, 0.0, 0.0]);
        let loss = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!(loss >= 0.0);
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = t(&[4, 10], &[0.0; 40]);
        let loss = cross_entropy_loss(&logits, &[0, 3, 5, 9]).unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_direct_formula_oracle() {
        // Direct: -ln(exp(z_y) / sum exp(z_j)), no log-sum-exp trick.
        let logits = t(&[2, 3], &[0.2, -0.4, 1.1, 2.0, 0.0, -1.0]);
        let labels = [2usize, 0];
        let mut expected = 0.0;
        for i in 0..2 {
            let row = &logits.data()[i * 3..(i + 1) * 3];
            let denom: f64 = row.iter().map(|z| z.exp()).sum();
            expected += -(row[labels[i]].exp() / denom).ln();
        }
        expected /= 2.0;
        let loss = cross_entropy_loss(&logits, &labels).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn grad_is_softmax_minus_onehot_over_n() {
        let logits = t(&[2, 2], &[1.0, -1.0, 0.0, 0.0]);
        let (_, grad) = cross_entropy_grad(&logits, &[0, 1]).unwrap();
        let p = softmax_rows(&logits).unwrap();
        let expected = [
            (p.data()[0] - 1.0) / 2.0,
            p.data()[1] / 2.0,
            p.data()[2] / 2.0,
            (p.data()[3] - 1.0) / 2.0,
        ];
        for (g, e) in grad.data().iter().zip(&expected) {
            assert!((g - e).abs() < 1e-15);
        }
        // rows of the grad sum to zero
        assert!((grad.data()[0] + grad.data()[1]).abs() < 1e-15);
    }

    #[test]
    fn label_and_shape_validation() {
        let logits = t(&[2, 3], &[0.0; 6]);
        assert!(cross_entropy_loss(&logits, &[0]).is_err());
        assert!(cross_entropy_loss(&logits, &[0, 3]).is_err());
        assert!(cross_entropy_loss(&Tensor::zeros(vec![6]), &[0]).is_err());
    }

    #[test]
    fn accuracy_counts_argmax_hits_with_low_index_ties() {
        let logits = t(
            &[3, 3],
            &[
                0.9, 0.1, 0.0, // -> 0
                0.2, 0.2, 0.1, // tie between 0 and 1 -> 0
                0.0, 0.0, 5.0, // -> 2
            ],
        );
        assert_eq!(accuracy(&logits, &[0, 0, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&logits, &[0, 1, 2]).unwrap(), 2.0 / 3.0);
    }
}
