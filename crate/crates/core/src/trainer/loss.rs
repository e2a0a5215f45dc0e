use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over a `B × k` batch of logits, and its
/// gradient `(softmax − onehot) / B`.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[b, k] = logits.shape() else {
        return Err(Error::dim(format!(
            "logits must be B×k, got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != b {
        return Err(Error::dim(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    let mut grad = vec![0.0f32; b * k];
    let mut total = 0.0f64;
    for (i, (row, &label)) in logits.data().chunks(k).zip(labels).enumerate() {
        if label >= k {
            return Err(Error::Index(format!(
                "label {label} at batch position {i} outside 0..{k}"
            )));
        }
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() - (row[label] as f64 - max);
        for (j, e) in exps.iter().enumerate() {
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad[i * k + j] = ((e / z - onehot) / b as f64) as f32;
        }
    }
    Ok((total / b as f64, Tensor::new(vec![b, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, _) = cross_entropy_loss(&Tensor::full(&[3, 10], 0.7), &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn saturated_correct_logits_give_zero() {
        let mut logits = Tensor::zeros(&[2, 4]);
        logits.data_mut()[1] = 1000.0;
        logits.data_mut()[4 + 3] = 1000.0;
        let (loss, grad) = cross_entropy_loss(&logits, &[1, 3]).unwrap();
        assert!(loss.abs() < 1e-9);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn label_out_of_range() {
        let err = cross_entropy_loss(&Tensor::zeros(&[1, 3]), &[3]).unwrap_err();
        assert!(matches!(err, Error::Index(_)));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits = Tensor::from_fn(&[2, 4], |_| rng.random_range(-2.0..2.0));
        let labels = [2, 0];
        let (_, grad) = cross_entropy_loss(&logits, &labels).unwrap();
        let h = 1e-3f32;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += h;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= h;
            let fd = (cross_entropy_loss(&plus, &labels).unwrap().0
                - cross_entropy_loss(&minus, &labels).unwrap().0)
                / (2.0 * h as f64);
            assert!((fd - grad.data()[i] as f64).abs() < 1e-4, "{i}: {fd} vs {}", grad.data()[i]);
        }
    }
}
