use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Row-wise softmax computed in f64.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    let classes = *logits.shape.last().expect("logits have a class axis");
    logits
        .data
        .chunks_exact(classes)
        .map(|row| {
            let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>), NnError> {
    let classes = *logits.shape.last().expect("logits have a class axis");
    let n = logits.len() / classes.max(1);
    if n != labels.len() || labels.iter().any(|&l| l >= classes) {
        return Err(NnError::ShapeMismatch(format!(
            "{} labels for {n} rows of {classes} classes",
            labels.len()
        )));
    }
    let probs = softmax(logits);
    let mut grad = Tensor::zeros(&logits.shape);
    let mut loss = 0.0;
    for (i, (p, &y)) in probs.iter().zip(labels).enumerate() {
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for (c, &pc) in p.iter().enumerate() {
            let g = (pc - if c == y { 1.0 } else { 0.0 }) / n as f64;
            grad.data[i * classes + c] = T::lit(g);
        }
    }
    Ok((loss / n as f64, grad))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_class_count() {
        let logits = Tensor::<f64>::zeros(&[2, 24]);
        let (loss, grad) = cross_entropy(&logits, &[3, 7]).unwrap();
        assert!((loss - 24f64.ln()).abs() < 1e-12);
        assert!((grad.data[3] - (1.0 / 24.0 - 1.0) / 2.0).abs() < 1e-12);
        assert!((grad.data[0] - 1.0 / 48.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = Tensor::from_vec(&[1, 3], vec![1.0f32, 2.0, 3.0]);
        let b = Tensor::from_vec(&[1, 3], vec![1001.0f32, 1002.0, 1003.0]);
        let (pa, pb) = (softmax(&a), softmax(&b));
        for (x, y) in pa[0].iter().zip(&pb[0]) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((pa[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn bad_labels_rejected() {
        let logits = Tensor::<f32>::zeros(&[2, 4]);
        assert!(cross_entropy(&logits, &[0]).is_err());
        assert!(cross_entropy(&logits, &[0, 4]).is_err());
    }
}
