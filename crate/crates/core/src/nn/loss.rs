use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Row-wise softmax, computed with the row maximum subtracted.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for b in 0..out.rows() {
        let row = out.row_mut(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean cross-entropy over the batch and its gradient
/// `(softmax(t_b) - onehot(y_b)) / batch`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, k) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "label count",
            expected: n,
            actual: labels.len(),
        });
    }
    if k < 2 {
        return Err(Error::InvalidParameter(format!("cross-entropy needs k >= 2 classes, got {k}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("cross-entropy of an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let nf = n as f64;
    let mut grad = Matrix::zeros(n, k);
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y];
        let g = grad.row_mut(b);
        for (j, v) in row.iter().enumerate() {
            g[j] = (v - lse).exp() / nf;
        }
        g[y] -= 1.0 / nf;
    }
    Ok((total / nf, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in 2..6 {
            let (loss, _) = softmax_cross_entropy(&Matrix::zeros(3, k), &[0, 1, k - 1]).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_sample() {
        let logits = Matrix::from_vec(1, 2, vec![50.0, -50.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.as_slice().iter().all(|g| g.abs() < 1e-12));
        let (wrong, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!((wrong - 100.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(matches!(
            softmax_cross_entropy(&Matrix::zeros(2, 3), &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
        assert!(softmax_cross_entropy(&Matrix::zeros(2, 1), &[0, 0]).is_err());
        assert!(softmax_cross_entropy(&Matrix::zeros(2, 3), &[0]).is_err());
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, k) = (6, 4);
        let logits = Matrix::from_vec(n, k, (0..n * k).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        for i in 0..n * k {
            let h = 1e-6 * logits.as_slice()[i].abs().max(1.0);
            let mut lp = logits.clone();
            lp.as_mut_slice()[i] += h;
            let mut lm = logits.clone();
            lm.as_mut_slice()[i] -= h;
            let fd = (softmax_cross_entropy(&lp, &labels).unwrap().0 - softmax_cross_entropy(&lm, &labels).unwrap().0)
                / (2.0 * h);
            let a = grad.as_slice()[i];
            assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-2), "{a} {fd}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Matrix::from_rows(&[vec![1000.0, 0.0, -1000.0], vec![0.1, 0.2, 0.3]]).unwrap();
        let probs = softmax_rows(&logits);
        for row in probs.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(probs.get(0, 0), 1.0);
    }
}
