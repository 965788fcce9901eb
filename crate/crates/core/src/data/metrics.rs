use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn metric_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction count",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mann-Whitney AUC with tie midranks.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            what: "score count",
            expected: positive.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("AUC scores contain NaN".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&o| positive[o]).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Binary AUC on column 1 when `k == 2`; otherwise the unweighted mean of
/// one-vs-rest AUCs over the classes present in `labels`.
pub fn metric_auc(probs: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    if probs.cols() != k || probs.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "probability matrix entries",
            expected: labels.len() * k,
            actual: probs.rows() * probs.cols(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let column = |c: usize| -> Vec<f64> { probs.iter_rows().map(|r| r[c]).collect() };
    if k == 2 {
        let pos: Vec<bool> = labels.iter().map(|&c| c == 1).collect();
        return auc_binary(&column(1), &pos);
    }
    let mut present = vec![false; k];
    for &c in labels {
        present[c] = true;
    }
    let mut total = 0.0;
    let mut count = 0;
    for c in (0..k).filter(|&c| present[c]) {
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        total += auc_binary(&column(c), &pos)?;
        count += 1;
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy() {
        assert_eq!(metric_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(metric_accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(metric_accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(metric_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn binary_auc() {
        let auc = auc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
        assert_eq!(auc_binary(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc_binary(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(auc_binary(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn multiclass_auc_is_macro_one_vs_rest() {
        let probs = Matrix::from_rows(&[
            vec![0.8, 0.1, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.1, 0.2, 0.7],
            vec![0.3, 0.4, 0.3],
        ])
        .unwrap();
        // perfect one-vs-rest ranking for every class
        assert_eq!(metric_auc(&probs, &[0, 1, 2, 1], 3).unwrap(), 1.0);
        // class 2 absent: only classes 0 and 1 are averaged
        let labels = [0, 1, 0, 1];
        let a0 = auc_binary(&[0.8, 0.2, 0.1, 0.3], &[true, false, true, false]).unwrap();
        let a1 = auc_binary(&[0.1, 0.7, 0.2, 0.4], &[false, true, false, true]).unwrap();
        assert!((metric_auc(&probs, &labels, 3).unwrap() - (a0 + a1) / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            scores in prop::collection::vec(-5.0f64..5.0, 4..40),
            flips in prop::collection::vec(any::<bool>(), 40),
        ) {
            let mut pos: Vec<bool> = flips[..scores.len()].to_vec();
            pos[0] = true;
            pos[1] = false;
            let a = auc_binary(&scores, &pos).unwrap();
            let transformed: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() + 3.0).collect();
            let b = auc_binary(&transformed, &pos).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            // brute-force pair count
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if pos[i] && !pos[j] {
                        den += 1.0;
                        num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            prop_assert!((a - num / den).abs() < 1e-12);
        }
    }
}
