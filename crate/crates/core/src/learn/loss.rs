//! Softmax cross-entropy.

/// Loss and softmax probabilities for one score row, stabilized by the row maximum.
pub(crate) fn softmax_ce_row(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - scores[label];
    (loss, exps.iter().map(|e| e / z).collect())
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    softmax_ce_row(scores, 0).1
}

/// Cross-entropy of `scores` against `label` and its gradient
/// `softmax(scores) - onehot(label)`.
pub fn cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < scores.len(), "label out of range");
    let (loss, mut grad) = softmax_ce_row(scores, label);
    grad[label] -= 1.0;
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores() {
        let (l, g) = cross_entropy(&[0.0; 10], 3);
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_class() {
        let mut s = [0.0; 10];
        s[4] = 30.0;
        assert!(cross_entropy(&s, 4).0 < 1e-12);
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let (l, _) = cross_entropy(&[1000.0, 0.0], 1);
        assert!((l - 1000.0).abs() < 1e-9);
    }
}
