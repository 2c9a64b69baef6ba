use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[u32]) -> Result<(f64, Matrix)> {
    let (batch, classes) = (logits.rows(), logits.cols());
    if labels.len() != batch {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }

    let scale = 1.0 / batch as f64;
    let mut grad = Matrix::zeros(batch, classes);
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        total += sum.ln() - (row[y as usize] - max);
        for (g, &l) in grad.row_mut(b).iter_mut().zip(row) {
            *g = (l - max).exp() / sum * scale;
        }
        grad.row_mut(b)[y as usize] -= scale;
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {loss}")));
    }
    Ok((loss, grad))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn count_correct(logits: &Matrix, labels: &[u32]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(b, &y)| argmax(logits.row(b)) == y as usize)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        for c in [2usize, 3, 10] {
            let logits = Matrix::new(2, c, vec![0.37; 2 * c]).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &[0, 1]).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_logits_approach_zero() {
        let logits = Matrix::new(1, 3, vec![0.0, 60.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss < 1e-25);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Matrix::new(2, 3, vec![0.2, -1.3, 0.7, 1.1, 0.4, -0.6]).unwrap();
        let labels = [2, 0];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let mut m = logits.clone();
            m.data_mut()[i] -= h;
            let fd = (softmax_cross_entropy(&p, &labels).unwrap().0
                - softmax_cross_entropy(&m, &labels).unwrap().0)
                / (2.0 * h);
            let g = grad.data()[i];
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-3), "{fd} vs {g}");
        }
    }

    #[test]
    fn errors() {
        let logits = Matrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(softmax_cross_entropy(&logits, &[2]), Err(Error::InvalidArgument(_))));
        let nan = Matrix::new(1, 2, vec![f64::NAN, 1.0]).unwrap();
        assert!(matches!(softmax_cross_entropy(&nan, &[0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }
}
