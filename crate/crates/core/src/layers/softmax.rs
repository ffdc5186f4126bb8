use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

/// Lower clamp on the ground-truth probability before taking its log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Row-wise softmax, shifted by each row's maximum before exponentiating.
pub fn softmax_forward(logits: &Matrix) -> Result<Matrix> {
    if logits.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("softmax input".into()));
    }
    let cols = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    Ok(out)
}

/// Per-sample cross-entropy losses and their sum over the minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy {
    pub per_sample: Vector,
    pub total: f64,
}

impl CrossEntropy {
    pub fn mean(&self) -> f64 {
        self.total / self.per_sample.len() as f64
    }
}

/// Class index of a one-hot row, or a label error.
pub(crate) fn one_hot_class(row: &[f64], sample: usize) -> Result<usize> {
    let mut class = None;
    for (j, &v) in row.iter().enumerate() {
        if v == 1.0 && class.is_none() {
            class = Some(j);
        } else if v != 0.0 {
            return Err(Error::Label(format!("row {sample} is not one-hot")));
        }
    }
    class.ok_or_else(|| Error::Label(format!("row {sample} has no hot entry")))
}

pub fn cross_entropy_loss(y_pred: &Matrix, y_gt: &Matrix) -> Result<CrossEntropy> {
    if y_pred.shape() != y_gt.shape() {
        return Err(Error::shape("cross_entropy_loss", y_pred.shape_string(), y_gt.shape_string()));
    }
    let mut per_sample = Vec::with_capacity(y_pred.rows());
    for s in 0..y_pred.rows() {
        let c = one_hot_class(y_gt.row(s), s)?;
        per_sample.push(-y_pred.get(s, c).max(PROBABILITY_FLOOR).ln());
    }
    let total = per_sample.iter().sum();
    Ok(CrossEntropy {
        per_sample: Vector::new(per_sample),
        total,
    })
}

/// Error at the logits for softmax followed by cross-entropy: `Y_pred - Y_gt`.
pub fn softmax_ce_backward(y_pred: &Matrix, y_gt: &Matrix) -> Result<Matrix> {
    y_pred.sub(y_gt)
}

/// Gradient of the summed cross-entropy with respect to the probabilities:
/// `-y_gt / y_pred` on the hot entry, zero elsewhere.
pub fn cross_entropy_backward(y_pred: &Matrix, y_gt: &Matrix) -> Result<Matrix> {
    if y_pred.shape() != y_gt.shape() {
        return Err(Error::shape("cross_entropy_backward", y_pred.shape_string(), y_gt.shape_string()));
    }
    Ok(Matrix::from_fn(y_pred.rows(), y_pred.cols(), |s, j| {
        let g = y_gt.get(s, j);
        if g == 0.0 {
            0.0
        } else {
            -g / y_pred.get(s, j).max(PROBABILITY_FLOOR)
        }
    }))
}

/// Vector-Jacobian product of the softmax: `Y ∘ (Δ - rowdot(Δ, Y))`.
pub fn softmax_backward(y_pred: &Matrix, delta: &Matrix) -> Result<Matrix> {
    if y_pred.shape() != delta.shape() {
        return Err(Error::shape("softmax_backward", y_pred.shape_string(), delta.shape_string()));
    }
    let mut out = Matrix::zeros(y_pred.rows(), y_pred.cols());
    for s in 0..y_pred.rows() {
        let y = y_pred.row(s);
        let d = delta.row(s);
        let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
        for j in 0..y.len() {
            out.set(s, j, y[j] * (d[j] - dot));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_hot(n_c: usize, c: usize) -> Vec<f64> {
        (0..n_c).map(|j| if j == c { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_forward(&Matrix::filled(1, 10, 3.3)).unwrap();
        for &v in y.data() {
            assert_relative_eq!(v, 0.1, epsilon = 1e-15);
        }

        let mut row = vec![0.0; 10];
        row[0] = 50.0;
        let y = softmax_forward(&Matrix::from_rows(&[row])).unwrap();
        assert!(y.get(0, 0) >= 1.0 - 1e-20);

        let y = softmax_forward(&Matrix::from_rows(&[[1f64.ln(), 2f64.ln(), 3f64.ln()]])).unwrap();
        assert_relative_eq!(y.get(0, 0), 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(y.get(0, 1), 2.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(y.get(0, 2), 3.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn softmax_survives_large_logits_and_rejects_nan() {
        let y = softmax_forward(&Matrix::from_rows(&[[1000.0, 999.0]])).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!(matches!(
            softmax_forward(&Matrix::from_rows(&[[f64::NAN, 0.0]])),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let gt = Matrix::from_rows(&[one_hot(3, 1)]);
        let perfect = cross_entropy_loss(&gt, &gt).unwrap();
        assert_eq!(perfect.total, 0.0);

        let inv_e = (-1f64).exp();
        let y = Matrix::from_rows(&[[(1.0 - inv_e) / 2.0, inv_e, (1.0 - inv_e) / 2.0]]);
        assert_relative_eq!(cross_entropy_loss(&y, &gt).unwrap().total, 1.0, epsilon = 1e-15);

        let gt = Matrix::from_rows(&[one_hot(10, 4), one_hot(10, 9)]);
        let ce = cross_entropy_loss(&Matrix::filled(2, 10, 0.1), &gt).unwrap();
        for &l in ce.per_sample.as_slice() {
            assert_relative_eq!(l, 10f64.ln(), epsilon = 1e-14);
        }
        assert_relative_eq!(ce.total, 2.0 * 10f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(ce.mean(), std::f64::consts::LN_10, epsilon = 1e-14);
    }

    #[test]
    fn cross_entropy_is_floored_and_checks_labels() {
        let gt = Matrix::from_rows(&[one_hot(2, 0)]);
        let ce = cross_entropy_loss(&Matrix::from_rows(&[[0.0, 1.0]]), &gt).unwrap();
        assert_relative_eq!(ce.total, -PROBABILITY_FLOOR.ln());

        let bad = Matrix::from_rows(&[[0.5, 0.5]]);
        assert!(matches!(cross_entropy_loss(&bad, &bad), Err(Error::Label(_))));
        let two_hot = Matrix::from_rows(&[[1.0, 1.0]]);
        assert!(matches!(cross_entropy_loss(&bad, &two_hot), Err(Error::Label(_))));
        assert!(matches!(
            cross_entropy_loss(&bad, &Matrix::zeros(1, 2)),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn fused_backward_examples() {
        let gt = Matrix::from_rows(&[one_hot(4, 0)]);
        assert_eq!(softmax_ce_backward(&gt, &gt).unwrap(), Matrix::zeros(1, 4));
        let d = softmax_ce_backward(&Matrix::filled(1, 4, 0.25), &gt).unwrap();
        assert_eq!(d.data(), &[-0.75, 0.25, 0.25, 0.25]);
        assert!(softmax_ce_backward(&gt, &Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn fused_backward_matches_chained_jacobians() {
        let logits = Matrix::from_rows(&[[0.3, -1.2, 2.0, 0.1], [1.0, 1.0, -0.5, 0.7]]);
        let gt = Matrix::from_rows(&[one_hot(4, 2), one_hot(4, 0)]);
        let y = softmax_forward(&logits).unwrap();
        let chained = softmax_backward(&y, &cross_entropy_backward(&y, &gt).unwrap()).unwrap();
        let fused = softmax_ce_backward(&y, &gt).unwrap();
        assert!(chained.max_abs_diff(&fused) < 1e-15);
        for s in 0..2 {
            assert!(fused.row(s).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn fused_backward_matches_central_difference() {
        let logits = Matrix::from_rows(&[[0.5, -0.25, 1.5], [-1.0, 0.0, 0.75]]);
        let gt = Matrix::from_rows(&[one_hot(3, 0), one_hot(3, 2)]);
        let loss = |l: &Matrix| cross_entropy_loss(&softmax_forward(l).unwrap(), &gt).unwrap().total;
        let delta = softmax_ce_backward(&softmax_forward(&logits).unwrap(), &gt).unwrap();
        let h = 1e-6;
        for idx in 0..6 {
            let mut up = logits.clone();
            up.data_mut()[idx] += h;
            let mut down = logits.clone();
            down.data_mut()[idx] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            let analytic = delta.data()[idx];
            assert!((fd - analytic).abs() <= 1e-9 * analytic.abs().max(1.0), "{idx}: {fd} vs {analytic}");
        }
    }
}
