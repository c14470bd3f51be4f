//! Softmax (cross-entropy) loss on the label field and segmentation metrics.

use crate::error::{check_len, Error, Result};
use crate::Scalar;

fn check_labels(gt: &[usize], labels: usize) -> Result<()> {
    if let Some((i, &l)) = gt.iter().enumerate().find(|(_, &l)| l >= labels) {
        return Err(Error::Input(format!(
            "ground-truth label {l} at pixel {i} is out of range for {labels} labels"
        )));
    }
    Ok(())
}

/// `sum_pi log sum_k exp(u^k_pi) - u^{gt_pi}_pi` and its gradient
/// `softmax(u_pi) - onehot(gt_pi)`.
pub fn softmax_loss<T: Scalar>(u: &[T], gt: &[usize], labels: usize) -> Result<(T, Vec<T>)> {
    let npix = gt.len();
    check_len("label field", labels * npix, u.len())?;
    check_labels(gt, labels)?;
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); u.len()];
    for (pi, &l) in gt.iter().enumerate() {
        let m = (0..labels)
            .map(|k| u[k * npix + pi])
            .fold(T::neg_infinity(), T::max);
        let z: T = (0..labels).map(|k| (u[k * npix + pi] - m).exp()).sum();
        loss = loss + m + z.ln() - u[l * npix + pi];
        for k in 0..labels {
            let i = k * npix + pi;
            grad[i] = (u[i] - m).exp() / z;
        }
        grad[l * npix + pi] = grad[l * npix + pi] - T::one();
    }
    Ok((loss, grad))
}

/// Fraction of pixels whose predicted label equals the ground truth.
pub fn pixel_accuracy(pred: &[usize], gt: &[usize]) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    hits as f64 / gt.len() as f64
}

/// Intersection over union averaged over the labels present in prediction or ground truth.
pub fn mean_iou(pred: &[usize], gt: &[usize], labels: usize) -> f64 {
    let mut inter = vec![0usize; labels];
    let mut union = vec![0usize; labels];
    for (&p, &g) in pred.iter().zip(gt) {
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let present: Vec<f64> = (0..labels)
        .filter(|&k| union[k] > 0)
        .map(|k| inter[k] as f64 / union[k] as f64)
        .collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetric_pixel_costs_log_two() {
        let (l, _) = softmax_loss(&[0.0, 0.0], &[1], 2).unwrap();
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn confident_correct_pixel_has_vanishing_loss() {
        let (l, _) = softmax_loss(&[60.0, 0.0], &[0], 2).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        assert!(matches!(softmax_loss(&[0.0, 0.0], &[2], 2), Err(Error::Input(_))));
    }

    #[test]
    fn metrics_on_a_small_map() {
        let gt = [0, 0, 1, 1];
        let pred = [0, 1, 1, 1];
        assert_eq!(pixel_accuracy(&pred, &gt), 0.75);
        // label 0: 1/2, label 1: 2/3
        assert_abs_diff_eq!(mean_iou(&pred, &gt, 3), (0.5 + 2.0 / 3.0) / 2.0, epsilon = 1e-15);
    }
}
