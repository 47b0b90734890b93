//! Training objectives.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};

/// Reconstruction MSE averaged uniformly over batch, channels and time
/// (the four modalities carry equal weight).
pub fn mse_multimodal(recon: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    if recon.dim() != target.dim() {
        return Err(Error::argument(format!(
            "mse shape mismatch: {:?} vs {:?}",
            recon.dim(),
            target.dim()
        )));
    }
    let n = recon.len() as f64;
    Ok(recon
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// MSE plus its gradient with respect to `recon`.
pub fn mse_multimodal_grad(recon: &Array3<f64>, target: &Array3<f64>) -> Result<(f64, Array3<f64>)> {
    let loss = mse_multimodal(recon, target)?;
    let n = recon.len() as f64;
    let grad = (recon - target) * (2.0 / n);
    Ok((loss, grad))
}

/// Mean absolute error in BPM between predictions (B, 1) and labels (B,).
pub fn mae_loss(pred: &Array2<f64>, labels: &Array1<f64>) -> Result<f64> {
    if pred.nrows() != labels.len() || pred.ncols() != 1 {
        return Err(Error::argument(format!(
            "mae shape mismatch: pred {:?} vs {} labels",
            pred.dim(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    Ok(pred
        .column(0)
        .iter()
        .zip(labels.iter())
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / n)
}

/// MAE plus its (sub)gradient with respect to `pred`.
pub fn mae_loss_grad(pred: &Array2<f64>, labels: &Array1<f64>) -> Result<(f64, Array2<f64>)> {
    let loss = mae_loss(pred, labels)?;
    let n = labels.len() as f64;
    let mut grad = Array2::<f64>::zeros(pred.raw_dim());
    for (i, y) in labels.iter().enumerate() {
        let d = pred[[i, 0]] - y;
        grad[[i, 0]] = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn mse_examples() {
        let zeros = Array3::<f64>::zeros((2, 4, 8));
        let ones = Array3::<f64>::ones((2, 4, 8));
        assert_eq!(mse_multimodal(&zeros, &zeros).unwrap(), 0.0);
        assert_eq!(mse_multimodal(&ones, &zeros).unwrap(), 1.0);

        // one channel off by 2, others exact -> 4/4 = 1.0
        let mut recon = Array3::<f64>::zeros((1, 4, 8));
        recon.slice_mut(ndarray::s![.., 1, ..]).fill(2.0);
        let target = Array3::<f64>::zeros((1, 4, 8));
        assert!((mse_multimodal(&recon, &target).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = Array3::<f64>::zeros((1, 4, 8));
        let b = Array3::<f64>::zeros((1, 4, 9));
        assert!(mse_multimodal(&a, &b).is_err());
    }

    #[test]
    fn mae_matches_direct_computation() {
        let pred = Array2::from_shape_vec((2, 1), vec![80.0, 90.0]).unwrap();
        let labels = arr1(&[84.0, 88.0]);
        assert_eq!(mae_loss(&pred, &labels).unwrap(), 3.0);

        let (loss, grad) = mae_loss_grad(&pred, &labels).unwrap();
        assert_eq!(loss, 3.0);
        assert_eq!(grad[[0, 0]], -0.5);
        assert_eq!(grad[[1, 0]], 0.5);
    }
}
