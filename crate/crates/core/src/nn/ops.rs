use super::Tensor3;
use crate::error::{Error, Result};

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Passes `grad_out` where `x > 0`; the subgradient at zero is 0.
pub fn relu_backward(x: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
    if x.len() != grad_out.len() {
        return Err(Error::Shape(format!("relu backward: {} inputs, {} grads", x.len(), grad_out.len())));
    }
    Ok(x.iter().zip(grad_out).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect())
}

/// Mean of squared differences and its gradient `2 (pred - target) / N`.
pub fn mse_loss(pred: &Tensor3, target: &Tensor3) -> Result<(f64, Tensor3)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("mse of {:?} against {:?}", pred.shape(), target.shape())));
    }
    let n = pred.data().len() as f64;
    let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let (b, c, t) = pred.shape();
    let grad = Tensor3::from_vec(b, c, t, diff.into_iter().map(|d| 2.0 * d / n).collect())?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu_backward(&[-1.0, 0.0, 2.0], &[1.0, 1.0, 1.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(relu_backward(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_examples() {
        let p = Tensor3::from_vec(1, 1, 2, vec![1.0, 1.0]).unwrap();
        let t = Tensor3::from_vec(1, 1, 2, vec![0.0, 2.0]).unwrap();
        let (loss, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(g.data(), &[1.0, -1.0]);
        let (loss, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let bad = Tensor3::zeros(1, 1, 3);
        assert!(mse_loss(&p, &bad).is_err());
    }

    proptest! {
        #[test]
        fn relu_idempotent(x in prop::collection::vec(-10.0f64..10.0, 0..32)) {
            let once = relu(&x);
            prop_assert_eq!(relu(&once), once);
        }

        #[test]
        fn mse_symmetric(a in prop::collection::vec(-10.0f64..10.0, 1..16), seed in any::<u64>()) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * 0.5 + ((seed >> (i % 60)) & 7) as f64).collect();
            let n = a.len();
            let ta = Tensor3::from_vec(1, 1, n, a).unwrap();
            let tb = Tensor3::from_vec(1, 1, n, b).unwrap();
            prop_assert_eq!(mse_loss(&ta, &tb).unwrap().0, mse_loss(&tb, &ta).unwrap().0);
        }
    }
}
