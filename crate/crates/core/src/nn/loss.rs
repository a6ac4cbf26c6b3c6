use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Softmax cross-entropy on a 2-unit output (the two-class form of binary
/// cross-entropy). Returns the loss and its gradient w.r.t. the logits,
/// both computed in 64-bit.
pub fn bce_loss<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(f64, Tensor<T>)> {
    if logits.shape() != [2] {
        return Err(Error::config(format!("loss expects logits of shape [2], got {:?}", logits.shape())));
    }
    if label > 1 {
        return Err(Error::Domain(format!("label {label} is not a class index")));
    }
    let (loss, grad) = softmax_xent(logits.data(), label);
    Ok((loss, Tensor::from_vec(&[2], grad.iter().map(|&g| T::of(g)).collect())?))
}

/// Mean loss over a `[B, 2]` batch with the matching `[B, 2]` gradient
/// (already divided by `B`).
pub fn bce_loss_batch<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let b = labels.len();
    if logits.shape() != [b, 2] {
        return Err(Error::config(format!("batch loss expects [{b}, 2], got {:?}", logits.shape())));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(2 * b);
    for (row, &label) in logits.data().chunks(2).zip(labels) {
        let (l, g) = softmax_xent(row, label);
        total += l;
        grad.extend(g.iter().map(|&v| T::of(v / b as f64)));
    }
    Ok((total / b as f64, Tensor::from_vec(&[b, 2], grad)?))
}

fn softmax_xent<T: Scalar>(row: &[T], label: usize) -> (f64, [f64; 2]) {
    let z = [row[0].f64(), row[1].f64()];
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    let p = [(z[0] - lse).exp(), (z[1] - lse).exp()];
    let mut g = p;
    g[label] -= 1.0;
    (lse - z[label], g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_cost_ln2() {
        for t in [-3.0, 0.0, 12.5] {
            for label in 0..2 {
                let (l, _) = bce_loss(&Tensor::<f64>::from_vec(&[2], vec![t, t]).unwrap(), label).unwrap();
                assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        let (l, g) = bce_loss(&Tensor::<f64>::from_vec(&[2], vec![-40.0, 40.0]).unwrap(), 1).unwrap();
        assert!(l < 1e-12);
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn matches_scalar_oracle() {
        // direct sigmoid form on the logit difference
        for (a, b, label) in [(0.3, -1.2, 0usize), (2.0, 2.5, 1), (-0.7, 4.1, 0)] {
            let (l, g) = bce_loss(&Tensor::<f64>::from_vec(&[2], vec![a, b]).unwrap(), label).unwrap();
            let d: f64 = b - a;
            let p1 = 1.0 / (1.0 + (-d).exp());
            let y = label as f64;
            let want = -(y * p1.ln() + (1.0 - y) * (1.0 - p1).ln());
            assert!((l - want).abs() < 1e-12);
            assert!((g.data()[1] - (p1 - y)).abs() < 1e-12);
            assert!((g.data()[0] + (p1 - y)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(bce_loss(&Tensor::<f64>::zeros(&[3]), 0).is_err());
        assert!(bce_loss(&Tensor::<f64>::zeros(&[2]), 2).is_err());
    }
}
