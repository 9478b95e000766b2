use crate::{Error, Result};

use super::ensure_finite;

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Contract("softmax of an empty vector".into()));
    }
    ensure_finite("softmax", v)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log softmax(v)`, computed as `v - max - ln Σ exp(v - max)`.
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Contract("log_softmax of an empty vector".into()));
    }
    ensure_finite("log_softmax", v)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(v.iter().map(|x| x - max - lse).collect())
}

/// Cross-entropy of a softmax output against `label`.
///
/// Returns the loss `-ln p[label]` (with `p` clamped at [`PROB_FLOOR`]) and the
/// gradient with respect to the logits that produced `probs`, `probs - one_hot(label)`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= probs.len() {
        return Err(Error::Index {
            index: label,
            len: probs.len(),
        });
    }
    let loss = -probs[label].max(PROB_FLOOR).ln();
    let mut grad = probs.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform() {
        assert_eq!(softmax(&[0.0; 4]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn softmax_two_way_closed_form() {
        let e = std::f64::consts::E;
        let p = softmax(&[1.0, 0.0]).unwrap();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_inputs_do_not_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() <= f64::EPSILON);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn softmax_empty_is_contract_error() {
        assert!(matches!(softmax(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(Error::Numeric(_))));
    }

    #[test]
    fn cross_entropy_uniform() {
        let (loss, grad) = cross_entropy(&[0.25; 4], 0).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((loss - 1.386_294).abs() < 1e-6);
        assert_eq!(grad, vec![-0.75, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn cross_entropy_perfect_prediction() {
        let (loss, _) = cross_entropy(&[1.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(loss.abs() < 1e-15);
        let (floor_loss, _) = cross_entropy(&[1.0, 0.0, 0.0, 0.0], 1).unwrap();
        assert!((floor_loss - (-PROB_FLOOR.ln())).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.3, 0.3, 0.2, 0.2]), Some(0));
        assert_eq!(argmax(&[0.1, 0.4, 0.4]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let v = [0.3, -1.2, 2.5, 0.0];
        let p = softmax(&v).unwrap();
        for (l, q) in log_softmax(&v).unwrap().iter().zip(&p) {
            assert!((l - q.ln()).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            v in proptest::collection::vec(-50.0f64..50.0, 1..16),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&v).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            prop_assert_eq!(argmax(&p), argmax(&q));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
