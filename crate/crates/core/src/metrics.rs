//! Regression and sign-agreement metrics.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    /// Negative vs non-negative; zero labels count as non-negative.
    NonNeg,
    /// Negative vs positive; samples with a zero label are dropped.
    PosNeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub corr: f64,
    pub acc2_nonneg: f64,
    pub acc2_posneg: f64,
    pub f1_nonneg: f64,
    pub f1_posneg: f64,
    pub n_eval: usize,
}

fn check_lengths(pred: &[f64], y: &[f64]) -> Result<()> {
    if pred.len() != y.len() {
        return Err(Error::Shape {
            op: "metrics",
            left: vec![pred.len()],
            right: vec![y.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyEvaluation("no samples".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(pred, y)?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two samples".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Binary accuracy and F1 with the non-negative side as the positive class.
/// A prediction of exactly 0 is non-negative.
pub fn binary_scores(pred: &[f64], y: &[f64], convention: Convention) -> Result<(f64, f64)> {
    check_lengths(pred, y)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(y) {
        if convention == Convention::PosNeg && t == 0.0 {
            continue;
        }
        match (p >= 0.0, t >= 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let n = tp + fp + tn + fneg;
    if n == 0 {
        return Err(Error::EmptyEvaluation(
            "every label is zero under the negative/positive convention".into(),
        ));
    }
    let acc = (tp + tn) as f64 / n as f64;
    let f1 = if tp == 0 {
        0.0
    } else {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fneg) as f64;
        2.0 * precision * recall / (precision + recall)
    };
    Ok((acc, f1))
}

impl MetricsReport {
    /// All metrics. An undefined correlation (constant predictions) is
    /// reported as 0 with a warning.
    pub fn evaluate(pred: &[f64], y: &[f64]) -> Result<Self> {
        let mae = mae(pred, y)?;
        let corr = match pearson(pred, y) {
            Ok(c) => c,
            Err(Error::UndefinedCorrelation(why)) => {
                log::warn!("correlation undefined ({why}); reporting 0");
                0.0
            }
            Err(e) => return Err(e),
        };
        let (acc2_nonneg, f1_nonneg) = binary_scores(pred, y, Convention::NonNeg)?;
        let (acc2_posneg, f1_posneg) = binary_scores(pred, y, Convention::PosNeg)?;
        Ok(Self {
            mae,
            corr,
            acc2_nonneg,
            acc2_posneg,
            f1_nonneg,
            f1_posneg,
            n_eval: pred.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        let y = [1.0, -2.0, 0.5];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        let shifted: Vec<f64> = y.iter().map(|v| v - 0.75).collect();
        assert!((mae(&shifted, &y).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(mae(&[], &[]), Err(Error::EmptyEvaluation(_))));
    }

    #[test]
    fn pearson_examples() {
        let y = [1.0, 2.0, 4.0, -1.0];
        assert!((pearson(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &y).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &y[..3]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn binary_examples() {
        let y = [1.0, -2.0, 0.0, 3.0];
        assert_eq!(binary_scores(&y, &y, Convention::NonNeg).unwrap(), (1.0, 1.0));
        assert_eq!(binary_scores(&y, &y, Convention::PosNeg).unwrap(), (1.0, 1.0));
        assert_eq!(
            binary_scores(&[1.0, -1.0], &[-1.0, 1.0], Convention::NonNeg).unwrap(),
            (0.0, 0.0)
        );
        assert!(matches!(
            binary_scores(&[1.0, 2.0], &[0.0, 0.0], Convention::PosNeg),
            Err(Error::EmptyEvaluation(_))
        ));
        // zero prediction is non-negative
        assert_eq!(binary_scores(&[0.0], &[0.5], Convention::NonNeg).unwrap(), (1.0, 1.0));
    }

    proptest! {
        #[test]
        fn pearson_symmetric_affine_invariant(
            v in prop::collection::vec(-5.0f64..5.0, 3..40),
            w in prop::collection::vec(-5.0f64..5.0, 3..40),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let n = v.len().min(w.len());
            let (v, w) = (&v[..n], &w[..n]);
            if let (Ok(p), Ok(q)) = (pearson(v, w), pearson(w, v)) {
                prop_assert_eq!(p, q);
                prop_assert!(p.abs() <= 1.0 + 1e-12);
                let t: Vec<f64> = v.iter().map(|x| a * x + b).collect();
                if let Ok(pt) = pearson(&t, w) {
                    prop_assert!((pt - p).abs() <= 1e-12);
                }
            }
            if pearson(v, v).is_ok() {
                let t: Vec<f64> = v.iter().map(|x| a * x + b).collect();
                prop_assert!((pearson(&t, v).unwrap() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
