//! Classification losses on logits.
//!
//! Cross-entropy works on logits through a log-sum-exp. The other three
//! losses are applied to `softmax(logits)` so that all four share the
//! probability simplex as codomain. All values are sums over samples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Offset inside the Poisson log so zero probabilities stay finite.
pub const POISSON_LOG_OFFSET: f64 = 1e-12;

pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    SoftmaxCrossEntropy,
    MeanSquareError,
    Poisson,
    Huber { delta: f64 },
}

impl Loss {
    pub const ALL_DEFAULT: [Loss; 4] = [
        Loss::SoftmaxCrossEntropy,
        Loss::MeanSquareError,
        Loss::Poisson,
        Loss::Huber {
            delta: DEFAULT_HUBER_DELTA,
        },
    ];

    pub fn huber(delta: f64) -> Result<Loss> {
        if delta > 0.0 && delta.is_finite() {
            Ok(Loss::Huber { delta })
        } else {
            Err(Error::InvalidConfig(format!("huber delta must be > 0, got {delta}")))
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Loss::SoftmaxCrossEntropy => "ce",
            Loss::MeanSquareError => "mse",
            Loss::Poisson => "poisson",
            Loss::Huber { .. } => "huber",
        }
    }

    /// Summed loss over all rows.
    pub fn value(&self, logits: &Matrix, targets: &Matrix) -> Result<f64> {
        check(logits, targets)?;
        let mut probs = vec![0.0; logits.cols()];
        let mut total = 0.0;
        for r in 0..logits.rows() {
            let z = logits.row(r);
            let t = targets.row(r);
            total += match *self {
                Loss::SoftmaxCrossEntropy => {
                    let lse = log_sum_exp(z);
                    let t_sum: f64 = t.iter().sum();
                    lse * t_sum - z.iter().zip(t).map(|(a, b)| a * b).sum::<f64>()
                }
                Loss::MeanSquareError => {
                    softmax_into(z, &mut probs);
                    0.5 * probs.iter().zip(t).map(|(p, y)| (p - y) * (p - y)).sum::<f64>()
                }
                Loss::Poisson => {
                    softmax_into(z, &mut probs);
                    probs
                        .iter()
                        .zip(t)
                        .map(|(&p, &y)| p - y * (p + POISSON_LOG_OFFSET).ln())
                        .sum::<f64>()
                }
                Loss::Huber { delta } => {
                    softmax_into(z, &mut probs);
                    probs.iter().zip(t).map(|(p, y)| huber(p - y, delta)).sum::<f64>()
                }
            };
        }
        Ok(total)
    }

    /// Gradient of [`Loss::value`] with respect to the logits.
    pub fn grad(&self, logits: &Matrix, targets: &Matrix) -> Result<Matrix> {
        check(logits, targets)?;
        let q = logits.cols();
        let mut out = Vec::with_capacity(logits.rows() * q);
        let mut probs = vec![0.0; q];
        let mut dp = vec![0.0; q];
        for r in 0..logits.rows() {
            let t = targets.row(r);
            softmax_into(logits.row(r), &mut probs);
            if let Loss::SoftmaxCrossEntropy = self {
                let t_sum: f64 = t.iter().sum();
                out.extend(probs.iter().zip(t).map(|(p, y)| p * t_sum - y));
                continue;
            }
            for ((g, &p), &y) in dp.iter_mut().zip(&probs).zip(t) {
                *g = match *self {
                    Loss::MeanSquareError => p - y,
                    Loss::Poisson => 1.0 - y / (p + POISSON_LOG_OFFSET),
                    Loss::Huber { delta } => (p - y).clamp(-delta, delta),
                    Loss::SoftmaxCrossEntropy => unreachable!(),
                };
            }
            // Chain through the softmax Jacobian: dz_k = p_k (g_k - <g, p>).
            let inner: f64 = dp.iter().zip(&probs).map(|(g, p)| g * p).sum();
            out.extend(probs.iter().zip(&dp).map(|(p, g)| p * (g - inner)));
        }
        Ok(Matrix::from_vec_unchecked(logits.rows(), q, out))
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Loss::Huber { delta } => write!(f, "huber:{delta}"),
            other => f.write_str(other.short_name()),
        }
    }
}

impl FromStr for Loss {
    type Err = Error;

    /// Accepts `ce`, `mse`, `poisson`, `huber`, or `huber:<delta>`.
    fn from_str(s: &str) -> Result<Loss> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "ce" | "cross_entropy" | "softmax_cross_entropy" => Ok(Loss::SoftmaxCrossEntropy),
            "mse" | "mean_square_error" => Ok(Loss::MeanSquareError),
            "poisson" => Ok(Loss::Poisson),
            "huber" => Ok(Loss::Huber {
                delta: DEFAULT_HUBER_DELTA,
            }),
            other => match other.strip_prefix("huber:") {
                Some(d) => {
                    let delta = d
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidConfig(format!("bad huber delta {d:?}")))?;
                    Loss::huber(delta)
                }
                None => Err(Error::InvalidConfig(format!("unknown loss {s:?}"))),
            },
        }
    }
}

/// Elementwise Huber penalty: quadratic inside `delta`, linear outside.
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Row-wise softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    let q = logits.cols();
    for r in 0..logits.rows() {
        softmax_into(logits.row(r), &mut out.as_mut_slice()[r * q..(r + 1) * q]);
    }
    out
}

fn check(logits: &Matrix, targets: &Matrix) -> Result<()> {
    if logits.shape() != targets.shape() {
        return Err(Error::mismatch("loss", logits.shape(), targets.shape()));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn ce_symmetric_two_class() {
        let z = Matrix::from_rows(&[[0.0, 0.0]]);
        let t = Matrix::from_rows(&[[1.0, 0.0]]);
        let v = Loss::SoftmaxCrossEntropy.value(&z, &t).unwrap();
        assert!((v - LN2).abs() < 1e-15);
        let g = Loss::SoftmaxCrossEntropy.grad(&z, &t).unwrap();
        assert_eq!(g, Matrix::from_rows(&[[-0.5, 0.5]]));
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(-2.0, 1.0), 1.5);
    }

    #[test]
    fn poisson_hand_value() {
        // p = [0.5, 0.5] from equal logits.
        let z = Matrix::from_rows(&[[0.0, 0.0]]);
        let t = Matrix::from_rows(&[[1.0, 0.0]]);
        let v = Loss::Poisson.value(&z, &t).unwrap();
        let expected = 0.5 - (0.5f64 + 1e-12).ln() + 0.5;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 1.693147).abs() < 1e-6);
    }

    #[test]
    fn mse_zero_residual_has_zero_gradient() {
        let z = Matrix::from_rows(&[[0.3, -1.2, 2.0]]);
        let t = softmax(&z);
        let g = Loss::MeanSquareError.grad(&z, &t).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-16));
        assert!(Loss::MeanSquareError.value(&z, &t).unwrap() < 1e-30);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-500.0, 0.0, 500.0], [0.0, 0.0, 0.0]]);
        let p = softmax(&z);
        for r in 0..3 {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lse_shift_stability() {
        let z = Matrix::from_rows(&[[0.1, -0.4, 2.5]]);
        let shifted = z.map(|v| v + 1000.0);
        let t = Matrix::from_rows(&[[0.0, 0.0, 1.0]]);
        let a = Loss::SoftmaxCrossEntropy.value(&z, &t).unwrap();
        let b = Loss::SoftmaxCrossEntropy.value(&shifted, &t).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn rejects_shape_mismatch_and_non_finite() {
        let z = Matrix::zeros(2, 3);
        let t = Matrix::zeros(2, 2);
        assert!(matches!(
            Loss::Poisson.value(&z, &t),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = Matrix::from_vec_unchecked(1, 2, vec![f64::INFINITY, 0.0]);
        let t = Matrix::zeros(1, 2);
        assert!(matches!(
            Loss::SoftmaxCrossEntropy.grad(&bad, &t),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("ce".parse::<Loss>().unwrap(), Loss::SoftmaxCrossEntropy);
        assert_eq!("huber:0.25".parse::<Loss>().unwrap(), Loss::Huber { delta: 0.25 });
        assert_eq!("huber".parse::<Loss>().unwrap(), Loss::Huber { delta: 1.0 });
        assert!("huber:-1".parse::<Loss>().is_err());
        assert!("hinge".parse::<Loss>().is_err());
        for l in Loss::ALL_DEFAULT {
            assert_eq!(l.to_string().parse::<Loss>().unwrap(), l);
        }
    }
}
