//! ReLU dense (ReDense) head for an already-trained network.
//!
//! Given trained features `y` (J x n) and the trained output weight `Ô`
//! (Q x n), the head computes
//!
//! ```text
//! lifted = [relu(y R^T), relu(-y R^T)]       (J x 2m)
//! logits = lifted O^T                        (J x Q)
//! ```
//!
//! with `R` a frozen m x n Gaussian matrix (m >= n). Because
//! `relu(z) - relu(-z) = z`, the weight `O₀ = [Ô R⁺, -Ô R⁺]` reproduces the
//! original logits exactly whenever `R` has full column rank, so the
//! Frobenius ball `‖O‖ <= ‖O₀‖` always contains a point with the old loss.
//! Training is projected gradient descent inside that ball and returns the
//! best iterate, which makes `new loss <= old loss` a postcondition.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sample_gaussian, Matrix, RngSeed, Svd};
use crate::nn::{evaluate_logits, GroupState, Loss, Optimizer, TrainConfig};

/// Loss the head is always trained with.
pub const TRAINING_LOSS: Loss = Loss::SoftmaxCrossEntropy;

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 100;

/// Projections with a larger condition number are resampled.
pub const MAX_CONDITION: f64 = 1e8;

/// Relative slack allowed on `‖O‖ <= ε` for rounding in the rescale.
pub const FEASIBILITY_SLACK: f64 = 1e-12;

const MAX_RESAMPLES: usize = 64;
const SHUFFLE_STREAM: u64 = 0x5245_4445;

#[derive(Debug, Clone, PartialEq)]
pub struct RedenseLayer {
    n: usize,
    m: usize,
    projection: Matrix,
    epsilon: f64,
    output_weight: Matrix,
    base_output_weight: Matrix,
    seed: RngSeed,
}

impl RedenseLayer {
    /// Samples `R ~ N(0, 1)^{m x n}` from `seed` and initializes the head at
    /// the loss-preserving point.
    ///
    /// If `cond(R)` exceeds [`MAX_CONDITION`] the projection is resampled
    /// from `seed + 1`, `seed + 2`, ...; [`RedenseLayer::seed`] reports the
    /// seed actually used.
    pub fn build(base_output_weight: &Matrix, n: usize, m: usize, seed: RngSeed) -> Result<Self> {
        check_widths(base_output_weight, n, m)?;
        let mut seed = seed;
        for _ in 0..MAX_RESAMPLES {
            let projection = sample_gaussian(m, n, seed);
            let svd = Svd::new(&projection)?;
            let cond = svd.condition_number();
            if cond <= MAX_CONDITION {
                return Self::assemble(base_output_weight, projection, &svd, seed);
            }
            log::warn!(
                "projection from seed {} has condition number {cond:e}; resampling with seed {}",
                seed.0,
                seed.0.wrapping_add(1)
            );
            seed = seed.next();
        }
        Err(Error::InvalidConfig(format!(
            "no projection with condition number <= {MAX_CONDITION:e} after {MAX_RESAMPLES} draws"
        )))
    }

    /// Builds the head around a caller-supplied projection `R` (m x n),
    /// which must have full column rank.
    pub fn with_projection(base_output_weight: &Matrix, projection: Matrix, seed: RngSeed) -> Result<Self> {
        let (m, n) = projection.shape();
        check_widths(base_output_weight, n, m)?;
        if !projection.is_finite() {
            return Err(Error::NonFinite("projection"));
        }
        let svd = Svd::new(&projection)?;
        if svd.rank() < n {
            return Err(Error::InvalidConfig(format!(
                "projection has rank {} < n = {n}",
                svd.rank()
            )));
        }
        Self::assemble(base_output_weight, projection, &svd, seed)
    }

    fn assemble(base_output_weight: &Matrix, projection: Matrix, svd: &Svd, seed: RngSeed) -> Result<Self> {
        let (m, n) = projection.shape();
        let pinv = svd.pseudo_inverse();
        let half = base_output_weight.matmul(&pinv)?;
        let output_weight = half.hconcat(&half.scale(-1.0))?;
        let epsilon = output_weight.frobenius_norm();
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "constraint radius must be positive and finite, got {epsilon}"
            )));
        }
        Ok(Self {
            n,
            m,
            projection,
            epsilon,
            output_weight,
            base_output_weight: base_output_weight.clone(),
            seed,
        })
    }

    /// Reassembles a layer from stored parts, validating shapes and the
    /// norm constraint.
    pub fn from_parts(
        projection: Matrix,
        epsilon: f64,
        output_weight: Matrix,
        base_output_weight: Matrix,
        seed: RngSeed,
    ) -> Result<Self> {
        let (m, n) = projection.shape();
        check_widths(&base_output_weight, n, m)?;
        if output_weight.shape() != (base_output_weight.rows(), 2 * m) {
            return Err(Error::mismatch(
                "redense output weight",
                output_weight.shape(),
                (base_output_weight.rows(), 2 * m),
            ));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad constraint radius {epsilon}")));
        }
        if output_weight.frobenius_norm() > epsilon * (1.0 + FEASIBILITY_SLACK) {
            return Err(Error::InvalidConfig(
                "output weight lies outside the constraint ball".into(),
            ));
        }
        Ok(Self {
            n,
            m,
            projection,
            epsilon,
            output_weight,
            base_output_weight,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn classes(&self) -> usize {
        self.output_weight.rows()
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn output_weight(&self) -> &Matrix {
        &self.output_weight
    }

    pub fn base_output_weight(&self) -> &Matrix {
        &self.base_output_weight
    }

    pub fn seed(&self) -> RngSeed {
        self.seed
    }

    pub fn lift(&self, features: &Matrix) -> Result<Matrix> {
        lfp_lift(features, &self.projection)
    }

    /// `lift(features) * O^T`.
    pub fn predict(&self, features: &Matrix) -> Result<Matrix> {
        self.lift(features)?.matmul_transposed(&self.output_weight)
    }

    /// Logits of the original head, `features * Ô^T`.
    pub fn base_logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.n {
            return Err(Error::mismatch(
                "base logits",
                features.shape(),
                self.base_output_weight.shape(),
            ));
        }
        features.matmul_transposed(&self.base_output_weight)
    }
}

fn check_widths(base_output_weight: &Matrix, n: usize, m: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("feature width n must be >= 1".into()));
    }
    if base_output_weight.cols() != n {
        return Err(Error::mismatch(
            "output weight",
            base_output_weight.shape(),
            (base_output_weight.rows(), n),
        ));
    }
    if !base_output_weight.is_finite() {
        return Err(Error::NonFinite("output weight"));
    }
    if m < n {
        return Err(Error::WidthConstraint { n, m });
    }
    Ok(())
}

/// `[relu(y R^T), relu(-y R^T)]` for features `y` (J x n) and projection `R` (m x n).
pub fn lfp_lift(features: &Matrix, projection: &Matrix) -> Result<Matrix> {
    if features.cols() != projection.cols() {
        return Err(Error::mismatch("lfp_lift", features.shape(), projection.shape()));
    }
    let z = features.matmul_transposed(projection)?;
    let (j, m) = z.shape();
    let mut out = Vec::with_capacity(j * 2 * m);
    for r in 0..j {
        let row = z.row(r);
        out.extend(row.iter().map(|&v| v.max(0.0)));
        out.extend(row.iter().map(|&v| (-v).max(0.0)));
    }
    Ok(Matrix::from_vec_unchecked(j, 2 * m, out))
}

/// Top half minus bottom half of each lifted row: the left inverse of the
/// sign split in [`lfp_lift`].
pub fn lfp_reconstruct(lifted: &Matrix, m: usize) -> Result<Matrix> {
    if lifted.cols() % 2 != 0 {
        return Err(Error::InvalidConfig(format!("lifted width {} is odd", lifted.cols())));
    }
    if lifted.cols() != 2 * m {
        return Err(Error::mismatch(
            "lfp_reconstruct",
            lifted.shape(),
            (lifted.rows(), 2 * m),
        ));
    }
    let mut out = Vec::with_capacity(lifted.rows() * m);
    for r in 0..lifted.rows() {
        let row = lifted.row(r);
        out.extend(row[..m].iter().zip(&row[m..]).map(|(a, b)| a - b));
    }
    Ok(Matrix::from_vec_unchecked(lifted.rows(), m, out))
}

/// Rescales `z` onto the Frobenius ball of `radius` when it lies outside.
/// Returns whether a rescale happened.
pub fn project_onto_ball(z: &mut Matrix, radius: f64) -> bool {
    let norm = z.frobenius_norm();
    if norm > radius {
        let s = radius / norm;
        z.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// Summed softmax cross-entropy of `lifted * weight^T` against `targets`.
pub fn head_loss(lifted: &Matrix, targets: &Matrix, weight: &Matrix) -> Result<f64> {
    TRAINING_LOSS.value(&lifted.matmul_transposed(weight)?, targets)
}

/// Gradient of [`head_loss`] with respect to `weight` (Q x 2m).
pub fn head_loss_grad(lifted: &Matrix, targets: &Matrix, weight: &Matrix) -> Result<Matrix> {
    let d_logits = TRAINING_LOSS.grad(&lifted.matmul_transposed(weight)?, targets)?;
    d_logits.transposed_matmul(lifted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    /// Cross-entropy of the original head, `L_o`.
    pub old_loss: f64,
    /// Cross-entropy at the starting weight.
    pub init_loss: f64,
    /// Cross-entropy at the returned (best) weight.
    pub final_loss: f64,
    pub epsilon: f64,
    pub guarantee_holds: bool,
    /// Epoch of the returned iterate; 0 means the starting weight.
    pub best_epoch: usize,
    /// Loss the base network was trained with.
    pub base_loss: Loss,
    /// Original head under `base_loss` (informational).
    pub base_old_loss: f64,
    /// Returned head under `base_loss` (informational).
    pub base_final_loss: f64,
    /// Epoch at which a non-finite loss stopped training, if any.
    pub aborted_at: Option<usize>,
}

impl GuaranteeReport {
    /// `key=value` lines for structured stdout.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("old_loss", fmt_f64(self.old_loss)),
            ("init_loss", fmt_f64(self.init_loss)),
            ("final_loss", fmt_f64(self.final_loss)),
            ("epsilon", fmt_f64(self.epsilon)),
            ("guarantee_holds", self.guarantee_holds.to_string()),
            ("best_epoch", self.best_epoch.to_string()),
            ("base_loss", self.base_loss.to_string()),
            ("base_old_loss", fmt_f64(self.base_old_loss)),
            ("base_final_loss", fmt_f64(self.base_final_loss)),
            (
                "aborted_at",
                self.aborted_at.map_or_else(|| "none".to_string(), |e| e.to_string()),
            ),
        ]
    }
}

impl fmt::Display for GuaranteeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.key_values() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

/// True iff the returned loss does not exceed the original head's loss.
pub fn guarantee_check(report: &GuaranteeReport) -> bool {
    report.final_loss <= report.old_loss
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedenseEpoch {
    pub epoch: usize,
    /// Cross-entropy of the current iterate over the training features.
    pub train_loss: f64,
    /// Largest `‖O_t‖_F` over the iterates produced during this epoch.
    pub max_weight_norm: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions<'a> {
    /// Loss the base network was trained with; reported alongside the
    /// cross-entropy guarantee.
    pub base_loss: Loss,
    /// Held-out `(features, targets)` evaluated after every epoch.
    pub test: Option<(&'a Matrix, &'a Matrix)>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            base_loss: TRAINING_LOSS,
            test: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RedenseFit {
    pub layer: RedenseLayer,
    pub report: GuaranteeReport,
    pub curve: Vec<RedenseEpoch>,
}

/// Default configuration: full-batch Adam at [`DEFAULT_LEARNING_RATE`] for
/// [`DEFAULT_EPOCHS`] epochs.
pub fn default_config(samples: usize, seed: RngSeed) -> TrainConfig {
    TrainConfig {
        learning_rate: DEFAULT_LEARNING_RATE,
        epochs: DEFAULT_EPOCHS,
        batch_size: samples.max(1),
        weight_decay: 0.0,
        optimizer: Optimizer::adam(),
        seed,
    }
}

pub fn train(layer: &RedenseLayer, features: &Matrix, targets: &Matrix, cfg: &TrainConfig) -> Result<RedenseFit> {
    train_with(layer, features, targets, cfg, &TrainOptions::default())
}

/// Projected training of the head weight inside `‖O‖_F <= ε`.
///
/// Each step applies the optimizer update to the summed cross-entropy
/// gradient and rescales onto the ball when the norm exceeds `ε`. Adam
/// moments are kept across rescales. `cfg.weight_decay` is ignored; the
/// norm ball is the only regularizer. The returned layer carries the
/// lowest-training-loss iterate among the starting weight and the end of
/// every epoch.
pub fn train_with(
    layer: &RedenseLayer,
    features: &Matrix,
    targets: &Matrix,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
) -> Result<RedenseFit> {
    cfg.validate()?;
    if features.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if features.cols() != layer.n {
        return Err(Error::mismatch(
            "redense features",
            features.shape(),
            layer.projection.shape(),
        ));
    }
    if targets.shape() != (features.rows(), layer.classes()) {
        return Err(Error::mismatch(
            "redense targets",
            targets.shape(),
            (features.rows(), layer.classes()),
        ));
    }

    let lifted = layer.lift(features)?;
    let base_logits = layer.base_logits(features)?;
    let old_loss = TRAINING_LOSS.value(&base_logits, targets)?;
    let base_old_loss = opts.base_loss.value(&base_logits, targets)?;

    let mut weight = layer.output_weight.clone();
    let init_loss = head_loss(&lifted, targets, &weight)?;
    let mut best = (init_loss, weight.clone(), 0usize);

    let test_lifted = match opts.test {
        Some((f, t)) => {
            if t.rows() != f.rows() || t.cols() != layer.classes() {
                return Err(Error::mismatch("redense test targets", t.shape(), f.shape()));
            }
            Some((layer.lift(f)?, t))
        }
        None => None,
    };
    let test_metrics = |w: &Matrix| -> Result<(Option<f64>, Option<f64>)> {
        match &test_lifted {
            Some((lf, t)) => {
                let e = evaluate_logits(&lf.matmul_transposed(w)?, t, TRAINING_LOSS)?;
                Ok((Some(e.loss), Some(e.accuracy)))
            }
            None => Ok((None, None)),
        }
    };

    let (test_loss, test_accuracy) = test_metrics(&weight)?;
    let mut curve = vec![RedenseEpoch {
        epoch: 0,
        train_loss: init_loss,
        max_weight_norm: weight.frobenius_norm(),
        test_loss,
        test_accuracy,
    }];

    let mut state = GroupState::new(cfg.optimizer, weight.as_slice().len());
    let mut rng = cfg.seed.derive(SHUFFLE_STREAM).rng();
    let mut order: Vec<usize> = (0..features.rows()).collect();
    let full_batch = cfg.batch_size >= features.rows();
    let mut aborted_at = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut max_norm = 0.0f64;
        if !full_batch {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let grad = if full_batch {
                head_loss_grad(&lifted, targets, &weight)
            } else {
                head_loss_grad(&lifted.select_rows(batch), &targets.select_rows(batch), &weight)
            };
            let grad = match grad {
                Ok(g) if g.is_finite() => g,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    aborted_at = Some(epoch);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let mut next = weight.clone();
            state.apply(next.as_mut_slice(), grad.as_slice(), cfg.learning_rate);
            if !next.is_finite() {
                aborted_at = Some(epoch);
                break 'epochs;
            }
            project_onto_ball(&mut next, layer.epsilon);
            max_norm = max_norm.max(next.frobenius_norm());
            weight = next;
        }
        let loss = match head_loss(&lifted, targets, &weight) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NonFinite(_)) => {
                aborted_at = Some(epoch);
                break;
            }
            Err(e) => return Err(e),
        };
        if loss < best.0 {
            best = (loss, weight.clone(), epoch);
        }
        let (test_loss, test_accuracy) = test_metrics(&weight)?;
        curve.push(RedenseEpoch {
            epoch,
            train_loss: loss,
            max_weight_norm: max_norm,
            test_loss,
            test_accuracy,
        });
    }

    let (final_loss, best_weight, best_epoch) = best;
    let mut trained = layer.clone();
    trained.output_weight = best_weight;
    let final_logits = lifted.matmul_transposed(&trained.output_weight)?;
    let base_final_loss = opts.base_loss.value(&final_logits, targets)?;

    let mut report = GuaranteeReport {
        old_loss,
        init_loss,
        final_loss,
        epsilon: layer.epsilon,
        guarantee_holds: false,
        best_epoch,
        base_loss: opts.base_loss,
        base_old_loss,
        base_final_loss,
        aborted_at,
    };
    report.guarantee_holds = guarantee_check(&report);
    Ok(RedenseFit {
        layer: trained,
        report,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye_layer(scale: f64) -> RedenseLayer {
        RedenseLayer::with_projection(&Matrix::identity(2), Matrix::identity(2).scale(scale), RngSeed(0)).unwrap()
    }

    #[test]
    fn identity_construction() {
        let layer = eye_layer(1.0);
        assert_eq!(
            layer.output_weight(),
            &Matrix::from_rows(&[[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]])
        );
        assert!((layer.epsilon() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn scaled_identity_construction() {
        let layer = eye_layer(2.0);
        assert_eq!(
            layer.output_weight(),
            &Matrix::from_rows(&[[0.5, 0.0, -0.5, 0.0], [0.0, 0.5, 0.0, -0.5]])
        );
        assert!((layer.epsilon() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn narrow_projection_is_rejected() {
        let o = Matrix::zeros(3, 4);
        let err = RedenseLayer::build(&o.map(|_| 1.0), 4, 3, RngSeed(1)).unwrap_err();
        assert!(matches!(err, Error::WidthConstraint { n: 4, m: 3 }));
        assert!(err.to_string().contains("m >= n"));
    }

    #[test]
    fn lift_examples() {
        let r = Matrix::identity(2);
        let lifted = lfp_lift(&Matrix::from_rows(&[[1.0, -2.0]]), &r).unwrap();
        assert_eq!(lifted, Matrix::from_rows(&[[1.0, 0.0, 0.0, 2.0]]));
        assert_eq!(lfp_lift(&Matrix::zeros(3, 2), &r).unwrap(), Matrix::zeros(3, 4));
    }

    #[test]
    fn reconstruct_examples() {
        let back = lfp_reconstruct(&Matrix::from_rows(&[[1.0, 0.0, 0.0, 2.0]]), 2).unwrap();
        assert_eq!(back, Matrix::from_rows(&[[1.0, -2.0]]));
        let cancel = lfp_reconstruct(&Matrix::from_rows(&[[5.0, 5.0]]), 1).unwrap();
        assert_eq!(cancel, Matrix::from_rows(&[[0.0]]));
        assert!(lfp_reconstruct(&Matrix::zeros(1, 3), 1).is_err());
        assert!(lfp_reconstruct(&Matrix::zeros(1, 4), 1).is_err());
    }

    #[test]
    fn three_four_five_projection() {
        let mut z = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]);
        assert!(project_onto_ball(&mut z, 1.0));
        assert!(z.max_abs_diff(&Matrix::from_rows(&[[0.6, 0.8], [0.0, 0.0]])) < 1e-15);
        let before = z.clone();
        project_onto_ball(&mut z, 1.0);
        assert_eq!(z, before);
    }

    #[test]
    fn zero_features_give_zero_logits() {
        let o = crate::linalg::sample_gaussian(3, 4, RngSeed(2));
        let layer = RedenseLayer::build(&o, 4, 6, RngSeed(3)).unwrap();
        assert_eq!(layer.predict(&Matrix::zeros(2, 4)).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn zero_epochs_returns_start() {
        let o = crate::linalg::sample_gaussian(3, 4, RngSeed(2));
        let layer = RedenseLayer::build(&o, 4, 4, RngSeed(3)).unwrap();
        let y = crate::linalg::sample_gaussian(10, 4, RngSeed(4));
        let t = crate::nn::one_hot(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0], 3);
        let cfg = TrainConfig {
            epochs: 0,
            ..default_config(10, RngSeed(0))
        };
        let fit = train(&layer, &y, &t, &cfg).unwrap();
        assert_eq!(fit.layer.output_weight(), layer.output_weight());
        assert_eq!(fit.report.final_loss, fit.report.init_loss);
        assert_eq!(fit.report.best_epoch, 0);
        assert_eq!(fit.curve.len(), 1);
    }

    #[test]
    fn synthetic_reports() {
        let mut r = GuaranteeReport {
            old_loss: 0.5,
            init_loss: 0.5,
            final_loss: 1.0,
            epsilon: 1.0,
            guarantee_holds: false,
            best_epoch: 0,
            base_loss: Loss::SoftmaxCrossEntropy,
            base_old_loss: 0.5,
            base_final_loss: 1.0,
            aborted_at: None,
        };
        assert!(!guarantee_check(&r));
        r.final_loss = 0.5;
        assert!(guarantee_check(&r));
    }

    #[test]
    fn from_parts_rejects_infeasible_weight() {
        let layer = eye_layer(1.0);
        let outside = layer.output_weight().scale(2.0);
        assert!(RedenseLayer::from_parts(
            layer.projection().clone(),
            layer.epsilon(),
            outside,
            layer.base_output_weight().clone(),
            RngSeed(0)
        )
        .is_err());
    }
}
