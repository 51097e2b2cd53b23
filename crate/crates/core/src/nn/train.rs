use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::Loss;
use super::model::{Dataset, MlpModel};
use super::optim::{GroupState, Optimizer};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngSeed};

/// Stream id for mini-batch shuffling, kept apart from weight init.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Coefficient of the l2 penalty `0.5 * wd * ||W||^2` on weight matrices.
    pub weight_decay: f64,
    pub optimizer: Optimizer,
    pub seed: RngSeed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 128,
            weight_decay: 0.0,
            optimizer: Optimizer::adam(),
            seed: RngSeed(0),
        }
    }
}

impl TrainConfig {
    /// Zero epochs is accepted and means "no updates".
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || eps.is_nan() || eps <= 0.0 {
                return Err(Error::InvalidConfig("adam needs betas in [0,1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Summed over the training set, excluding the weight-decay penalty.
    pub train_loss: f64,
}

/// Gradients of the summed batch loss for every parameter group.
struct Gradients {
    layers: Vec<(Matrix, Vec<f64>)>,
    output_weight: Matrix,
    output_bias: Vec<f64>,
}

fn backprop(model: &MlpModel, inputs: &Matrix, targets: &Matrix, loss: Loss) -> Result<Gradients> {
    let trace = model.trace(inputs)?;
    let d_logits = loss.grad(&trace.logits, targets)?;
    let features = trace.activations.last().expect("non-empty");

    let output_weight = d_logits.transposed_matmul(features)?;
    let output_bias = d_logits.column_sums();
    let mut d_act = d_logits.matmul(model.output_weight())?;

    let mut layers = Vec::with_capacity(model.layers().len());
    for (l, layer) in model.layers().iter().enumerate().rev() {
        let z = &trace.pre_activations[l];
        let d_pre = Matrix::from_vec_unchecked(
            z.rows(),
            z.cols(),
            d_act
                .as_slice()
                .iter()
                .zip(z.as_slice())
                .map(|(&g, &zv)| g * layer.activation.derivative(zv))
                .collect(),
        );
        let d_weight = d_pre.transposed_matmul(&trace.activations[l])?;
        let d_bias = d_pre.column_sums();
        if l > 0 {
            d_act = d_pre.matmul(&layer.weight)?;
        }
        layers.push((d_weight, d_bias));
    }
    layers.reverse();
    Ok(Gradients {
        layers,
        output_weight,
        output_bias,
    })
}

/// Trains every layer and the output head with mini-batch backprop.
///
/// Returns the trained model and the full-training-set loss before the first
/// epoch (epoch 0) and after each epoch.
pub fn train_base(
    model: &MlpModel,
    data: &Dataset,
    loss: Loss,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochLoss>)> {
    train_base_observed(model, data, loss, cfg, |_, _| {})
}

/// [`train_base`] with a callback invoked after epoch 0 and every epoch.
pub fn train_base_observed(
    model: &MlpModel,
    data: &Dataset,
    loss: Loss,
    cfg: &TrainConfig,
    mut observer: impl FnMut(usize, &MlpModel),
) -> Result<(MlpModel, Vec<EpochLoss>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.targets.cols() != model.output_dim() {
        return Err(Error::mismatch(
            "targets",
            data.targets.shape(),
            model.output_weight().shape(),
        ));
    }

    let mut model = model.clone();
    let mut layer_states: Vec<(GroupState, GroupState)> = model
        .layers()
        .iter()
        .map(|l| {
            (
                GroupState::new(cfg.optimizer, l.weight.as_slice().len()),
                GroupState::new(cfg.optimizer, l.bias.len()),
            )
        })
        .collect();
    let mut head_w = GroupState::new(cfg.optimizer, model.output_weight().as_slice().len());
    let mut head_b = GroupState::new(cfg.optimizer, model.output_bias().len());

    let full_loss = |m: &MlpModel, epoch: usize| -> Result<f64> {
        let logits = m.forward(&data.inputs)?.logits;
        if !logits.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let v = loss.value(&logits, &data.targets)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Diverged { epoch })
        }
    };

    let mut curve = vec![EpochLoss {
        epoch: 0,
        train_loss: full_loss(&model, 0)?,
    }];
    observer(0, &model);

    let mut rng = cfg.seed.derive(SHUFFLE_STREAM).rng();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let wd = cfg.weight_decay;
    let lr = cfg.learning_rate;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (inputs, targets) = if batch.len() == data.len() {
                (data.inputs.clone(), data.targets.clone())
            } else {
                (data.inputs.select_rows(batch), data.targets.select_rows(batch))
            };
            let grads = match backprop(&model, &inputs, &targets, loss) {
                Ok(g) => g,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            if !grads.output_weight.is_finite() {
                return Err(Error::Diverged { epoch });
            }

            for ((layer, (gw, gb)), (sw, sb)) in model
                .layers_mut()
                .iter_mut()
                .zip(&grads.layers)
                .zip(layer_states.iter_mut())
            {
                let mut gw = gw.as_slice().to_vec();
                if wd > 0.0 {
                    for (g, &w) in gw.iter_mut().zip(layer.weight.as_slice()) {
                        *g += wd * w;
                    }
                }
                sw.apply(layer.weight.as_mut_slice(), &gw, lr);
                sb.apply(&mut layer.bias, gb, lr);
            }
            let mut gw = grads.output_weight.as_slice().to_vec();
            if wd > 0.0 {
                for (g, &w) in gw.iter_mut().zip(model.output_weight().as_slice()) {
                    *g += wd * w;
                }
            }
            head_w.apply(model.output_weight_mut().as_mut_slice(), &gw, lr);
            head_b.apply(model.output_bias_mut(), &grads.output_bias, lr);
        }
        curve.push(EpochLoss {
            epoch,
            train_loss: full_loss(&model, epoch)?,
        });
        observer(epoch, &model);
    }
    Ok((model, curve))
}
