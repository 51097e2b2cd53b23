use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::loss::Loss;
use crate::error::{Error, Result};
use crate::linalg::{fill_gaussian, Matrix, RngSeed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative at the pre-activation `z`; ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::LeakyRelu { slope } => write!(f, "leaky_relu:{slope}"),
            Activation::Identity => f.write_str("identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('-', "_");
        match lower.as_str() {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            "leaky_relu" => Ok(Activation::LeakyRelu { slope: 0.01 }),
            other => match other.strip_prefix("leaky_relu:") {
                Some(v) => v
                    .parse::<f64>()
                    .ok()
                    .filter(|s| s.is_finite())
                    .map(|slope| Activation::LeakyRelu { slope })
                    .ok_or_else(|| Error::InvalidConfig(format!("bad leaky slope {v:?}"))),
                None => Err(Error::InvalidConfig(format!("unknown activation {s:?}"))),
            },
        }
    }
}

/// Fully connected layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Returns `(pre_activation, activation)` for a batch.
    fn apply(&self, inputs: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut z = inputs.matmul_transposed(&self.weight)?;
        add_row_bias(&mut z, &self.bias);
        let a = z.map(|v| self.activation.apply(v));
        Ok((z, a))
    }
}

pub(crate) fn add_row_bias(m: &mut Matrix, bias: &[f64]) {
    let cols = m.cols();
    debug_assert_eq!(cols, bias.len());
    if cols == 0 {
        return;
    }
    for row in m.as_mut_slice().chunks_mut(cols) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Feedforward network: hidden layer stack plus a linear output head.
///
/// `features` (the last hidden activations, or the raw inputs when there are
/// no hidden layers) feed the head `logits = features * output_weight^T + output_bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
    output_weight: Matrix,
    output_bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Matrix,
    pub features: Matrix,
}

/// Cached activations of a forward pass, used for backprop.
pub(crate) struct Trace {
    /// `activations[0]` is the input; `activations[l + 1]` is the output of layer `l`.
    pub activations: Vec<Matrix>,
    pub pre_activations: Vec<Matrix>,
    pub logits: Matrix,
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>, output_weight: Matrix, output_bias: Vec<f64>) -> Result<Self> {
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::mismatch(
                    "layer bias",
                    layer.weight.shape(),
                    (layer.bias.len(), 1),
                ));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.in_dim() != layer.out_dim() {
                    return Err(Error::mismatch(
                        "layer chain",
                        layer.weight.shape(),
                        next.weight.shape(),
                    ));
                }
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite("layer parameters"));
            }
            if let Activation::LeakyRelu { slope } = layer.activation {
                if !slope.is_finite() {
                    return Err(Error::NonFinite("leaky relu slope"));
                }
            }
        }
        if let Some(last) = layers.last() {
            if last.out_dim() != output_weight.cols() {
                return Err(Error::mismatch(
                    "output weight",
                    last.weight.shape(),
                    output_weight.shape(),
                ));
            }
        }
        if output_bias.len() != output_weight.rows() {
            return Err(Error::mismatch(
                "output bias",
                output_weight.shape(),
                (output_bias.len(), 1),
            ));
        }
        if !output_weight.is_finite() || output_bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("output parameters"));
        }
        Ok(Self {
            layers,
            output_weight,
            output_bias,
        })
    }

    /// Random initialization: weights `N(0, 1/fan_in)`, zero biases.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        outputs: usize,
        seed: RngSeed,
    ) -> Result<Self> {
        if input_dim == 0 || outputs == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let mut rng = seed.rng();
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input_dim;
        for &width in hidden {
            let scale = 1.0 / (fan_in as f64).sqrt();
            layers.push(DenseLayer {
                weight: fill_gaussian(width, fan_in, &mut rng).scale(scale),
                bias: vec![0.0; width],
                activation,
            });
            fan_in = width;
        }
        let scale = 1.0 / (fan_in as f64).sqrt();
        let output_weight = fill_gaussian(outputs, fan_in, &mut rng).scale(scale);
        Self::new(layers, output_weight, vec![0.0; outputs])
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn output_weight(&self) -> &Matrix {
        &self.output_weight
    }

    pub(crate) fn output_weight_mut(&mut self) -> &mut Matrix {
        &mut self.output_weight
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.output_bias
    }

    pub(crate) fn output_bias_mut(&mut self) -> &mut Vec<f64> {
        &mut self.output_bias
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .map_or(self.output_weight.cols(), DenseLayer::in_dim)
    }

    /// Width `n` of the feature vector feeding the output head.
    pub fn feature_dim(&self) -> usize {
        self.output_weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.output_weight.rows()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Forward> {
        let features = self.extract_features(inputs)?;
        let logits = self.head_logits(&features)?;
        Ok(Forward { logits, features })
    }

    /// Second-to-last layer activations.
    pub fn extract_features(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_inputs(inputs)?;
        let mut current = inputs.clone();
        for layer in &self.layers {
            current = layer.apply(&current)?.1;
        }
        Ok(current)
    }

    /// Applies only the output head to precomputed features.
    pub fn head_logits(&self, features: &Matrix) -> Result<Matrix> {
        let mut logits = features.matmul_transposed(&self.output_weight)?;
        add_row_bias(&mut logits, &self.output_bias);
        Ok(logits)
    }

    /// Features with a trailing constant-1 column, so the output bias
    /// becomes an ordinary column of [`MlpModel::folded_output_weight`].
    pub fn folded_features(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.extract_features(inputs)?.with_constant_column(1.0))
    }

    /// `[Ô | b]`, Q x (n + 1).
    pub fn folded_output_weight(&self) -> Matrix {
        let bias = Matrix::from_vec_unchecked(self.output_bias.len(), 1, self.output_bias.clone());
        self.output_weight.hconcat(&bias).expect("bias has one entry per class")
    }

    pub(crate) fn trace(&self, inputs: &Matrix) -> Result<Trace> {
        self.check_inputs(inputs)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(inputs.clone());
        for layer in &self.layers {
            let (z, a) = layer.apply(activations.last().expect("non-empty"))?;
            pre_activations.push(z);
            activations.push(a);
        }
        let logits = self.head_logits(activations.last().expect("non-empty"))?;
        Ok(Trace {
            activations,
            pre_activations,
            logits,
        })
    }

    pub fn evaluate(&self, inputs: &Matrix, targets: &Matrix, loss: Loss) -> Result<Evaluation> {
        evaluate_logits(&self.forward(inputs)?.logits, targets, loss)
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum::<usize>()
            + self.output_weight.as_slice().len()
            + self.output_bias.len()
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::mismatch(
                "forward",
                inputs.shape(),
                (self.input_dim(), self.feature_dim()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Summed over samples.
    pub loss: f64,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Loss and argmax accuracy of logits against one-hot targets.
///
/// Argmax ties resolve to the lowest index on both sides.
pub fn evaluate_logits(logits: &Matrix, targets: &Matrix, loss: Loss) -> Result<Evaluation> {
    if logits.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let total = loss.value(logits, targets)?;
    let correct = logits
        .argmax_rows()
        .iter()
        .zip(targets.argmax_rows())
        .filter(|(a, b)| **a == *b)
        .count();
    let j = logits.rows() as f64;
    Ok(Evaluation {
        loss: total,
        mean_loss: total / j,
        accuracy: correct as f64 / j,
    })
}

/// Inputs with their (usually one-hot) targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::mismatch("dataset", inputs.shape(), targets.shape()));
        }
        Ok(Self { inputs, targets })
    }

    /// Builds one-hot targets from class labels.
    pub fn from_labels(inputs: Matrix, labels: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::mismatch("dataset", inputs.shape(), (labels.len(), classes)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Dataset::new(inputs, one_hot(labels, classes))
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn classes(&self) -> usize {
        self.targets.cols()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.targets.argmax_rows()
    }

    /// True when every target row is a one-hot vector.
    pub fn is_one_hot(&self) -> bool {
        (0..self.targets.rows()).all(|r| {
            let row = self.targets.row(r);
            row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().sum::<f64>() == 1.0
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select_rows(indices),
        }
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &l) in labels.iter().enumerate() {
        m.set(r, l, 1.0);
    }
    m
}
