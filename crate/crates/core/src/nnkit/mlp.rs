use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Mish,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    None,
    Tanh,
}

/// Fully connected network shape: `layer_widths[0]` inputs, one linear layer
/// per consecutive pair, hidden activation between layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Self {
        Self {
            layer_widths,
            activation,
            output_activation: OutputActivation::None,
        }
    }

    /// `depth` linear layers of width `hidden` between `input` and `output`.
    pub fn uniform(input: usize, hidden: usize, output: usize, depth: usize, activation: Activation) -> Self {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, depth.saturating_sub(1)));
        widths.push(output);
        Self::new(widths, activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config(format!(
                "mlp needs at least 2 widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config(format!(
                "mlp widths must be positive: {:?}",
                self.layer_widths
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// Whether a forward pass registers parameters for gradient collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamMode {
    Train,
    Frozen,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParamStore,
}

impl Mlp {
    /// Uniform init in `+-sqrt(1/fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (l, w) in spec.layer_widths.windows(2).enumerate() {
            let bound = (1.0 / w[0] as f64).sqrt();
            let weight = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(format!("l{l}.weight"), Tensor::from_vec(w[0], w[1], weight)?);
            params.push(format!("l{l}.bias"), Tensor::from_vec(1, w[1], bias)?);
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (l, w) in spec.layer_widths.windows(2).enumerate() {
            params.push(format!("l{l}.weight"), Tensor::zeros(w[0], w[1]));
            params.push(format!("l{l}.bias"), Tensor::zeros(1, w[1]));
        }
        Ok(Self { spec, params })
    }

    /// Wrap an existing store, checking it matches the layer layout in `spec`.
    pub fn from_params(spec: MlpSpec, params: ParamStore) -> Result<Self> {
        let expected = Self::zeros(spec.clone())?;
        if !expected.params.same_layout(&params) {
            return Err(Error::Config(format!(
                "parameter layout does not match mlp widths {:?}",
                spec.layer_widths
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Record the forward pass of `input` (rows are samples) on `tape`.
    pub fn forward(&self, tape: &mut Tape, input: Var, mode: ParamMode) -> Result<Var> {
        let width = tape.value(input).cols();
        if width != self.spec.input_width() {
            return Err(Error::shape("mlp_forward input", self.spec.input_width(), width));
        }
        let track = mode == ParamMode::Train;
        let n_layers = self.spec.num_layers();
        let mut h = input;
        for l in 0..n_layers {
            let w = tape.param(&self.params, 2 * l, track);
            let b = tape.param(&self.params, 2 * l + 1, track);
            let z = tape.matmul(h, w);
            h = tape.add(z, b);
            if l + 1 < n_layers {
                h = match self.spec.activation {
                    Activation::Mish => tape.mish(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        if self.spec.output_activation == OutputActivation::Tanh {
            h = tape.tanh(h);
        }
        Ok(h)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, x, ParamMode::Frozen)?;
        Ok(tape.value(y).clone())
    }
}
