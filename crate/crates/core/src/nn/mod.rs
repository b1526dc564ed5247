//! Feedforward network with per-layer activations, inverted dropout on the
//! hidden layers, and Adam.

mod activation;
mod adam;
mod mlp;
mod train;

pub use activation::{apply_activation, ActivationKind};
pub use adam::{adam_step, AdamParams, AdamState};
pub use mlp::{backward, forward, gradient_check, loss, Cache, Gradients, Mode};
pub use train::{
    grid_search, predict, predict_rows, train, EpochRecord, GridResult, TrialRecord, DEFAULT_BATCH_GRID,
    DEFAULT_EPOCH_GRID,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mae,
    LogLoss,
}

/// Clamp applied to predictions before log-loss.
pub const LOG_LOSS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
    /// One per non-input layer.
    pub activations: Vec<ActivationKind>,
    pub dropout_rate: f64,
    pub loss: LossKind,
    pub adam: AdamParams,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Original,
    Final,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Original => "original",
            Preset::Final => "final",
        }
    }

    pub fn config(self, input_dim: usize) -> Result<MlpConfig> {
        match self {
            Preset::Original => original_architecture(input_dim),
            Preset::Final => default_architecture(input_dim),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Preset::Original),
            "final" => Ok(Preset::Final),
            _ => Err(Error::validation(format!("unknown preset `{s}` (expected original or final)"))),
        }
    }
}

/// Hidden-size heuristics: the first hidden layer should stay below twice
/// the input width and the second should not exceed the first.
pub fn rule_of_thumb_warnings(layer_sizes: &[usize]) -> Vec<String> {
    let mut out = Vec::new();
    if layer_sizes.len() >= 3 {
        let (input, h1) = (layer_sizes[0], layer_sizes[1]);
        if h1 >= 2 * input {
            out.push(format!("first hidden layer ({h1}) is at least twice the input width ({input})"));
        }
    }
    if layer_sizes.len() >= 4 {
        let (h1, h2) = (layer_sizes[1], layer_sizes[2]);
        if h2 < 1 || h2 > h1 {
            out.push(format!("second hidden layer ({h2}) is outside [1, {h1}]"));
        }
    }
    out
}

/// The tuned model: [input, 100, 50, 1], Relu/Tanh/Sigmoid, 25% dropout,
/// MAE, batch 96 for 120 epochs.
pub fn default_architecture(input_dim: usize) -> Result<MlpConfig> {
    if input_dim < 1 {
        return Err(Error::validation("input_dim must be at least 1"));
    }
    let config = MlpConfig {
        layer_sizes: vec![input_dim, 100, 50, 1],
        activations: vec![ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Sigmoid],
        dropout_rate: 0.25,
        loss: LossKind::Mae,
        adam: AdamParams::default(),
        batch_size: 96,
        epochs: 120,
        seed: 0,
    };
    for w in rule_of_thumb_warnings(&config.layer_sizes) {
        log::warn!("{w}");
    }
    Ok(config)
}

/// The first model tried: all-Relu, no dropout, log-loss.
pub fn original_architecture(input_dim: usize) -> Result<MlpConfig> {
    Ok(MlpConfig {
        activations: vec![ActivationKind::Relu; 3],
        dropout_rate: 0.0,
        loss: LossKind::LogLoss,
        ..default_architecture(input_dim)?
    })
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.layer_sizes.len();
        if n < 2 {
            return Err(Error::validation("need at least an input and an output layer"));
        }
        if self.layer_sizes.iter().any(|&s| s < 1) {
            return Err(Error::validation("layer sizes must be at least 1"));
        }
        if self.layer_sizes[n - 1] != 1 {
            return Err(Error::validation("output layer must have exactly one unit"));
        }
        if self.activations.len() != n - 1 {
            return Err(Error::validation(format!(
                "{} activations for {} non-input layers",
                self.activations.len(),
                n - 1
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation(format!("dropout must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out x n_in`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub config: MlpConfig,
    pub trained: bool,
    /// Input column names, in the order the network expects them.
    pub features: Vec<String>,
}

impl MlpModel {
    /// Uniform init: ±sqrt(6 / (fan_in + fan_out)) for tanh and sigmoid
    /// layers, ±sqrt(6 / fan_in) for relu layers, zero biases.
    pub fn init(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(config.seed, "init");
        let layers = config
            .layer_sizes
            .windows(2)
            .zip(&config.activations)
            .map(|(w, act)| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = match act {
                    ActivationKind::Relu => (6.0 / n_in as f64).sqrt(),
                    _ => (6.0 / (n_in + n_out) as f64).sqrt(),
                };
                Layer {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| r.gen_range(-limit..=limit)).collect(),
                    biases: vec![0.0; n_out],
                }
            })
            .collect();
        Ok(MlpModel {
            layers,
            config: config.clone(),
            trained: false,
            features: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim()
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.weights.len(), l.biases.len()]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn to_file(&self, scaler_params_ref: Option<&str>) -> ModelFile {
        ModelFile {
            version: MODEL_FILE_VERSION,
            layer_sizes: self.config.layer_sizes.clone(),
            activations: self.config.activations.clone(),
            weights: self.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
            scaler_params_ref: scaler_params_ref.map(str::to_owned),
            features: self.features.clone(),
            seed: self.config.seed,
            trained: self.trained,
            config: self.config.clone(),
        }
    }

    pub fn to_json(&self, scaler_params_ref: Option<&str>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file(scaler_params_ref))?)
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::validation(format!("unsupported model file version {}", file.version)));
        }
        if file.layer_sizes != file.config.layer_sizes || file.activations != file.config.activations {
            return Err(Error::validation("model file header disagrees with its config"));
        }
        file.config.validate()?;
        let n = file.layer_sizes.len() - 1;
        if file.weights.len() != n || file.biases.len() != n {
            return Err(Error::validation("model file has the wrong number of layers"));
        }
        let layers = (0..n)
            .map(|i| {
                let (n_in, n_out) = (file.layer_sizes[i], file.layer_sizes[i + 1]);
                if file.weights[i].len() != n_in * n_out || file.biases[i].len() != n_out {
                    return Err(Error::validation(format!("model file layer {i} has the wrong shape")));
                }
                Ok(Layer {
                    n_in,
                    n_out,
                    weights: file.weights[i].clone(),
                    biases: file.biases[i].clone(),
                })
            })
            .collect::<Result<_>>()?;
        let model = MlpModel {
            layers,
            config: file.config,
            trained: file.trained,
            features: file.features,
        };
        if !model.is_finite() {
            return Err(Error::validation("model file holds non-finite parameters"));
        }
        Ok(model)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        MlpModel::from_file(serde_json::from_str(json)?)
    }
}

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<ActivationKind>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub scaler_params_ref: Option<String>,
    pub features: Vec<String>,
    pub seed: u64,
    pub trained: bool,
    pub config: MlpConfig,
}
