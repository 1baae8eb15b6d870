//! Undercomplete autoencoder for outlier scoring with dimension-level feedback.
//!
//! The network maps an observation through a narrower bottleneck and back.
//! Training minimizes mean squared reconstruction error with Adam; afterwards
//! each observation gets an aggregate score (its MSE) and a signed deviation
//! per dimension (`observed - reconstructed`, standardized units). Positive
//! deviations mean the observation sits above its expected value.
//!
//! The model is used transductively: it is trained on the full dataset and
//! scores that same dataset.

mod adam;
mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use network::{
    backward, build_network, forward, loss_mse, reconstruct, selu, selu_derivative, ForwardCache, Gradients, Layer,
    LayerGradient, NetworkParams, SELU_ALPHA, SELU_LAMBDA,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, ObsId};
use network::BatchWorkspace;

#[derive(Debug, Error)]
pub enum AeError {
    #[error("encoding dimension {encoding_dim} must be smaller than input dimension {input_dim}")]
    NotUndercomplete { input_dim: usize, encoding_dim: usize },
    #[error("network has a zero-width layer or no hidden layers")]
    ZeroWidth,
    #[error("layer shapes do not chain from input back to input width")]
    ShapeMismatch,
    #[error("parameters contain non-finite values")]
    NonFiniteParameter,
    #[error("expected input of length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("forward cache does not match the current parameters and input")]
    StaleCache,
    #[error("adam step index must be at least 1")]
    InvalidStep,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

/// Architecture and optimization settings.
///
/// `hidden_layers` counts hidden layers between input and output. Widths fall
/// linearly from `input_dim` to `encoding_dim` over the encoder half and
/// mirror back in the decoder; an even count yields two bottleneck-width
/// layers in the middle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub encoding_dim: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many consecutive epochs without sufficient improvement.
    pub patience: usize,
    /// Improvement in epoch loss below this counts as no improvement.
    pub min_improvement: f64,
}

pub const DEFAULT_LEARNING_RATE: f64 = 9.5e-3;
pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_BATCH_SIZE: usize = 32;

impl NetworkConfig {
    /// Defaults for a `d`-dimensional input: 5 → bottleneck 4 with 3 hidden
    /// layers, 11 → bottleneck 7 with 8 hidden layers; other widths use a
    /// two-thirds bottleneck.
    pub fn for_input_dim(d: usize, seed: u64) -> Result<Self, AeError> {
        if d < 2 {
            return Err(AeError::NotUndercomplete {
                input_dim: d,
                encoding_dim: d,
            });
        }
        let (encoding_dim, hidden_layers) = match d {
            5 => (4, 3),
            11 => (7, 8),
            _ => {
                let m = ((2 * d) as f64 / 3.0).round() as usize;
                (m.clamp(1, d - 1), if d <= 5 { 3 } else { 8 })
            }
        };
        Ok(Self {
            input_dim: d,
            encoding_dim,
            hidden_layers,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
            patience: 20,
            min_improvement: 1e-6,
        })
    }

    /// Widths of every layer including input and output, e.g. `[5, 5, 4, 5, 5]`.
    pub fn layer_widths(&self) -> Result<Vec<usize>, AeError> {
        let (n, m, h) = (self.input_dim, self.encoding_dim, self.hidden_layers);
        if n == 0 || m == 0 || h == 0 {
            return Err(AeError::ZeroWidth);
        }
        if m >= n {
            return Err(AeError::NotUndercomplete {
                input_dim: n,
                encoding_dim: m,
            });
        }
        let half = h.div_ceil(2);
        let encoder: Vec<usize> = (1..=half)
            .map(|i| (n as f64 + (m as f64 - n as f64) * i as f64 / half as f64).round() as usize)
            .collect();
        let mirrored = if h % 2 == 1 { &encoder[..half - 1] } else { &encoder[..] };
        let mut widths = vec![n];
        widths.extend(&encoder);
        widths.extend(mirrored.iter().rev());
        widths.push(n);
        Ok(widths)
    }

    fn validate_training(&self) -> Result<(), AeError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AeError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(AeError::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Trained parameters with the per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: NetworkParams,
    pub loss_curve: Vec<f64>,
    pub stopped_early: bool,
}

/// Trains on every row of `data` (expected to be standardized).
///
/// Each epoch visits a seeded shuffle of the rows in mini-batches of
/// `batch_size`; the last batch may be smaller. Identical `(config, data)`
/// produce bit-identical parameters.
pub fn train(data: &Dataset, config: &NetworkConfig) -> Result<TrainedModel, AeError> {
    config.validate_training()?;
    if data.d() != config.input_dim {
        return Err(AeError::DimensionMismatch {
            expected: config.input_dim,
            found: data.d(),
        });
    }
    if data.n() < config.batch_size {
        return Err(AeError::InvalidConfig(format!(
            "batch_size {} exceeds the {} available observations",
            config.batch_size,
            data.n()
        )));
    }
    let mut params = build_network(config)?;
    let mut state = AdamState::new(&params, AdamConfig::default());
    let mut workspace = BatchWorkspace::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..data.n()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut step = 0u64;
    let mut stopped_early = false;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            total += workspace.mean_gradient(&params, batch.iter().map(|&i| data.row(i)));
            step += 1;
            adam_step(&mut params, &workspace.grads, &mut state, step, config.learning_rate).map_err(|e| match e {
                AeError::NonFiniteGradient { .. } => AeError::Divergence { epoch },
                other => other,
            })?;
        }
        let epoch_loss = total / data.n() as f64;
        if !epoch_loss.is_finite() {
            return Err(AeError::Divergence { epoch });
        }
        loss_curve.push(epoch_loss);
        if epoch_loss < best - config.min_improvement {
            best = epoch_loss;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainedModel {
        params,
        loss_curve,
        stopped_early,
    })
}

/// Aggregate score and signed per-dimension deviations of one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub id: ObsId,
    /// Mean of squared deviations.
    pub score: f64,
    /// `observed - reconstructed` per dimension.
    pub deviations: Vec<f64>,
}

impl ReconstructionReport {
    pub fn from_reconstruction(id: ObsId, observed: &[f64], reconstructed: &[f64]) -> Self {
        let deviations: Vec<f64> = observed.iter().zip(reconstructed).map(|(x, r)| x - r).collect();
        let score = deviations.iter().map(|e| e * e).sum::<f64>() / deviations.len() as f64;
        Self { id, score, deviations }
    }
}

/// Scores every observation. Each report depends only on its own row.
pub fn reconstruct_all(params: &NetworkParams, data: &Dataset) -> Result<Vec<ReconstructionReport>, AeError> {
    if data.d() != params.input_dim() {
        return Err(AeError::DimensionMismatch {
            expected: params.input_dim(),
            found: data.d(),
        });
    }
    (0..data.n())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let r = reconstruct(params, x)?;
            Ok(ReconstructionReport::from_reconstruction(data.ids()[i].clone(), x, &r))
        })
        .collect()
}
