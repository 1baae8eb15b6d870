//! Fully connected encoder/decoder network with SELU hidden layers and a
//! linear output layer, plus exact backpropagation for the MSE objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AeError, NetworkConfig};

/// SELU scale.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// SELU negative-side saturation.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

pub fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Mean squared error `(1/n) Σ (x_i - r_i)^2`.
pub fn loss_mse(x: &[f64], r: &[f64]) -> Result<f64, AeError> {
    if x.len() != r.len() {
        return Err(AeError::DimensionMismatch {
            expected: x.len(),
            found: r.len(),
        });
    }
    Ok(mse(x, r))
}

pub(crate) fn mse(x: &[f64], r: &[f64]) -> f64 {
    x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// One affine layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    fn affine_into(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

/// Weights and biases of every layer.
///
/// `generation` changes on every mutation so a [`ForwardCache`] taken before an
/// update is detected as stale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    layers: Vec<Layer>,
    #[serde(skip)]
    generation: u64,
}

impl NetworkParams {
    /// Wraps explicit layers, checking that consecutive shapes chain and the
    /// output width equals the input width.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, AeError> {
        let first = layers.first().ok_or(AeError::ZeroWidth)?;
        let input = first.inputs;
        let mut width = input;
        for layer in &layers {
            if layer.inputs == 0 || layer.outputs == 0 {
                return Err(AeError::ZeroWidth);
            }
            if layer.inputs != width
                || layer.weights.len() != layer.inputs * layer.outputs
                || layer.bias.len() != layer.outputs
            {
                return Err(AeError::ShapeMismatch);
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(AeError::NonFiniteParameter);
            }
            width = layer.outputs;
        }
        if width != input {
            return Err(AeError::ShapeMismatch);
        }
        Ok(Self { layers, generation: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation = self.generation.wrapping_add(1);
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// Initializes a network for `config`: Gaussian weights with variance
/// `1/fan_in`, zero biases. Deterministic in `config.seed`.
pub fn build_network(config: &NetworkConfig) -> Result<NetworkParams, AeError> {
    let widths = config.layer_widths()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layers = widths
        .windows(2)
        .map(|w| {
            let (inputs, outputs) = (w[0], w[1]);
            let normal = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).expect("positive stddev");
            Layer {
                inputs,
                outputs,
                weights: (0..inputs * outputs).map(|_| normal.sample(&mut rng)).collect(),
                bias: vec![0.0; outputs],
            }
        })
        .collect();
    NetworkParams::from_layers(layers)
}

/// Pre-activations and activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    fn for_params(params: &NetworkParams) -> Self {
        Self {
            generation: params.generation,
            input: vec![0.0; params.input_dim()],
            pre: params.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            post: params.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.post.last().expect("at least one layer")
    }

    /// Pre-activation of layer `l`.
    pub fn pre_activation(&self, l: usize) -> &[f64] {
        &self.pre[l]
    }

    fn fill(&mut self, params: &NetworkParams, x: &[f64]) {
        self.generation = params.generation;
        self.input.copy_from_slice(x);
        let last = params.layers.len() - 1;
        for (l, layer) in params.layers.iter().enumerate() {
            let (before, after) = self.post.split_at_mut(l);
            let input = if l == 0 { &self.input[..] } else { &before[l - 1][..] };
            layer.affine_into(input, &mut self.pre[l]);
            let out = &mut after[0];
            if l == last {
                out.copy_from_slice(&self.pre[l]);
            } else {
                for (o, z) in out.iter_mut().zip(&self.pre[l]) {
                    *o = selu(*z);
                }
            }
        }
    }
}

/// Runs `x` through encoder and decoder, returning the reconstruction and
/// the cache needed by [`backward`].
pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), AeError> {
    check_input(params, x)?;
    let mut cache = ForwardCache::for_params(params);
    cache.fill(params, x);
    Ok((cache.output().to_vec(), cache))
}

fn check_input(params: &NetworkParams, x: &[f64]) -> Result<(), AeError> {
    if x.len() != params.input_dim() {
        return Err(AeError::DimensionMismatch {
            expected: params.input_dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Gradient of the loss with respect to one layer's weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    fn clear(&mut self) {
        for g in &mut self.layers {
            g.weights.fill(0.0);
            g.bias.fill(0.0);
        }
    }

    fn scale(&mut self, s: f64) {
        for g in &mut self.layers {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|g| g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()))
    }
}

/// Exact gradient of `loss_mse(x, forward(x))` with respect to every parameter.
///
/// The cache must come from `forward(params, x)` with the same, unmodified
/// parameters and the same input.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, x: &[f64]) -> Result<Gradients, AeError> {
    check_input(params, x)?;
    if cache.generation != params.generation
        || cache.input != x
        || cache.pre.len() != params.layers.len()
        || cache.pre.iter().zip(&params.layers).any(|(z, l)| z.len() != l.outputs)
    {
        return Err(AeError::StaleCache);
    }
    let mut grads = Gradients::zeros_like(params);
    let mut scratch = Deltas::for_params(params);
    accumulate_gradient(params, cache, &mut grads, &mut scratch, 1.0);
    Ok(grads)
}

/// Per-layer backpropagated error signals.
pub(crate) struct Deltas(Vec<Vec<f64>>);

impl Deltas {
    pub(crate) fn for_params(params: &NetworkParams) -> Self {
        Self(params.layers.iter().map(|l| vec![0.0; l.outputs]).collect())
    }
}

/// Adds `scale * ∂loss/∂θ` for the example held in `cache` into `grads`.
fn accumulate_gradient(
    params: &NetworkParams,
    cache: &ForwardCache,
    grads: &mut Gradients,
    deltas: &mut Deltas,
    scale: f64,
) {
    let last = params.layers.len() - 1;
    let n = cache.input.len() as f64;
    for ((d, r), x) in deltas.0[last].iter_mut().zip(cache.output()).zip(&cache.input) {
        *d = 2.0 * (r - x) / n;
    }
    for l in (0..=last).rev() {
        let layer = &params.layers[l];
        let input = if l == 0 {
            &cache.input[..]
        } else {
            &cache.post[l - 1][..]
        };
        let g = &mut grads.layers[l];
        let delta = &deltas.0[l];
        for (o, &dv) in delta.iter().enumerate() {
            let ds = dv * scale;
            g.bias[o] += ds;
            let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (gw, xi) in row.iter_mut().zip(input) {
                *gw += ds * xi;
            }
        }
        if l > 0 {
            let (lower, upper) = deltas.0.split_at_mut(l);
            let below = &mut lower[l - 1];
            let delta = &upper[0];
            for (i, b) in below.iter_mut().enumerate() {
                let back: f64 = delta
                    .iter()
                    .enumerate()
                    .map(|(o, dv)| layer.weights[o * layer.inputs + i] * dv)
                    .sum();
                *b = back * selu_derivative(cache.pre[l - 1][i]);
            }
        }
    }
}

/// Reusable buffers for mean-gradient evaluation over mini-batches.
pub(crate) struct BatchWorkspace {
    cache: ForwardCache,
    deltas: Deltas,
    pub(crate) grads: Gradients,
}

impl BatchWorkspace {
    pub(crate) fn new(params: &NetworkParams) -> Self {
        Self {
            cache: ForwardCache::for_params(params),
            deltas: Deltas::for_params(params),
            grads: Gradients::zeros_like(params),
        }
    }

    /// Fills `self.grads` with the batch-mean gradient and returns the summed loss.
    pub(crate) fn mean_gradient<'a>(
        &mut self,
        params: &NetworkParams,
        rows: impl ExactSizeIterator<Item = &'a [f64]>,
    ) -> f64 {
        self.grads.clear();
        let count = rows.len();
        let mut total = 0.0;
        for x in rows {
            self.cache.fill(params, x);
            total += mse(x, self.cache.output());
            accumulate_gradient(params, &self.cache, &mut self.grads, &mut self.deltas, 1.0);
        }
        self.grads.scale(1.0 / count as f64);
        total
    }
}

/// Reconstruction of a single input without keeping a cache.
pub fn reconstruct(params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>, AeError> {
    forward(params, x).map(|(r, _)| r)
}
