//! The 5-hidden-layer character RNN: three feed-forward clipped-ReLU
//! layers (the first consuming a +/-C frame context with configurable
//! stride), one summed bidirectional recurrent layer, a post-recurrent
//! layer, and a 29-way softmax.

mod backward;
mod checkpoint;
mod forward;
mod timesplit;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward, softmax_rows, ForwardMode};
pub use timesplit::{forward_backward_timesplit, ExchangePass, ExchangeRecord, TimesplitOutput};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::alphabet::ALPHABET_SIZE;
use crate::error::{Error, Result};

/// Upper bound of the clipped ReLU.
pub const RELU_CLIP: f64 = 20.0;

/// `g(z) = min(max(0, z), 20)`.
#[inline]
pub fn clipped_relu(z: f64) -> f64 {
    z.clamp(0.0, RELU_CLIP)
}

/// Subgradient of the clipped ReLU: 1 on the open interval (0, 20),
/// 0 elsewhere including both kinks.
#[inline]
pub fn clipped_relu_deriv(z: f64) -> f64 {
    if z > 0.0 && z < RELU_CLIP {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Context frames on each side of the center frame.
    pub context: usize,
    /// Input frames advanced per output step (1 or 2).
    pub stride: usize,
    /// Hidden sizes of layers 1-5; layer 4 is the recurrent width.
    pub hidden: [usize; 5],
    /// Feature dimension F of each input frame.
    pub input_dim: usize,
    /// Dropout rate for the feed-forward layers, in [0, 0.5].
    pub dropout_rate: f64,
    /// Whether dropout also applies to the layer-5 output.
    pub dropout_layer5: bool,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::BadConfig(format!("stride {} not in {{1,2}}", self.stride)));
        }
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::BadConfig("zero-sized layer".into()));
        }
        if !(0.0..=0.5).contains(&self.dropout_rate) {
            return Err(Error::BadConfig(format!(
                "dropout rate {} outside [0, 0.5]",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Width of the layer-1 input: F * (2C + 1).
    pub fn context_dim(&self) -> usize {
        self.input_dim * (2 * self.context + 1)
    }

    /// Output steps for `t` input frames: ceil(t / stride).
    pub fn output_steps(&self, input_frames: usize) -> usize {
        input_frames.div_ceil(self.stride)
    }
}

/// All learnable tensors. Also used for gradients and optimizer
/// velocities, which share the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    pub w4: Array2<f64>,
    pub b4: Array1<f64>,
    pub w_rf: Array2<f64>,
    pub w_rb: Array2<f64>,
    pub w5: Array2<f64>,
    pub b5: Array1<f64>,
    pub w6: Array2<f64>,
    pub b6: Array1<f64>,
}

/// Gradients with respect to every tensor of [`NetworkParams`].
pub type GradientSet = NetworkParams;

/// Fixed serialization and iteration order of the parameter tensors.
pub const TENSOR_NAMES: [&str; 14] = [
    "w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "w_rf", "w_rb", "w5", "b5", "w6", "b6",
];

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let [h1, h2, h3, h4, h5] = config.hidden;
        Ok(NetworkParams {
            w1: Array2::zeros((h1, config.context_dim())),
            b1: Array1::zeros(h1),
            w2: Array2::zeros((h2, h1)),
            b2: Array1::zeros(h2),
            w3: Array2::zeros((h3, h2)),
            b3: Array1::zeros(h3),
            w4: Array2::zeros((h4, h3)),
            b4: Array1::zeros(h4),
            w_rf: Array2::zeros((h4, h4)),
            w_rb: Array2::zeros((h4, h4)),
            w5: Array2::zeros((h5, h4)),
            b5: Array1::zeros(h5),
            w6: Array2::zeros((ALPHABET_SIZE, h5)),
            b6: Array1::zeros(ALPHABET_SIZE),
        })
    }

    /// Flat views over all tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 14] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.w3.as_slice().unwrap(),
            self.b3.as_slice().unwrap(),
            self.w4.as_slice().unwrap(),
            self.b4.as_slice().unwrap(),
            self.w_rf.as_slice().unwrap(),
            self.w_rb.as_slice().unwrap(),
            self.w5.as_slice().unwrap(),
            self.b5.as_slice().unwrap(),
            self.w6.as_slice().unwrap(),
            self.b6.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 14] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.w3.as_slice_mut().unwrap(),
            self.b3.as_slice_mut().unwrap(),
            self.w4.as_slice_mut().unwrap(),
            self.b4.as_slice_mut().unwrap(),
            self.w_rf.as_slice_mut().unwrap(),
            self.w_rb.as_slice_mut().unwrap(),
            self.w5.as_slice_mut().unwrap(),
            self.b5.as_slice_mut().unwrap(),
            self.w6.as_slice_mut().unwrap(),
            self.b6.as_slice_mut().unwrap(),
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// `self[i] += scale * other[i]` over every tensor entry.
    pub fn axpy(&mut self, scale: f64, other: &NetworkParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Largest absolute entrywise difference against `other`.
    pub fn max_abs_diff(&self, other: &NetworkParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn shapes_match(&self, other: &NetworkParams) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.len() == b.len())
            && self.w1.dim() == other.w1.dim()
            && self.w6.dim() == other.w6.dim()
    }
}

/// Glorot-uniform initialization: weights uniform in [-r, r] with
/// r = sqrt(6 / (fan_in + fan_out)), biases zero. Deterministic per seed.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = |w: &mut Array2<f64>| {
        let (fan_out, fan_in) = w.dim();
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in w.iter_mut() {
            *v = rng.random_range(-r..r);
        }
    };
    init(&mut params.w1);
    init(&mut params.w2);
    init(&mut params.w3);
    init(&mut params.w4);
    init(&mut params.w_rf);
    init(&mut params.w_rb);
    init(&mut params.w5);
    init(&mut params.w6);
    Ok(params)
}

/// Per-frame character probabilities, `T' x 29`.
#[derive(Debug, Clone)]
pub struct PosteriorGrid {
    pub probs: Array2<f64>,
    pub log_probs: Array2<f64>,
}

impl PosteriorGrid {
    pub fn from_probs(probs: Array2<f64>) -> Self {
        let log_probs = probs.mapv(f64::ln);
        PosteriorGrid { probs, log_probs }
    }

    pub fn frame_count(&self) -> usize {
        self.probs.nrows()
    }
}

/// Everything the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    pub config: NetworkConfig,
    /// Context-expanded input, `T' x (F * (2C+1))`.
    pub input_ctx: Array2<f64>,
    pub z1: Array2<f64>,
    pub h1: Array2<f64>,
    pub z2: Array2<f64>,
    pub h2: Array2<f64>,
    pub z3: Array2<f64>,
    pub h3: Array2<f64>,
    pub zf: Array2<f64>,
    pub hf: Array2<f64>,
    pub zb: Array2<f64>,
    pub hb: Array2<f64>,
    pub z5: Array2<f64>,
    pub h5: Array2<f64>,
    pub probs: Array2<f64>,
    /// Inverted-dropout masks (entries 0 or 1/(1-p)); `None` in eval mode.
    pub masks: Option<DropoutMasks>,
}

#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub m1: Array2<f64>,
    pub m2: Array2<f64>,
    pub m3: Array2<f64>,
    /// Present only when dropout covers the layer-5 output.
    pub m5: Option<Array2<f64>>,
}

impl ActivationCache {
    pub fn output_steps(&self) -> usize {
        self.probs.nrows()
    }
}
