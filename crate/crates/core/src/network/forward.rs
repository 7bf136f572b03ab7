use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alphabet::ALPHABET_SIZE;
use crate::error::{Error, Result};

use super::{clipped_relu, ActivationCache, DropoutMasks, NetworkConfig, NetworkParams, PosteriorGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Gather the +/-C frame context around each strided center frame,
/// zero-padding past the sequence edges.
pub(super) fn expand_context(
    frames: ArrayView2<f64>,
    context: usize,
    stride: usize,
) -> Array2<f64> {
    let (t_in, dim) = frames.dim();
    let t_out = t_in.div_ceil(stride);
    let width = 2 * context + 1;
    let mut out = Array2::zeros((t_out, dim * width));
    for s in 0..t_out {
        let center = s * stride;
        for (slot, offset) in (-(context as isize)..=context as isize).enumerate() {
            let src = center as isize + offset;
            if src >= 0 && (src as usize) < t_in {
                let row = frames.row(src as usize);
                for j in 0..dim {
                    out[[s, slot * dim + j]] = row[j];
                }
            }
        }
    }
    out
}

fn affine(input: &Array2<f64>, w: &Array2<f64>, b: &ndarray::Array1<f64>) -> Array2<f64> {
    input.dot(&w.t()) + b
}

fn draw_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let scale = 1.0 / (1.0 - rate);
    Array2::from_shape_fn(shape, |_| {
        if rng.random_range(0.0..1.0) < rate {
            0.0
        } else {
            scale
        }
    })
}

pub(super) fn check_shapes(
    config: &NetworkConfig,
    params: &NetworkParams,
    feature_dim: usize,
) -> Result<()> {
    config.validate()?;
    if feature_dim != config.input_dim {
        return Err(Error::Shape(format!(
            "feature dim {feature_dim} does not match configured input dim {}",
            config.input_dim
        )));
    }
    let [h1, h2, h3, h4, h5] = config.hidden;
    let expected = [
        (params.w1.dim(), (h1, config.context_dim())),
        (params.w2.dim(), (h2, h1)),
        (params.w3.dim(), (h3, h2)),
        (params.w4.dim(), (h4, h3)),
        (params.w_rf.dim(), (h4, h4)),
        (params.w_rb.dim(), (h4, h4)),
        (params.w5.dim(), (h5, h4)),
        (params.w6.dim(), (ALPHABET_SIZE, h5)),
    ];
    for (got, want) in expected {
        if got != want {
            return Err(Error::Shape(format!(
                "weight shape {got:?} does not match config shape {want:?}"
            )));
        }
    }
    Ok(())
}

/// Run the network over one feature sequence.
///
/// In train mode, inverted dropout is applied to the feed-forward layer
/// outputs (never to the recurrent activations), with masks drawn from
/// `seed`. Eval mode is deterministic and ignores the seed.
pub fn forward(
    config: &NetworkConfig,
    params: &NetworkParams,
    frames: ArrayView2<f64>,
    mode: ForwardMode,
    seed: u64,
) -> Result<(PosteriorGrid, ActivationCache)> {
    check_shapes(config, params, frames.ncols())?;
    if frames.nrows() == 0 {
        return Err(Error::Shape("empty feature sequence".into()));
    }

    let input_ctx = expand_context(frames, config.context, config.stride);
    let t = input_ctx.nrows();

    let dropout = mode == ForwardMode::Train && config.dropout_rate > 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = config.dropout_rate;

    let z1 = affine(&input_ctx, &params.w1, &params.b1);
    let mut h1 = z1.mapv(clipped_relu);
    let m1 = dropout.then(|| draw_mask(&mut rng, h1.dim(), rate));
    if let Some(m) = &m1 {
        h1 *= m;
    }

    let z2 = affine(&h1, &params.w2, &params.b2);
    let mut h2 = z2.mapv(clipped_relu);
    let m2 = dropout.then(|| draw_mask(&mut rng, h2.dim(), rate));
    if let Some(m) = &m2 {
        h2 *= m;
    }

    let z3 = affine(&h2, &params.w3, &params.b3);
    let mut h3 = z3.mapv(clipped_relu);
    let m3 = dropout.then(|| draw_mask(&mut rng, h3.dim(), rate));
    if let Some(m) = &m3 {
        h3 *= m;
    }

    // shared input drive of the recurrent layer: W4 h3 + b4
    let z4_base = affine(&h3, &params.w4, &params.b4);
    let h4_size = config.hidden[3];
    let mut zf = Array2::zeros((t, h4_size));
    let mut hf = Array2::zeros((t, h4_size));
    for step in 0..t {
        let mut z = z4_base.row(step).to_owned();
        if step > 0 {
            z += &params.w_rf.dot(&hf.row(step - 1));
        }
        hf.row_mut(step).assign(&z.mapv(clipped_relu));
        zf.row_mut(step).assign(&z);
    }
    let mut zb = Array2::zeros((t, h4_size));
    let mut hb = Array2::zeros((t, h4_size));
    for step in (0..t).rev() {
        let mut z = z4_base.row(step).to_owned();
        if step + 1 < t {
            z += &params.w_rb.dot(&hb.row(step + 1));
        }
        hb.row_mut(step).assign(&z.mapv(clipped_relu));
        zb.row_mut(step).assign(&z);
    }
    let h4 = &hf + &hb;

    let z5 = affine(&h4, &params.w5, &params.b5);
    let mut h5 = z5.mapv(clipped_relu);
    let m5 = (dropout && config.dropout_layer5).then(|| draw_mask(&mut rng, h5.dim(), rate));
    if let Some(m) = &m5 {
        h5 *= m;
    }

    let logits = affine(&h5, &params.w6, &params.b6);
    let probs = softmax_rows(&logits);

    let grid = PosteriorGrid::from_probs(probs.clone());
    let cache = ActivationCache {
        config: config.clone(),
        input_ctx,
        z1,
        h1,
        z2,
        h2,
        z3,
        h3,
        zf,
        hf,
        zb,
        hb,
        z5,
        h5,
        probs,
        masks: dropout.then(|| DropoutMasks {
            m1: m1.unwrap(),
            m2: m2.unwrap(),
            m3: m3.unwrap(),
            m5,
        }),
    };
    Ok((grid, cache))
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    probs
}
