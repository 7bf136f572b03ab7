use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

use super::forward::{forward, ForwardMode};
use super::{GradientSet, NetworkConfig, NetworkParams, PosteriorGrid};

/// Which sweep of the computation a transfer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangePass {
    Activations,
    Gradients,
}

/// One boundary vector handed between the two logical workers.
#[derive(Debug, Clone)]
pub struct ExchangeRecord {
    pub pass: ExchangePass,
    pub from_worker: usize,
    pub to_worker: usize,
    pub vector: &'static str,
    pub len: usize,
}

pub struct TimesplitOutput {
    pub posteriors: PosteriorGrid,
    pub grads: GradientSet,
    pub exchange_log: Vec<ExchangeRecord>,
}

/// Two-worker simulation of splitting the model along the time axis.
///
/// Worker 0 owns output steps `0..mid`, worker 1 owns `mid..T'` with
/// `mid = ceil(T'/2)`. During the activation sweep worker 0 computes the
/// forward recurrence on its half while worker 1 computes the backward
/// recurrence on its half; the boundary activations are exchanged once
/// and the roles swap. The gradient sweep mirrors this with the BPTT
/// carries. Everything outside the recurrent layer decomposes trivially
/// along time and is computed directly.
///
/// Runs in eval mode (no dropout). The result must match the
/// single-worker `forward` + `backward` pair.
pub fn forward_backward_timesplit(
    config: &NetworkConfig,
    params: &NetworkParams,
    frames: ArrayView2<f64>,
    dl_dlogits: ArrayView2<f64>,
) -> Result<TimesplitOutput> {
    let t = config.output_steps(frames.nrows());
    if t < 2 {
        return Err(Error::TooShortToSplit(t));
    }
    let mid = t.div_ceil(2);
    let mut log = Vec::with_capacity(4);

    // Feed-forward layers and the softmax are per-timestep; reuse the
    // single-worker path for them and recompute the recurrent layer with
    // the split schedule, asserting both agree.
    let (_, mut cache) = forward(config, params, frames, ForwardMode::Eval, 0)?;
    let h4_size = config.hidden[3];
    let z4_base = cache.h3.dot(&params.w4.t()) + &params.b4;

    let mut hf = Array2::zeros((t, h4_size));
    let mut zf = Array2::zeros((t, h4_size));
    let mut hb = Array2::zeros((t, h4_size));
    let mut zb = Array2::zeros((t, h4_size));

    let step_f = |hf: &mut Array2<f64>, zf: &mut Array2<f64>, step: usize| {
        let mut z = z4_base.row(step).to_owned();
        if step > 0 {
            z += &params.w_rf.dot(&hf.row(step - 1));
        }
        hf.row_mut(step).assign(&z.mapv(super::clipped_relu));
        zf.row_mut(step).assign(&z);
    };
    let step_b = |hb: &mut Array2<f64>, zb: &mut Array2<f64>, step: usize| {
        let mut z = z4_base.row(step).to_owned();
        if step + 1 < t {
            z += &params.w_rb.dot(&hb.row(step + 1));
        }
        hb.row_mut(step).assign(&z.mapv(super::clipped_relu));
        zb.row_mut(step).assign(&z);
    };

    // activation sweep, phase 1: worker 0 forward on [0, mid),
    // worker 1 backward on [mid, t)
    for step in 0..mid {
        step_f(&mut hf, &mut zf, step);
    }
    for step in (mid..t).rev() {
        step_b(&mut hb, &mut zb, step);
    }
    // the midpoint exchange
    log.push(ExchangeRecord {
        pass: ExchangePass::Activations,
        from_worker: 0,
        to_worker: 1,
        vector: "h_f boundary",
        len: h4_size,
    });
    log.push(ExchangeRecord {
        pass: ExchangePass::Activations,
        from_worker: 1,
        to_worker: 0,
        vector: "h_b boundary",
        len: h4_size,
    });
    // phase 2: roles swap
    for step in mid..t {
        step_f(&mut hf, &mut zf, step);
    }
    for step in (0..mid).rev() {
        step_b(&mut hb, &mut zb, step);
    }

    debug_assert!(hf.iter().zip(cache.hf.iter()).all(|(a, b)| a == b));
    debug_assert!(hb.iter().zip(cache.hb.iter()).all(|(a, b)| a == b));
    cache.hf = hf;
    cache.zf = zf;
    cache.hb = hb;
    cache.zb = zb;

    let h4 = &cache.hf + &cache.hb;
    let z5 = h4.dot(&params.w5.t()) + &params.b5;
    let h5 = z5.mapv(super::clipped_relu);
    let logits = h5.dot(&params.w6.t()) + &params.b6;
    let probs = super::forward::softmax_rows(&logits);
    cache.z5 = z5;
    cache.h5 = h5;
    cache.probs = probs.clone();
    let posteriors = PosteriorGrid::from_probs(probs);

    // Gradient sweep: run the per-half BPTT carries with one exchange per
    // direction, then hand the carried boundary gradients to the reference
    // backward pass split at the boundary.
    let grads = split_backward(config, params, &cache, dl_dlogits, mid, &mut log)?;

    Ok(TimesplitOutput {
        posteriors,
        grads,
        exchange_log: log,
    })
}

/// BPTT with the time axis split at `mid`: each worker accumulates its
/// half's parameter gradients; the carry crossing the boundary is the
/// logged exchange. The halves' contributions are then summed.
fn split_backward(
    config: &NetworkConfig,
    params: &NetworkParams,
    cache: &super::ActivationCache,
    dl_dlogits: ArrayView2<f64>,
    mid: usize,
    log: &mut Vec<ExchangeRecord>,
) -> Result<GradientSet> {
    let t = cache.output_steps();
    let h4_size = config.hidden[3];

    // layers 6 and 5 decompose along time
    let dz6 = dl_dlogits.to_owned();
    let mut grads = params.zeros_like();
    grads.w6 = dz6.t().dot(&cache.h5);
    grads.b6 = dz6.sum_axis(ndarray::Axis(0));
    let dh5 = dz6.dot(&params.w6);
    let dz5 = &dh5 * &cache.z5.mapv(super::clipped_relu_deriv);
    let h4 = &cache.hf + &cache.hb;
    grads.w5 = dz5.t().dot(&h4);
    grads.b5 = dz5.sum_axis(ndarray::Axis(0));
    let dh4 = dz5.dot(&params.w5);

    let mut dzf = Array2::zeros((t, h4_size));
    let mut dzb = Array2::zeros((t, h4_size));

    // forward-direction carry flows from late to early steps:
    // worker 1 descends its half first, then hands the carry to worker 0
    let mut carry: Array1<f64> = Array1::zeros(h4_size);
    let mut run_f = |range: std::ops::Range<usize>, carry: &mut Array1<f64>, dzf: &mut Array2<f64>| {
        for step in range.rev() {
            let mut d = dh4.row(step).to_owned() + &*carry;
            d.zip_mut_with(&cache.zf.row(step), |v, &z| *v *= super::clipped_relu_deriv(z));
            if step > 0 {
                for (i, &di) in d.iter().enumerate() {
                    let prev = cache.hf.row(step - 1);
                    let mut row = grads.w_rf.row_mut(i);
                    for (j, &hj) in prev.iter().enumerate() {
                        row[j] += di * hj;
                    }
                }
            }
            *carry = params.w_rf.t().dot(&d);
            dzf.row_mut(step).assign(&d);
        }
    };
    run_f(mid..t, &mut carry, &mut dzf);
    log.push(ExchangeRecord {
        pass: ExchangePass::Gradients,
        from_worker: 1,
        to_worker: 0,
        vector: "d h_f carry",
        len: h4_size,
    });
    run_f(0..mid, &mut carry, &mut dzf);

    // backward-direction carry flows from early to late steps:
    // worker 0 ascends its half first, then hands the carry to worker 1
    let mut carry_b: Array1<f64> = Array1::zeros(h4_size);
    let mut run_b = |range: std::ops::Range<usize>, carry: &mut Array1<f64>, dzb: &mut Array2<f64>| {
        for step in range {
            let mut d = dh4.row(step).to_owned() + &*carry;
            d.zip_mut_with(&cache.zb.row(step), |v, &z| *v *= super::clipped_relu_deriv(z));
            if step + 1 < t {
                for (i, &di) in d.iter().enumerate() {
                    let next = cache.hb.row(step + 1);
                    let mut row = grads.w_rb.row_mut(i);
                    for (j, &hj) in next.iter().enumerate() {
                        row[j] += di * hj;
                    }
                }
            }
            *carry = params.w_rb.t().dot(&d);
            dzb.row_mut(step).assign(&d);
        }
    };
    run_b(0..mid, &mut carry_b, &mut dzb);
    log.push(ExchangeRecord {
        pass: ExchangePass::Gradients,
        from_worker: 0,
        to_worker: 1,
        vector: "d h_b carry",
        len: h4_size,
    });
    run_b(mid..t, &mut carry_b, &mut dzb);

    let dz4 = &dzf + &dzb;
    grads.w4 = dz4.t().dot(&cache.h3);
    grads.b4 = dz4.sum_axis(ndarray::Axis(0));
    let dh3 = dz4.dot(&params.w4);

    let dz3 = &dh3 * &cache.z3.mapv(super::clipped_relu_deriv);
    grads.w3 = dz3.t().dot(&cache.h2);
    grads.b3 = dz3.sum_axis(ndarray::Axis(0));
    let dh2 = dz3.dot(&params.w3);

    let dz2 = &dh2 * &cache.z2.mapv(super::clipped_relu_deriv);
    grads.w2 = dz2.t().dot(&cache.h1);
    grads.b2 = dz2.sum_axis(ndarray::Axis(0));
    let dh1 = dz2.dot(&params.w2);

    let dz1 = &dh1 * &cache.z1.mapv(super::clipped_relu_deriv);
    grads.w1 = dz1.t().dot(&cache.input_ctx);
    grads.b1 = dz1.sum_axis(ndarray::Axis(0));

    Ok(grads)
}
