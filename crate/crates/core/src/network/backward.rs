use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

use super::forward::check_shapes;
use super::{clipped_relu_deriv, ActivationCache, GradientSet, NetworkParams};

fn col_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(ndarray::Axis(0))
}

/// Exact gradients of the loss with respect to every parameter, given
/// the gradient with respect to the pre-softmax logits.
///
/// Back-propagation runs through both recurrent directions in time and
/// through the summation `h4 = hf + hb`; dropout masks recorded in the
/// cache are reused.
pub fn backward(
    params: &NetworkParams,
    cache: &ActivationCache,
    dl_dlogits: ArrayView2<f64>,
) -> Result<GradientSet> {
    check_shapes(&cache.config, params, cache.config.input_dim)
        .map_err(|e| Error::StaleCache(e.to_string()))?;
    let t = cache.output_steps();
    if dl_dlogits.dim() != cache.probs.dim() {
        return Err(Error::StaleCache(format!(
            "upstream gradient shape {:?} does not match cached posteriors {:?}",
            dl_dlogits.dim(),
            cache.probs.dim()
        )));
    }

    let mut grads = params.zeros_like();
    let dz6 = dl_dlogits.to_owned();

    grads.w6 = dz6.t().dot(&cache.h5);
    grads.b6 = col_sums(&dz6);
    let mut dh5 = dz6.dot(&params.w6);
    if let Some(masks) = &cache.masks {
        if let Some(m5) = &masks.m5 {
            dh5 *= m5;
        }
    }
    let dz5 = &dh5 * &cache.z5.mapv(clipped_relu_deriv);

    let h4 = &cache.hf + &cache.hb;
    grads.w5 = dz5.t().dot(&h4);
    grads.b5 = col_sums(&dz5);
    let dh4 = dz5.dot(&params.w5);

    // BPTT, forward direction: the carry flows backwards in time
    let mut dzf = Array2::zeros((t, cache.hf.ncols()));
    let mut carry: Array1<f64> = Array1::zeros(cache.hf.ncols());
    for step in (0..t).rev() {
        let mut d = dh4.row(step).to_owned() + &carry;
        d.zip_mut_with(&cache.zf.row(step), |v, &z| *v *= clipped_relu_deriv(z));
        if step > 0 {
            accumulate_outer(&mut grads.w_rf, &d, &cache.hf.row(step - 1).to_owned());
        }
        carry = params.w_rf.t().dot(&d);
        dzf.row_mut(step).assign(&d);
    }
    // BPTT, backward direction: the carry flows forwards in time
    let mut dzb = Array2::zeros((t, cache.hb.ncols()));
    carry.fill(0.0);
    for step in 0..t {
        let mut d = dh4.row(step).to_owned() + &carry;
        d.zip_mut_with(&cache.zb.row(step), |v, &z| *v *= clipped_relu_deriv(z));
        if step + 1 < t {
            accumulate_outer(&mut grads.w_rb, &d, &cache.hb.row(step + 1).to_owned());
        }
        carry = params.w_rb.t().dot(&d);
        dzb.row_mut(step).assign(&d);
    }

    // both directions share W4 and b4
    let dz4 = &dzf + &dzb;
    grads.w4 = dz4.t().dot(&cache.h3);
    grads.b4 = col_sums(&dz4);
    let mut dh3 = dz4.dot(&params.w4);

    if let Some(masks) = &cache.masks {
        dh3 *= &masks.m3;
    }
    let dz3 = &dh3 * &cache.z3.mapv(clipped_relu_deriv);
    grads.w3 = dz3.t().dot(&cache.h2);
    grads.b3 = col_sums(&dz3);
    let mut dh2 = dz3.dot(&params.w3);

    if let Some(masks) = &cache.masks {
        dh2 *= &masks.m2;
    }
    let dz2 = &dh2 * &cache.z2.mapv(clipped_relu_deriv);
    grads.w2 = dz2.t().dot(&cache.h1);
    grads.b2 = col_sums(&dz2);
    let mut dh1 = dz2.dot(&params.w2);

    if let Some(masks) = &cache.masks {
        dh1 *= &masks.m1;
    }
    let dz1 = &dh1 * &cache.z1.mapv(clipped_relu_deriv);
    grads.w1 = dz1.t().dot(&cache.input_ctx);
    grads.b1 = col_sums(&dz1);

    Ok(grads)
}

fn accumulate_outer(target: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        let mut row = target.row_mut(i);
        for (j, &bj) in b.iter().enumerate() {
            row[j] += ai * bj;
        }
    }
}
