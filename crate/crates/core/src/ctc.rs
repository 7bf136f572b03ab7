//! CTC loss over a posterior grid: log-space forward-backward over the
//! blank-augmented label, exact gradient with respect to the pre-softmax
//! logits, and a path-enumeration oracle for validation.

use ndarray::Array2;

use crate::alphabet::{Alphabet, BLANK};
use crate::error::{Error, Result};
use crate::network::PosteriorGrid;

/// A target transcript as alphabet indices; never contains the blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    indices: Vec<usize>,
}

impl LabelSequence {
    pub fn from_indices(indices: Vec<usize>) -> Result<Self> {
        if indices.iter().any(|&i| i >= BLANK) {
            return Err(Error::BadConfig("label contains blank or out-of-range index".into()));
        }
        Ok(LabelSequence { indices })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let indices = Alphabet
            .encode(text)
            .ok_or_else(|| Error::BadConfig(format!("transcript not alphabet-clean: {text:?}")))?;
        Ok(LabelSequence { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn text(&self) -> String {
        Alphabet.decode(&self.indices)
    }

    /// Minimum number of output frames that can realize this label:
    /// its length plus one extra frame per adjacent repeated pair.
    pub fn min_frames(&self) -> usize {
        let repeats = self
            .indices
            .windows(2)
            .filter(|w| w[0] == w[1])
            .count();
        self.indices.len() + repeats
    }
}

/// Standard CTC collapse: merge consecutive repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &p in path {
        if p != prev && p != BLANK {
            out.push(p);
        }
        prev = p;
    }
    LabelSequence { indices: out }
}

/// Loss and logit gradient. An infeasible label (longer than the frame
/// count allows) is signaled by `feasible = false`, `loss = +inf` and a
/// zero gradient so the batching layer can skip the pair.
#[derive(Debug, Clone)]
pub struct CtcResult {
    pub loss: f64,
    pub dl_dlogits: Array2<f64>,
    pub feasible: bool,
}

const NEG_INF: f64 = f64::NEG_INFINITY;

fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `-log P(label | posteriors)` and its gradient with respect to the
/// logits (softmax folded in analytically). All forward-backward
/// arithmetic is in log space.
pub fn ctc_loss(posteriors: &PosteriorGrid, label: &LabelSequence) -> CtcResult {
    let t_len = posteriors.frame_count();
    let n_symbols = posteriors.probs.ncols();
    let zero_grad = || Array2::zeros((t_len, n_symbols));
    if label.min_frames() > t_len {
        return CtcResult {
            loss: f64::INFINITY,
            dl_dlogits: zero_grad(),
            feasible: false,
        };
    }

    // blank-augmented label: blank, l1, blank, l2, ..., blank
    let s_len = 2 * label.len() + 1;
    let aug = |s: usize| -> usize {
        if s.is_multiple_of(2) {
            BLANK
        } else {
            label.indices[s / 2]
        }
    };
    let lp = &posteriors.log_probs;

    let mut alpha = Array2::from_elem((t_len, s_len), NEG_INF);
    alpha[[0, 0]] = lp[[0, aug(0)]];
    if s_len > 1 {
        alpha[[0, 1]] = lp[[0, aug(1)]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[[t - 1, s]];
            if s >= 1 {
                a = log_add(a, alpha[[t - 1, s - 1]]);
            }
            if s >= 2 && aug(s) != BLANK && aug(s) != aug(s - 2) {
                a = log_add(a, alpha[[t - 1, s - 2]]);
            }
            alpha[[t, s]] = a + lp[[t, aug(s)]];
        }
    }
    let mut log_p = alpha[[t_len - 1, s_len - 1]];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[[t_len - 1, s_len - 2]]);
    }
    if log_p == NEG_INF {
        // no path has nonzero probability (hand-built grid with hard zeros)
        return CtcResult {
            loss: f64::INFINITY,
            dl_dlogits: zero_grad(),
            feasible: true,
        };
    }

    let mut beta = Array2::from_elem((t_len, s_len), NEG_INF);
    beta[[t_len - 1, s_len - 1]] = lp[[t_len - 1, aug(s_len - 1)]];
    if s_len > 1 {
        beta[[t_len - 1, s_len - 2]] = lp[[t_len - 1, aug(s_len - 2)]];
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[[t + 1, s]];
            if s + 1 < s_len {
                b = log_add(b, beta[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && aug(s + 2) != BLANK && aug(s + 2) != aug(s) {
                b = log_add(b, beta[[t + 1, s + 2]]);
            }
            beta[[t, s]] = b + lp[[t, aug(s)]];
        }
    }

    // gradient wrt logits: probs[t,k] - (1/P) sum_{s: aug(s)=k} paths through (t,s)
    let mut grad = posteriors.probs.clone();
    for t in 0..t_len {
        let mut occupancy = vec![NEG_INF; n_symbols];
        for s in 0..s_len {
            // alpha and beta both include the emission at t; divide once
            let through = alpha[[t, s]] + beta[[t, s]] - lp[[t, aug(s)]];
            occupancy[aug(s)] = log_add(occupancy[aug(s)], through);
        }
        for (k, &occ) in occupancy.iter().enumerate() {
            if occ != NEG_INF {
                grad[[t, k]] -= (occ - log_p).exp();
            }
        }
    }

    CtcResult {
        loss: -log_p,
        dl_dlogits: grad,
        feasible: true,
    }
}

/// Hard cap on the number of paths the brute-force oracle will walk.
const ORACLE_PATH_LIMIT: u64 = 21_000_000;

/// Test oracle: enumerate every length-T' path over the columns that
/// carry any probability mass, sum the probability of those whose
/// collapse equals the label, and return `-log` of the sum. Entirely
/// independent of the forward-backward implementation.
pub fn brute_force_ctc(posteriors: &PosteriorGrid, label: &LabelSequence) -> Result<f64> {
    let t_len = posteriors.frame_count();
    let support: Vec<usize> = (0..posteriors.probs.ncols())
        .filter(|&k| (0..t_len).any(|t| posteriors.probs[[t, k]] > 0.0))
        .collect();
    let paths = (support.len() as u64).checked_pow(t_len as u32);
    match paths {
        Some(p) if p <= ORACLE_PATH_LIMIT => {}
        _ => {
            return Err(Error::OracleLimit(format!(
                "{}^{} paths",
                support.len(),
                t_len
            )))
        }
    }

    let mut total = 0.0f64;
    let mut path = vec![0usize; t_len];
    enumerate_paths(posteriors, &support, &mut path, 0, 1.0, label, &mut total);
    if total <= 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(-total.ln())
    }
}

fn enumerate_paths(
    posteriors: &PosteriorGrid,
    support: &[usize],
    path: &mut Vec<usize>,
    depth: usize,
    prob: f64,
    label: &LabelSequence,
    total: &mut f64,
) {
    if depth == path.len() {
        if collapse(path).indices == label.indices {
            *total += prob;
        }
        return;
    }
    for &k in support {
        path[depth] = k;
        let p = posteriors.probs[[depth, k]];
        if p > 0.0 {
            enumerate_paths(posteriors, support, path, depth + 1, prob * p, label, total);
        }
    }
}
