//! Optimization loop: Nesterov momentum in the lookahead form, learning
//! rate annealing, length-sorted padded minibatching, and a deterministic
//! data-parallel gradient step that matches the single-worker result.

use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ctc::{ctc_loss, LabelSequence};
use crate::error::{Error, Result};
use crate::network::{backward, forward, ForwardMode, GradientSet, NetworkConfig, NetworkParams};

/// One utterance ready for training: its feature matrix and target label.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub utterance_id: String,
    /// `T x F` feature frames.
    pub frames: Array2<f64>,
    pub label: LabelSequence,
}

/// Utterances of similar length stacked together, shorter members padded
/// with silence (all-zero) frames up to the group maximum. Padding is a
/// storage convention only: forward passes use the true lengths.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub utterance_ids: Vec<String>,
    pub features: Vec<Array2<f64>>,
    pub true_lengths: Vec<usize>,
    pub labels: Vec<LabelSequence>,
    pub padded_len: usize,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.utterance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterance_ids.is_empty()
    }
}

/// Sort by length, partition contiguously, pad each group to its own
/// maximum, and shuffle the group order with the given seed.
pub fn make_minibatches(
    dataset: &[TrainingExample],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Minibatch>> {
    if batch_size < 1 {
        return Err(Error::BadConfig("batch size must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::NoData("empty training dataset".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| (dataset[i].frames.nrows(), dataset[i].utterance_id.clone()));

    let mut batches: Vec<Minibatch> = Vec::new();
    for group in order.chunks(batch_size) {
        let padded_len = group
            .iter()
            .map(|&i| dataset[i].frames.nrows())
            .max()
            .unwrap();
        let mut batch = Minibatch {
            utterance_ids: Vec::with_capacity(group.len()),
            features: Vec::with_capacity(group.len()),
            true_lengths: Vec::with_capacity(group.len()),
            labels: Vec::with_capacity(group.len()),
            padded_len,
        };
        for &i in group {
            let ex = &dataset[i];
            let t = ex.frames.nrows();
            let mut padded = Array2::zeros((padded_len, ex.frames.ncols()));
            padded.slice_mut(s![..t, ..]).assign(&ex.frames);
            batch.utterance_ids.push(ex.utterance_id.clone());
            batch.features.push(padded);
            batch.true_lengths.push(t);
            batch.labels.push(ex.label.clone());
        }
        batches.push(batch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batches.shuffle(&mut rng);
    Ok(batches)
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: GradientSet,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epoch: usize,
    pub anneal_factor: f64,
}

impl OptimizerState {
    pub fn new(config: &NetworkConfig, learning_rate: f64) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::BadConfig("learning rate must be positive".into()));
        }
        Ok(OptimizerState {
            velocity: NetworkParams::zeros(config)?,
            learning_rate,
            momentum: 0.99,
            epoch: 0,
            anneal_factor: 0.95,
        })
    }

    /// Point at which gradients must be evaluated: params + momentum * v.
    pub fn lookahead(&self, params: &NetworkParams) -> NetworkParams {
        let mut ahead = params.clone();
        ahead.axpy(self.momentum, &self.velocity);
        ahead
    }
}

/// One momentum update. The supplied gradient must have been computed at
/// the lookahead point; the step is refused if it is not finite.
pub fn nesterov_step(
    params: &mut NetworkParams,
    state: &mut OptimizerState,
    grads: &GradientSet,
) -> Result<()> {
    if !params.shapes_match(grads) || !params.shapes_match(&state.velocity) {
        return Err(Error::Shape("gradient shapes do not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    state.velocity.scale(state.momentum);
    state.velocity.axpy(-state.learning_rate, grads);
    params.axpy(1.0, &state.velocity);
    Ok(())
}

/// End of epoch: decay the learning rate and advance the epoch counter.
pub fn anneal_lr(state: &mut OptimizerState) {
    state.learning_rate *= state.anneal_factor;
    state.epoch += 1;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepMetrics {
    pub loss_sum: f64,
    pub examples: usize,
    pub skipped_infeasible: usize,
}

/// Mean CTC gradient over one shard of a batch, evaluated at `params`.
/// Padded frames beyond each true length never enter the computation.
fn shard_gradient(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Minibatch,
    indices: &[usize],
    worker_seed: u64,
) -> Result<(GradientSet, StepMetrics)> {
    let mut grad_sum = params.zeros_like();
    let mut metrics = StepMetrics::default();
    for (j, &i) in indices.iter().enumerate() {
        let t = batch.true_lengths[i];
        let frames = batch.features[i].slice(s![..t, ..]);
        let seed = worker_seed.wrapping_add(j as u64);
        let (grid, cache) = forward(config, params, frames, ForwardMode::Train, seed)?;
        let res = ctc_loss(&grid, &batch.labels[i]);
        if !res.feasible {
            metrics.skipped_infeasible += 1;
            continue;
        }
        let grads = backward(params, &cache, res.dl_dlogits.view())?;
        grad_sum.axpy(1.0, &grads);
        metrics.loss_sum += res.loss;
        metrics.examples += 1;
    }
    Ok((grad_sum, metrics))
}

/// First `len % n` shards take one extra example.
fn shard_ranges(len: usize, n_workers: usize) -> Vec<Vec<usize>> {
    let base = len / n_workers;
    let extra = len % n_workers;
    let mut shards = Vec::with_capacity(n_workers);
    let mut next = 0;
    for w in 0..n_workers {
        let size = base + usize::from(w < extra);
        shards.push((next..next + size).collect());
        next += size;
    }
    shards
}

/// Example-count-weighted average of per-shard gradient sums.
pub fn weighted_average(shards: &[(GradientSet, usize)]) -> Option<GradientSet> {
    let total: usize = shards.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return None;
    }
    let mut avg = shards[0].0.zeros_like();
    for (grad_sum, n) in shards {
        if *n == 0 {
            continue;
        }
        // grad_sum holds a sum over n examples; its mean enters with
        // weight n / total, which collapses to sum / total
        let mut mean = grad_sum.clone();
        mean.scale(1.0 / *n as f64);
        avg.axpy(*n as f64 / total as f64, &mean);
    }
    Some(avg)
}

/// Shard the batch across workers, evaluate gradients at the lookahead
/// point in parallel, combine by example-count-weighted average, and take
/// one momentum step. Matches the single-worker step on the same batch.
pub fn data_parallel_step(
    params: &mut NetworkParams,
    state: &mut OptimizerState,
    config: &NetworkConfig,
    batch: &Minibatch,
    n_workers: usize,
    base_seed: u64,
) -> Result<StepMetrics> {
    if n_workers < 1 {
        return Err(Error::BadConfig("worker count must be at least 1".into()));
    }
    if batch.is_empty() {
        return Err(Error::NoData("empty minibatch".into()));
    }
    let ahead = state.lookahead(params);
    let shards = shard_ranges(batch.len(), n_workers);

    let results: Vec<Result<(GradientSet, StepMetrics)>> = std::thread::scope(|scope| {
        let ahead = &ahead;
        let handles: Vec<_> = shards
            .iter()
            .enumerate()
            .map(|(w, indices)| {
                let indices = indices.clone();
                scope.spawn(move || {
                    shard_gradient(config, ahead, batch, &indices, base_seed ^ w as u64)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut weighted: Vec<(GradientSet, usize)> = Vec::new();
    let mut metrics = StepMetrics::default();
    for res in results {
        let (grad_sum, m) = res?;
        metrics.loss_sum += m.loss_sum;
        metrics.examples += m.examples;
        metrics.skipped_infeasible += m.skipped_infeasible;
        weighted.push((grad_sum, m.examples));
    }
    if let Some(avg) = weighted_average(&weighted) {
        nesterov_step(params, state, &avg)?;
    }
    Ok(metrics)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub batch_size: usize,
    pub n_workers: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub examples: usize,
    pub skipped_infeasible: usize,
    pub wall_seconds: f64,
}

/// One full pass over the dataset followed by learning-rate annealing.
pub fn train_epoch(
    params: &mut NetworkParams,
    state: &mut OptimizerState,
    dataset: &[TrainingExample],
    config: &TrainConfig,
) -> Result<EpochMetrics> {
    let started = Instant::now();
    let shuffle_seed = config.base_seed.wrapping_add(state.epoch as u64);
    let batches = make_minibatches(dataset, config.batch_size, shuffle_seed)?;

    let mut loss_sum = 0.0;
    let mut examples = 0;
    let mut skipped = 0;
    for (b, batch) in batches.iter().enumerate() {
        let step_seed = shuffle_seed.wrapping_add(1 + b as u64);
        let m = data_parallel_step(
            params,
            state,
            &config.network,
            batch,
            config.n_workers,
            step_seed,
        )
        .map_err(|e| e.in_module("training"))?;
        loss_sum += m.loss_sum;
        examples += m.examples;
        skipped += m.skipped_infeasible;
    }

    let epoch = state.epoch;
    anneal_lr(state);
    Ok(EpochMetrics {
        epoch,
        mean_loss: if examples > 0 { loss_sum / examples as f64 } else { f64::NAN },
        learning_rate: state.learning_rate,
        examples,
        skipped_infeasible: skipped,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
