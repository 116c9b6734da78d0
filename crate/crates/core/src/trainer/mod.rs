//! End-to-end contrastive training of the encoder and projection head
//! against fixed, precomputed text features.

mod checkpoint;
mod encoder;
mod loss;

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use encoder::{Activation, Dense, EncoderSpec, TrainerState, TAU_INIT, TAU_MAX, TAU_MIN};
pub use loss::{
    backward, build_target_matrix, forward, loss, Batch, ForwardCache, Gradients, TargetMatrix,
};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::rng;

/// Learning rate used for the smaller benchmarks.
pub const DEFAULT_LR: f64 = 5e-2;
/// Learning rate used for the largest benchmark.
pub const SMALL_LR: f64 = 5e-3;

/// `w <- w - lr * g` for every parameter, then clamp `tau` into
/// `[TAU_MIN, TAU_MAX]`.
pub fn sgd_step(state: &TrainerState, grads: &Gradients, lr: f64) -> Result<TrainerState> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    let mut next = state.clone();
    for ((_, w), (_, g)) in next.groups_mut().into_iter().zip(grads.groups()) {
        if w.len() != g.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient shape",
                expected: w.len(),
                found: g.len(),
            });
        }
        w.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
    }
    next.log_tau = next.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln());
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: DEFAULT_LR,
            seed: 0,
            hidden: 64,
            activation: Activation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be >= 1".into()));
        }
        Ok(())
    }

    pub fn encoder_spec(&self, input_dim: usize, text_dim: usize) -> EncoderSpec {
        EncoderSpec {
            layer_widths: vec![input_dim, self.hidden, self.hidden],
            activation: self.activation,
            text_dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub state: TrainerState,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Pairs every input row with the text anchor row of its label.
fn text_rows_for(
    inputs: &EmbeddingTable,
    anchors: &EmbeddingTable,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, label) in anchors.labels().iter().enumerate() {
        index.entry(label.as_str()).or_insert(i);
    }
    let rows: Vec<usize> = inputs
        .labels()
        .iter()
        .map(|l| {
            index
                .get(l.as_str())
                .copied()
                .ok_or_else(|| Error::MissingClass(l.clone()))
        })
        .collect::<Result<_>>()?;
    Ok((anchors.data().select(Axis(0), &rows), rows))
}

/// Trains a freshly initialized state for `config.epochs` seeded epochs.
pub fn fit(
    inputs: &EmbeddingTable,
    anchors: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    if inputs.is_empty() || anchors.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = config.encoder_spec(inputs.dim(), anchors.dim());
    let state = TrainerState::init(spec, config.seed)?;
    fit_from(state, inputs, anchors, config)
}

/// Continues training from `state`.
pub fn fit_from(
    mut state: TrainerState,
    inputs: &EmbeddingTable,
    anchors: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    if inputs.is_empty() || anchors.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (text, labels) = text_rows_for(inputs, anchors)?;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut shuffle_rng = rng::stream(config.seed, rng::stream_id(2, 0, 0));
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = Batch::new(
                inputs.data().select(Axis(0), chunk),
                text.select(Axis(0), chunk),
                chunk.iter().map(|&i| labels[i]).collect(),
            )?;
            let (l, cache) = forward(&state, &batch)?;
            let grads = backward(&state, &cache)?;
            state = sgd_step(&state, &grads, config.lr)?;
            total += l;
            batches += 1;
        }
        loss_trace.push(total / batches as f64);
    }
    Ok(FitOutcome { state, loss_trace })
}

/// Applies the trained encoder and projection to every row.
pub fn embed(state: &TrainerState, raw: &EmbeddingTable) -> Result<EmbeddingTable> {
    let out = state.encode(raw.data())?;
    raw.with_data(out)
}
