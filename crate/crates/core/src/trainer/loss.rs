//! Bidirectional KL contrastive loss between encoded skeleton rows and fixed
//! text rows, with a hand-written reverse pass.
//!
//! For a batch of `B` pairs, `S[i][j]` is the cosine similarity between the
//! encoded row `v_i` and the text row `w_j`. The skeleton-to-text direction
//! softmaxes each row of `S / tau`, the text-to-skeleton direction each
//! column. The loss is
//!
//! ```text
//! L = 1/2 * sum_i [ KL(m_i || softmax_row_i) + KL(m_i || softmax_col_i) ]
//! ```
//!
//! where `m_i` is uniform over the batch rows sharing the label of row `i`.

use ndarray::{Array1, Array2, Axis};

use super::encoder::{param_groups, param_groups_mut, Dense, TrainerState};
use crate::embedding::{kl_slice, normalize_rows, row_dots, softmax_unchecked, NORM_EPS};
use crate::error::{Error, Result};

/// Row-stochastic target: entry `(i, j)` is `1 / #positives(i)` when labels
/// `i` and `j` match, zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix(Array2<f64>);

impl TargetMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }
}

pub fn build_target_matrix<L: PartialEq>(labels: &[L]) -> TargetMatrix {
    let b = labels.len();
    let mut m = Array2::zeros((b, b));
    for i in 0..b {
        let positives = labels.iter().filter(|l| **l == labels[i]).count() as f64;
        for j in 0..b {
            if labels[i] == labels[j] {
                m[[i, j]] = 1.0 / positives;
            }
        }
    }
    TargetMatrix(m)
}

/// Raw skeleton rows paired with the text row of their class.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub text: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, text: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != text.nrows() || inputs.nrows() != labels.len() {
            return Err(Error::LengthMismatch {
                left: inputs.nrows(),
                right: text.nrows().min(labels.len()),
            });
        }
        if inputs.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            inputs,
            text,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Intermediates retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    activations: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    v_hat: Array2<f64>,
    v_norms: Array1<f64>,
    w_hat: Array2<f64>,
    logits: Array2<f64>,
    p_row: Array2<f64>,
    p_col: Array2<f64>,
    target: TargetMatrix,
    tau: f64,
}

impl ForwardCache {
    pub fn similarities(&self) -> Array2<f64> {
        &self.logits * self.tau
    }
}

/// Gradients with the same layout as [`TrainerState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<Dense>,
    pub projection: Dense,
    pub log_tau: f64,
}

impl Gradients {
    pub fn zeros_like(state: &TrainerState) -> Self {
        Self {
            encoder: state
                .encoder
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
            projection: Dense::zeros(state.projection.fan_in(), state.projection.fan_out()),
            log_tau: 0.0,
        }
    }

    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out = param_groups(&self.encoder, &self.projection);
        out.push(("log_tau".to_string(), std::slice::from_ref(&self.log_tau)));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = param_groups_mut(&mut self.encoder, &mut self.projection);
        out.push((
            "log_tau".to_string(),
            std::slice::from_mut(&mut self.log_tau),
        ));
        out
    }
}

fn check_finite(a: &Array2<f64>, stage: &'static str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage })
    }
}

fn column_softmax(logits: &Array2<f64>, tau: f64) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (j, col) in logits.columns().into_iter().enumerate() {
        let p = softmax_unchecked(&col.to_vec(), tau);
        out.column_mut(j).assign(&Array1::from(p));
    }
    out
}

fn row_softmax(logits: &Array2<f64>, tau: f64) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let p = softmax_unchecked(row.as_slice().expect("standard layout"), tau);
        out.row_mut(i).assign(&Array1::from(p));
    }
    out
}

pub fn forward(state: &TrainerState, batch: &Batch) -> Result<(f64, ForwardCache)> {
    let spec = &state.spec;
    if batch.inputs.ncols() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "batch input width",
            expected: spec.input_dim(),
            found: batch.inputs.ncols(),
        });
    }
    if batch.text.ncols() != spec.text_dim {
        return Err(Error::DimensionMismatch {
            context: "batch text width",
            expected: spec.text_dim,
            found: batch.text.ncols(),
        });
    }

    let mut activations = vec![batch.inputs.as_standard_layout().into_owned()];
    let mut pre_activations = Vec::with_capacity(state.encoder.len());
    for layer in &state.encoder {
        let z = layer.forward(activations.last().expect("non-empty"));
        check_finite(&z, "encoder")?;
        let a = z.mapv(|x| spec.activation.apply(x));
        pre_activations.push(z);
        activations.push(a);
    }
    let v = state
        .projection
        .forward(activations.last().expect("non-empty"));
    check_finite(&v, "projection")?;

    let v_norms: Array1<f64> = v.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(row) = v_norms.iter().position(|&n| n <= NORM_EPS) {
        return Err(Error::ZeroVector { row: Some(row) });
    }
    let v_hat = &v / &v_norms.view().insert_axis(Axis(1));
    let w_hat = normalize_rows(&batch.text)?;

    let tau = state.tau();
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::NonFinite {
            stage: "temperature",
        });
    }
    // Softmax at tau = 1 over logits equals softmax at tau over similarities.
    let logits = row_dots(&v_hat, &w_hat) / tau;
    check_finite(&logits, "similarity")?;
    let p_row = row_softmax(&logits, 1.0);
    let p_col = column_softmax(&logits, 1.0);
    let target = build_target_matrix(&batch.labels);

    let m = target.entries();
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let m_row = m.row(i);
        let m_row = m_row.as_slice().expect("standard layout");
        let x2t = kl_slice(m_row, p_row.row(i).as_slice().expect("standard layout"));
        // target matrix is symmetric in which rows share a label, so column i
        // of the target equals row i
        let t2x = kl_slice(m_row, &p_col.column(i).to_vec());
        loss += 0.5 * (x2t + t2x);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { stage: "loss" });
    }

    Ok((
        loss,
        ForwardCache {
            fingerprint: state.fingerprint(),
            activations,
            pre_activations,
            v_hat,
            v_norms,
            w_hat,
            logits,
            p_row,
            p_col,
            target,
            tau,
        },
    ))
}

/// Products of transposed views may come back column-major; parameter
/// tensors are always row-major.
fn row_major(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub fn backward(state: &TrainerState, cache: &ForwardCache) -> Result<Gradients> {
    if cache.fingerprint != state.fingerprint() {
        return Err(Error::StaleCache);
    }
    let m = cache.target.entries();

    // dL/dlogits for both softmax directions (targets sum to one).
    let g_logits = ((&cache.p_row - m) + (&cache.p_col - m)) * 0.5;
    let g_log_tau = -(&g_logits * &cache.logits).sum();
    let g_sim = &g_logits / cache.tau;

    // Through v_hat = v / ||v||.
    let g_vhat = g_sim.dot(&cache.w_hat);
    let radial: Array1<f64> = (&g_vhat * &cache.v_hat).sum_axis(Axis(1));
    let g_v = (&g_vhat - &(&cache.v_hat * &radial.view().insert_axis(Axis(1))))
        / cache.v_norms.view().insert_axis(Axis(1));

    let mut grads = Gradients::zeros_like(state);
    grads.log_tau = g_log_tau;

    let top = cache.activations.last().expect("non-empty");
    grads.projection.weight = row_major(top.t().dot(&g_v));
    grads.projection.bias = g_v.sum_axis(Axis(0));
    let mut g_a = g_v.dot(&state.projection.weight.t());

    let act = state.spec.activation;
    for l in (0..state.encoder.len()).rev() {
        let z = &cache.pre_activations[l];
        let a = &cache.activations[l + 1];
        let mut g_z = g_a;
        ndarray::Zip::from(&mut g_z)
            .and(z)
            .and(a)
            .for_each(|g, &z, &a| *g *= act.derivative(z, a));
        grads.encoder[l].weight = row_major(cache.activations[l].t().dot(&g_z));
        grads.encoder[l].bias = g_z.sum_axis(Axis(0));
        g_a = g_z.dot(&state.encoder[l].weight.t());
    }

    if grads
        .groups()
        .iter()
        .any(|(_, v)| v.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::NonFinite { stage: "backward" });
    }
    Ok(grads)
}

/// Loss only, for finite-difference probes.
pub fn loss(state: &TrainerState, batch: &Batch) -> Result<f64> {
    forward(state, batch).map(|(l, _)| l)
}
