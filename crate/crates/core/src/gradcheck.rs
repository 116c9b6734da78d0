//! Central finite-difference check of the analytic contrastive gradients.
//!
//! A coordinate passes when its absolute error is at most [`ABS_FLOOR`] or its
//! relative error `|a - n| / max(|a|, |n|)` is below [`REL_TOL`].

use std::fmt::{self, Write as _};

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::trainer::{
    backward, forward, loss, Activation, Batch, EncoderSpec, Gradients, TrainerState,
};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;

const PURPOSE_GRADCHECK: u16 = 4;
/// Minimum `|z|` of any ReLU pre-activation, so that no probe crosses a kink.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub configs: usize,
    pub seed: u64,
    /// Test hook: perturb the first analytic coordinate of the named group.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            configs: 20,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coordinate {
    pub config: usize,
    pub group: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

impl Coordinate {
    pub fn passes(&self) -> bool {
        self.abs_error <= ABS_FLOOR || self.rel_error < REL_TOL
    }

    /// Relative error, or zero when under the absolute floor.
    pub fn effective_error(&self) -> f64 {
        if self.abs_error <= ABS_FLOOR {
            0.0
        } else {
            self.rel_error
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub coordinates: usize,
    pub max_abs_error: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub configs: usize,
    pub coordinates: usize,
    pub max_error: f64,
    pub groups: Vec<GroupSummary>,
    pub worst: Option<Coordinate>,
    pub failures: Vec<Coordinate>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let w = self.worst.as_ref().expect("a failure exists");
        Err(Error::GradcheckFailed(format!(
            "tensor `{}` index {} in config {}: analytic {} vs numeric {} (rel {})",
            w.group, w.index, w.config, w.analytic, w.numeric, w.rel_error
        )))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        writeln!(
            out,
            "configs={} coordinates={}",
            self.configs, self.coordinates
        )?;
        writeln!(out, "group,coordinates,max_abs_error,max_error")?;
        for g in &self.groups {
            writeln!(
                out,
                "{},{},{:e},{:e}",
                g.group, g.coordinates, g.max_abs_error, g.max_error
            )?;
        }
        if let Some(w) = &self.worst {
            writeln!(
                out,
                "worst: config={} tensor={} index={} analytic={} numeric={} rel={:e}",
                w.config, w.group, w.index, w.analytic, w.numeric, w.rel_error
            )?;
        }
        write!(
            out,
            "{} (max error {:e}, {} failing coordinates)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_error,
            self.failures.len()
        )?;
        f.write_str(&out)
    }
}

/// Group name with the layer index stripped, e.g. `encoder.weight`.
fn group_family(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["encoder", _, kind] => format!("encoder.{kind}"),
        _ => name.to_string(),
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut StreamRng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn min_abs_preactivation(state: &TrainerState, inputs: &Array2<f64>) -> f64 {
    let mut h = inputs.clone();
    let mut min = f64::INFINITY;
    for layer in &state.encoder {
        let z = layer.forward(&h);
        min = z.iter().fold(min, |m, v| m.min(v.abs()));
        h = z.mapv(|v| state.spec.activation.apply(v));
    }
    min
}

/// Smallest norm of an encoded row accepted by [`random_case`].
const MIN_ENCODED_NORM: f64 = 0.1;
/// Largest `|cos|` between two encoded rows accepted by [`random_case`].
const MAX_ENCODED_COS: f64 = 0.999;
const INPUT_DRAWS: usize = 100;

/// Whether central differences resolve this case: no ReLU pre-activation
/// near its kink, no encoded row near zero, no two encoded rows near parallel.
fn well_conditioned(state: &TrainerState, inputs: &Array2<f64>) -> bool {
    if state.spec.activation == Activation::Relu
        && min_abs_preactivation(state, inputs) < KINK_MARGIN
    {
        return false;
    }
    let Ok(v) = state.encode(inputs) else {
        return false;
    };
    let norms: Vec<f64> = v.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.iter().any(|&n| n < MIN_ENCODED_NORM) {
        return false;
    }
    (0..v.nrows()).all(|i| {
        (i + 1..v.nrows())
            .all(|j| (v.row(i).dot(&v.row(j)) / (norms[i] * norms[j])).abs() <= MAX_ENCODED_COS)
    })
}

/// One random small configuration: `B <= 4`, `d_in <= 6`, at most two
/// hidden layers. Draws are repeated until the case is well conditioned.
pub fn random_case(rng: &mut StreamRng) -> Result<(TrainerState, Batch)> {
    loop {
        let activation = match rng.random_range(0..3) {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            _ => Activation::Identity,
        };
        let d_in = rng.random_range(1..=6);
        let hidden = rng.random_range(0..=2);
        let mut widths = vec![d_in];
        widths.extend((0..hidden).map(|_| rng.random_range(1..=6)));
        let text_dim = rng.random_range(2..=6);
        let b = rng.random_range(2..=4);
        let classes = rng.random_range(1..=b);
        let spec = EncoderSpec {
            layer_widths: widths,
            activation,
            text_dim,
        };
        let mut state = TrainerState::init(spec, rng.random())?;
        state.log_tau = rng.random_range(0.1f64.ln()..2.0f64.ln());
        let anchors = uniform_matrix(classes, text_dim, rng);
        for _ in 0..INPUT_DRAWS {
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
            let inputs = uniform_matrix(b, d_in, rng);
            if !well_conditioned(&state, &inputs) {
                continue;
            }
            let text = Array2::from_shape_fn((b, text_dim), |(i, j)| anchors[[labels[i], j]]);
            return Ok((state, Batch::new(inputs, text, labels)?));
        }
    }
}

/// Every coordinate of one configuration.
pub fn check_case(
    config: usize,
    state: &TrainerState,
    batch: &Batch,
    corrupt: Option<&str>,
) -> Result<Vec<Coordinate>> {
    let (_, cache) = forward(state, batch)?;
    let mut grads: Gradients = backward(state, &cache)?;
    if let Some(name) = corrupt {
        for (group, values) in grads.groups_mut() {
            if group == name || group_family(&group) == name {
                values[0] += 1e-3;
            }
        }
    }
    let mut out = Vec::new();
    let mut probe = state.clone();
    for (g, (group, analytic)) in grads.groups().into_iter().enumerate() {
        for (index, &a) in analytic.iter().enumerate() {
            let original = state.groups()[g].1[index];
            probe.groups_mut()[g].1[index] = original + STEP;
            let plus = loss(&probe, batch)?;
            probe.groups_mut()[g].1[index] = original - STEP;
            let minus = loss(&probe, batch)?;
            probe.groups_mut()[g].1[index] = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            let abs_error = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            out.push(Coordinate {
                config,
                group: group.clone(),
                index,
                analytic: a,
                numeric,
                abs_error,
                rel_error: if scale > 0.0 { abs_error / scale } else { 0.0 },
            });
        }
    }
    Ok(out)
}

pub fn run_gradcheck(options: &GradcheckOptions) -> Result<GradcheckReport> {
    if options.configs == 0 {
        return Err(Error::InvalidConfig(
            "gradcheck needs at least one configuration".into(),
        ));
    }
    let mut coordinates = Vec::new();
    for config in 0..options.configs {
        let mut rng = rng::stream(
            options.seed,
            rng::stream_id(PURPOSE_GRADCHECK, config as u64, 0),
        );
        let (state, batch) = random_case(&mut rng)?;
        coordinates.extend(check_case(
            config,
            &state,
            &batch,
            options.corrupt.as_deref(),
        )?);
    }

    let mut groups: Vec<GroupSummary> = Vec::new();
    for c in &coordinates {
        let family = group_family(&c.group);
        let idx = match groups.iter().position(|g| g.group == family) {
            Some(i) => i,
            None => {
                groups.push(GroupSummary {
                    group: family,
                    coordinates: 0,
                    max_abs_error: 0.0,
                    max_error: 0.0,
                });
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        g.coordinates += 1;
        g.max_abs_error = g.max_abs_error.max(c.abs_error);
        g.max_error = g.max_error.max(c.effective_error());
    }
    let worst = coordinates
        .iter()
        .filter(|c| !c.passes())
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .or_else(|| {
            coordinates
                .iter()
                .max_by(|a, b| a.effective_error().total_cmp(&b.effective_error()))
        })
        .cloned();
    let failures: Vec<Coordinate> = coordinates
        .iter()
        .filter(|c| !c.passes())
        .cloned()
        .collect();
    Ok(GradcheckReport {
        configs: options.configs,
        coordinates: coordinates.len(),
        max_error: coordinates
            .iter()
            .map(Coordinate::effective_error)
            .fold(0.0, f64::max),
        groups,
        worst,
        failures,
    })
}
