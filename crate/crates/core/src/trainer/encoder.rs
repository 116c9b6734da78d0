//! Fully connected skeleton-side encoder and the linear projection head.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

/// Encoder shape: `layer_widths[0]` is the input width, every later entry
/// the output width of one dense layer. `text_dim` is the projection output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub text_dim: usize,
}

impl EncoderSpec {
    /// Two relu layers of width `hidden`.
    pub fn default_for(input_dim: usize, text_dim: usize, hidden: usize) -> Self {
        Self {
            layer_widths: vec![input_dim, hidden, hidden],
            activation: Activation::Relu,
            text_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::InvalidConfig("encoder needs an input width".into()));
        }
        if self.layer_widths.contains(&0) || self.text_dim == 0 {
            return Err(Error::InvalidConfig("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn encoded_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }
}

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut StreamRng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..a));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + self.bias.view().insert_axis(Axis(0))
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Learnable parameters: encoder layers, projection head, log-temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub spec: EncoderSpec,
    pub encoder: Vec<Dense>,
    pub projection: Dense,
    pub log_tau: f64,
}

pub const TAU_INIT: f64 = 0.07;
pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 10.0;

impl TrainerState {
    /// Seeded Glorot initialization with `tau = TAU_INIT`.
    pub fn init(spec: EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, rng::stream_id(1, 0, 0));
        let encoder = spec
            .layer_widths
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], &mut rng))
            .collect();
        let projection = Dense::glorot(spec.encoded_dim(), spec.text_dim, &mut rng);
        Ok(Self {
            spec,
            encoder,
            projection,
            log_tau: TAU_INIT.ln(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// Forward pass for a batch of raw rows, returning `psi(E_x(x))`.
    pub fn encode(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.spec.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "encoder input",
                expected: self.spec.input_dim(),
                found: inputs.ncols(),
            });
        }
        let mut h = inputs.to_owned();
        for layer in &self.encoder {
            h = layer.forward(&h).mapv(|z| self.spec.activation.apply(z));
        }
        Ok(self.projection.forward(&h))
    }

    /// Parameter tensors in canonical order with their names.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        param_groups(&self.encoder, &self.projection)
            .into_iter()
            .chain(std::iter::once((
                "log_tau".to_string(),
                std::slice::from_ref(&self.log_tau),
            )))
            .collect()
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = param_groups_mut(&mut self.encoder, &mut self.projection);
        out.push((
            "log_tau".to_string(),
            std::slice::from_mut(&mut self.log_tau),
        ));
        out
    }

    /// Hash of every parameter bit pattern; detects stale caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, values) in self.groups() {
            for v in values {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h = h.rotate_left(7);
        }
        h
    }

    pub fn parameter_count(&self) -> usize {
        self.groups().iter().map(|(_, v)| v.len()).sum()
    }
}

pub(crate) fn param_groups<'a>(
    encoder: &'a [Dense],
    projection: &'a Dense,
) -> Vec<(String, &'a [f64])> {
    let mut out = Vec::with_capacity(2 * encoder.len() + 2);
    for (i, layer) in encoder.iter().enumerate() {
        out.push((
            format!("encoder.{i}.weight"),
            layer.weight.as_slice().expect("standard layout"),
        ));
        out.push((
            format!("encoder.{i}.bias"),
            layer.bias.as_slice().expect("standard layout"),
        ));
    }
    out.push((
        "projection.weight".into(),
        projection.weight.as_slice().expect("standard layout"),
    ));
    out.push((
        "projection.bias".into(),
        projection.bias.as_slice().expect("standard layout"),
    ));
    out
}

pub(crate) fn param_groups_mut<'a>(
    encoder: &'a mut [Dense],
    projection: &'a mut Dense,
) -> Vec<(String, &'a mut [f64])> {
    let mut out = Vec::with_capacity(2 * encoder.len() + 3);
    for (i, layer) in encoder.iter_mut().enumerate() {
        out.push((
            format!("encoder.{i}.weight"),
            layer.weight.as_slice_mut().expect("standard layout"),
        ));
        out.push((
            format!("encoder.{i}.bias"),
            layer.bias.as_slice_mut().expect("standard layout"),
        ));
    }
    out.push((
        "projection.weight".into(),
        projection.weight.as_slice_mut().expect("standard layout"),
    ));
    out.push((
        "projection.bias".into(),
        projection.bias.as_slice_mut().expect("standard layout"),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_shapes_and_glorot_bounds() {
        let spec = EncoderSpec::default_for(5, 3, 8);
        let state = TrainerState::init(spec, 1).unwrap();
        assert_eq!(state.encoder.len(), 2);
        assert_eq!(state.encoder[0].weight.dim(), (5, 8));
        assert_eq!(state.encoder[1].weight.dim(), (8, 8));
        assert_eq!(state.projection.weight.dim(), (8, 3));
        let a = (6.0f64 / 13.0).sqrt();
        assert!(state.encoder[0].weight.iter().all(|w| w.abs() < a));
        assert!((state.tau() - TAU_INIT).abs() < 1e-15);
        assert_eq!(
            state.parameter_count(),
            5 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3 + 1
        );
    }

    #[test]
    fn init_is_seeded() {
        let spec = EncoderSpec::default_for(4, 4, 4);
        let a = TrainerState::init(spec.clone(), 3).unwrap();
        let b = TrainerState::init(spec.clone(), 3).unwrap();
        let c = TrainerState::init(spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn invalid_specs() {
        let mut spec = EncoderSpec::default_for(4, 4, 4);
        spec.layer_widths = vec![];
        assert!(spec.validate().is_err());
        spec.layer_widths = vec![4, 0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn encode_matches_manual_chain() {
        let spec = EncoderSpec {
            layer_widths: vec![2, 2],
            activation: Activation::Tanh,
            text_dim: 1,
        };
        let mut state = TrainerState::init(spec, 0).unwrap();
        state.encoder[0].weight = array![[0.5, -1.0], [2.0, 0.25]];
        state.encoder[0].bias = array![0.1, -0.2];
        state.projection.weight = array![[1.5], [-0.5]];
        state.projection.bias = array![0.3];
        let x = array![[1.0, -2.0]];
        let h0 = (0.5f64 * 1.0 + 2.0 * -2.0 + 0.1).tanh();
        let h1 = (-1.0f64 + 0.25 * -2.0 - 0.2).tanh();
        let expected = 1.5 * h0 - 0.5 * h1 + 0.3;
        let out = state.encode(&x).unwrap();
        assert!((out[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn activation_parse_roundtrip() {
        for a in [Activation::Relu, Activation::Tanh, Activation::Identity] {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
        assert!("sigmoid".parse::<Activation>().is_err());
    }
}
