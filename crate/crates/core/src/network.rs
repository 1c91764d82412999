//! Feedforward networks with ReLU and linear activations.
//!
//! A network maps `η_0` to `η_L` through `η_ℓ = φ_ℓ(W_ℓ η_{ℓ-1} + b_ℓ)`.
//! Layers normally carry a single activation; augmented networks need a
//! per-neuron activation mask, which [`ActivationSpec::PerNeuron`] provides.

mod io;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_network, save_network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "linear" | "purelin" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Activation of a whole layer, or one entry per output neuron.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationSpec {
    Uniform(Activation),
    PerNeuron(Vec<Activation>),
}

impl ActivationSpec {
    #[inline]
    pub fn get(&self, neuron: usize) -> Activation {
        match self {
            ActivationSpec::Uniform(a) => *a,
            ActivationSpec::PerNeuron(mask) => mask[neuron],
        }
    }

    /// Expands to one activation per neuron.
    pub fn to_mask(&self, rows: usize) -> Vec<Activation> {
        match self {
            ActivationSpec::Uniform(a) => vec![*a; rows],
            ActivationSpec::PerNeuron(mask) => mask.clone(),
        }
    }

    /// Collapses a mask back to `Uniform` when every entry agrees.
    pub fn from_mask(mask: Vec<Activation>) -> Self {
        match mask.first() {
            Some(&first) if mask.iter().all(|&a| a == first) => ActivationSpec::Uniform(first),
            _ => ActivationSpec::PerNeuron(mask),
        }
    }
}

impl From<Activation> for ActivationSpec {
    fn from(a: Activation) -> Self {
        ActivationSpec::Uniform(a)
    }
}

/// One affine map followed by an activation. Weights are row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: ActivationSpec,
}

impl Layer {
    /// Builds a layer from nested rows. Ragged rows are rejected.
    pub fn new(
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        activation: impl Into<ActivationSpec>,
    ) -> Result<Self> {
        let rows = weights.len();
        let cols = weights.first().map_or(0, Vec::len);
        if let Some((i, row)) = weights.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::shape(format!("weight row {i}"), cols, row.len()));
        }
        Ok(Layer {
            rows,
            cols,
            weights: weights.into_iter().flatten().collect(),
            bias,
            activation: activation.into(),
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols + j]
    }

    /// `φ(Wx + b)`; the caller guarantees `x.len() == cols`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let mut acc = 0.0;
                for (w, v) in self.row(i).iter().zip(x) {
                    acc += w * v;
                }
                self.activation.get(i).apply(acc + self.bias[i])
            })
            .collect()
    }

    /// Row-sum (infinity-to-infinity) operator norm of the weight matrix.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|w| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// A structural problem found by [`Network::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    /// Zero-based layer index, `None` for network-level findings.
    pub layer: Option<usize>,
    pub kind: FindingKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FindingKind {
    DimensionMismatch,
    NonFinite,
    Empty,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layer {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Builds a network and rejects it if [`validate`](Self::validate) reports anything.
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Network { input_dim, layers };
        let findings = net.validate();
        if findings.is_empty() {
            Ok(net)
        } else {
            Err(Error::InvalidNetwork(findings))
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.rows)
    }

    /// `[n_0, n_1, ..., n_L]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(|l| l.rows))
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::shape("network input", self.input_dim, x.len()));
        }
        let mut eta = x.to_vec();
        for layer in &self.layers {
            eta = layer.forward(&eta);
        }
        Ok(eta)
    }

    /// Product of layer operator norms: a Lipschitz constant in the infinity norm.
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers.iter().map(Layer::inf_norm).product()
    }

    /// Lists every violated structural invariant. Never panics.
    pub fn validate(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        let mut push = |layer, kind, message: String| out.push(Finding { layer, kind, message });
        if self.input_dim == 0 {
            push(None, FindingKind::Empty, "input_dim must be positive".into());
        }
        if self.layers.is_empty() {
            push(None, FindingKind::Empty, "network has no layers".into());
        }
        let mut prev = self.input_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            let l = Some(l);
            if layer.rows == 0 {
                push(l, FindingKind::Empty, "layer has no neurons".into());
            }
            if layer.cols != prev {
                push(
                    l,
                    FindingKind::DimensionMismatch,
                    format!("weights have {} columns, previous width is {prev}", layer.cols),
                );
            }
            if layer.weights.len() != layer.rows * layer.cols {
                push(
                    l,
                    FindingKind::DimensionMismatch,
                    format!(
                        "weight buffer holds {} entries, expected {}x{}",
                        layer.weights.len(),
                        layer.rows,
                        layer.cols
                    ),
                );
            }
            if layer.bias.len() != layer.rows {
                push(
                    l,
                    FindingKind::DimensionMismatch,
                    format!("bias length {} but weights have {} rows", layer.bias.len(), layer.rows),
                );
            }
            if let ActivationSpec::PerNeuron(mask) = &layer.activation {
                if mask.len() != layer.rows {
                    push(
                        l,
                        FindingKind::DimensionMismatch,
                        format!("activation mask length {} but layer has {} rows", mask.len(), layer.rows),
                    );
                }
            }
            if layer.weights.iter().any(|w| !w.is_finite()) {
                push(l, FindingKind::NonFinite, "weights contain NaN or infinity".into());
            }
            if layer.bias.iter().any(|b| !b.is_finite()) {
                push(l, FindingKind::NonFinite, "bias contains NaN or infinity".into());
            }
            prev = layer.rows;
        }
        out
    }
}
