//! JSON network files.
//!
//! ```text
//! {"format": 1, "input_dim": n, "layers": [{"weights": [[...]], "bias": [...], "activation": "relu"}]}
//! ```
//!
//! Format 2 additionally allows `"activation"` to be an array with one name
//! per neuron. Numbers are written as shortest round-trip decimals, so a
//! save/load cycle reproduces every weight bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{Activation, ActivationSpec, Layer, Network};
use crate::error::{Error, Result};

pub const FORMAT_UNIFORM: u32 = 1;
pub const FORMAT_MASKED: u32 = 2;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    format: u32,
    input_dim: usize,
    layers: Vec<RawLayer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Value,
}

fn parse_activation(value: &Value, field: &str, format: u32) -> Result<ActivationSpec> {
    let one = |v: &Value, field: &str| -> Result<Activation> {
        let name = v
            .as_str()
            .ok_or_else(|| Error::Parse(format!("{field}: expected an activation name, found {v}")))?;
        Activation::from_name(name).ok_or_else(|| {
            Error::Parse(format!(
                "{field}: unknown activation \"{name}\" (expected \"relu\" or \"linear\")"
            ))
        })
    };
    match value {
        Value::Array(items) => {
            if format < FORMAT_MASKED {
                return Err(Error::Parse(format!(
                    "{field}: per-neuron activation masks require format {FORMAT_MASKED}"
                )));
            }
            let mask = items
                .iter()
                .enumerate()
                .map(|(i, v)| one(v, &format!("{field}[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            Ok(ActivationSpec::PerNeuron(mask))
        }
        other => Ok(ActivationSpec::Uniform(one(other, field)?)),
    }
}

/// Parses a network document and validates it.
pub fn from_json(text: &str) -> Result<Network> {
    let raw: RawNetwork = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if raw.format != FORMAT_UNIFORM && raw.format != FORMAT_MASKED {
        return Err(Error::Parse(format!("format: unsupported version {}", raw.format)));
    }
    let mut layers = Vec::with_capacity(raw.layers.len());
    for (l, rl) in raw.layers.into_iter().enumerate() {
        let cols = rl.weights.first().map_or(0, Vec::len);
        if let Some((i, row)) = rl.weights.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::Parse(format!(
                "layers[{l}].weights: row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
        let activation = parse_activation(&rl.activation, &format!("layers[{l}].activation"), raw.format)?;
        layers.push(Layer::new(rl.weights, rl.bias, activation)?);
    }
    Network::new(raw.input_dim, layers)
}

fn push_numbers(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        // serde_json formats finite floats with ryu: shortest round-trip decimal
        out.push_str(&serde_json::to_string(x).expect("finite weight"));
    }
    out.push(']');
}

/// Serializes with one weight row per line.
pub fn to_json(net: &Network) -> String {
    let masked = net
        .layers
        .iter()
        .any(|l| matches!(l.activation, ActivationSpec::PerNeuron(_)));
    let format = if masked { FORMAT_MASKED } else { FORMAT_UNIFORM };
    let mut out = String::new();
    let _ = write!(out, "{{\n  \"format\": {format},\n  \"input_dim\": {},\n  \"layers\": [", net.input_dim);
    for (l, layer) in net.layers.iter().enumerate() {
        out.push_str(if l == 0 { "\n    {\n" } else { ",\n    {\n" });
        out.push_str("      \"weights\": [");
        for i in 0..layer.rows {
            out.push_str(if i == 0 { "\n        " } else { ",\n        " });
            push_numbers(&mut out, layer.row(i));
        }
        out.push_str("\n      ],\n      \"bias\": ");
        push_numbers(&mut out, &layer.bias);
        out.push_str(",\n      \"activation\": ");
        match &layer.activation {
            ActivationSpec::Uniform(a) => {
                let _ = write!(out, "\"{}\"", a.name());
            }
            ActivationSpec::PerNeuron(mask) => {
                let names: Vec<String> = mask.iter().map(|a| format!("\"{}\"", a.name())).collect();
                let _ = write!(out, "[{}]", names.join(", "));
            }
        }
        out.push_str("\n    }");
    }
    out.push_str("\n  ]\n}\n");
    out
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(net)).map_err(|e| Error::io(path, e))
}

impl Network {
    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_activation_names_field() {
        let text = r#"{"format": 1, "input_dim": 1, "layers": [
            {"weights": [[1.0]], "bias": [0.0], "activation": "tanh"}]}"#;
        let err = from_json(text).unwrap_err().to_string();
        assert!(err.contains("layers[0].activation"), "{err}");
        assert!(err.contains("tanh"), "{err}");
    }

    #[test]
    fn ragged_rows_are_parse_errors() {
        let text = r#"{"format": 1, "input_dim": 2, "layers": [
            {"weights": [[1.0, 2.0], [3.0]], "bias": [0.0, 0.0], "activation": "relu"}]}"#;
        let err = from_json(text).unwrap_err();
        assert!(matches!(err, Error::Parse(ref m) if m.contains("row 1")), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = from_json("{\n \"format\": 1,\n \"input_dim\": }").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn mask_requires_format_two() {
        let text = r#"{"format": 1, "input_dim": 1, "layers": [
            {"weights": [[1.0], [2.0]], "bias": [0.0, 0.0], "activation": ["relu", "linear"]}]}"#;
        assert!(from_json(text).is_err());
        let ok = text.replace("\"format\": 1", "\"format\": 2");
        let net = from_json(&ok).unwrap();
        assert_eq!(net.eval(&[-1.0]).unwrap(), vec![0.0, -2.0]);
        assert!(to_json(&net).contains("\"format\": 2"));
    }

    #[test]
    fn dimension_errors_surface_from_validate() {
        let text = r#"{"format": 1, "input_dim": 3, "layers": [
            {"weights": [[1.0, 2.0]], "bias": [0.0], "activation": "relu"}]}"#;
        assert!(matches!(from_json(text), Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn file_round_trip_preserves_bits() {
        let net = Network::new(
            2,
            vec![
                Layer::new(
                    vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 12345.678901234567]],
                    vec![-0.0, std::f64::consts::PI],
                    Activation::Relu,
                )
                .unwrap(),
                Layer::new(vec![vec![f64::MIN_POSITIVE, -2.5]], vec![1.0 / 7.0], Activation::Linear)
                    .unwrap(),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        for (a, b) in net.layers.iter().zip(&back.layers) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weights), bits(&b.weights));
            assert_eq!(bits(&a.bias), bits(&b.bias));
        }
    }
}
