use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    /// `x² + 2x`
    SquarePlusTwo,
    None,
}

impl ActivationKind {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ActivationKind::Relu => z.max(0.0),
            ActivationKind::SquarePlusTwo => z * z + 2.0 * z,
            ActivationKind::None => z,
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::SquarePlusTwo => 2.0 * z + 2.0,
            ActivationKind::None => 1.0,
        }
    }

    /// Whether the activation can be evaluated on ciphertexts.
    pub fn is_polynomial(self) -> bool {
        !matches!(self, ActivationKind::Relu)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::SquarePlusTwo => "square_plus_two",
            ActivationKind::None => "none",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    /// Accepts the file tags plus the short CLI spelling `square2x`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActivationKind::Relu),
            "square_plus_two" | "square2x" => Ok(ActivationKind::SquarePlusTwo),
            "none" => Ok(ActivationKind::None),
            other => Err(Error::Usage(format!("unknown activation {other:?}"))),
        }
    }
}

/// `z = W·a + b` followed by an activation. `weights[k]` is the row of
/// output neuron `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: ActivationKind,
}

impl DenseLayer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: ActivationKind) -> Result<Self> {
        let layer = DenseLayer {
            weights,
            bias,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: ActivationKind) -> Self {
        DenseLayer {
            weights: vec![vec![0.0; inputs]; outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.outputs() * self.inputs() + self.bias.len()
    }

    fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.inputs() == 0 {
            return Err(Error::Dimension("empty dense layer".into()));
        }
        if self.weights.iter().any(|r| r.len() != self.inputs()) {
            return Err(Error::Dimension("ragged weight matrix".into()));
        }
        if self.bias.len() != self.outputs() {
            return Err(Error::Dimension(format!(
                "bias length {} but {} output rows",
                self.bias.len(),
                self.outputs()
            )));
        }
        if self.weights.iter().flatten().chain(&self.bias).any(|w| !w.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Pre-activation `W·a + b`.
    pub fn affine(&self, a: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, a: &[f64]) -> Vec<f64> {
        self.affine(a)
            .into_iter()
            .map(|z| self.activation.apply(z))
            .collect()
    }
}

/// A plaintext dense classifier. The last layer's output are the logits;
/// no softmax is ever applied at inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    pub input_dim: usize,
    pub class_count: usize,
    pub layers: Vec<DenseLayer>,
    /// Fixed-point scale the model is meant to be quantized with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<u64>,
    /// Hash of the training configuration that produced the weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_hash: Option<String>,
}

impl ModelSpec {
    pub fn new(name: &str, layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Dimension("model without layers".into()))?;
        let model = ModelSpec {
            name: name.to_string(),
            input_dim: first.inputs(),
            class_count: layers.last().map_or(0, DenseLayer::outputs),
            layers,
            delta: None,
            training_hash: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("model without layers".into()));
        }
        let mut width = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.inputs() != width {
                return Err(Error::Dimension(format!(
                    "layer {i} expects {} inputs, previous width is {width}",
                    layer.inputs()
                )));
            }
            width = layer.outputs();
        }
        if width != self.class_count {
            return Err(Error::Dimension(format!(
                "last layer has {width} outputs, class count is {}",
                self.class_count
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut a = x.to_vec();
        for layer in &self.layers {
            a = layer.forward(&a);
        }
        Ok(a)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("model serializes");
        let obj = v.as_object_mut().expect("object");
        obj.insert("format_version".into(), MODEL_FORMAT_VERSION.into());
        for layer in obj
            .get_mut("layers")
            .and_then(Value::as_array_mut)
            .expect("layers array")
        {
            layer
                .as_object_mut()
                .expect("layer object")
                .insert("type".into(), "dense".into());
        }
        serde_json::to_string_pretty(&v).expect("json")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| {
            if e.is_eof() {
                Error::Format(format!(
                    "model file truncated inside section '{}'",
                    open_section(text)
                ))
            } else {
                Error::Format(format!("malformed model file: {e}"))
            }
        })?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Format("model file is not a JSON object".into()))?;
        let version = obj
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Format("missing section 'format_version'".into()))?;
        if version != MODEL_FORMAT_VERSION as u64 {
            return Err(Error::Version {
                found: version as u32,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        for key in ["input_dim", "class_count", "layers"] {
            if !obj.contains_key(key) {
                return Err(Error::Format(format!("missing section '{key}'")));
            }
        }
        let layers = obj["layers"]
            .as_array()
            .ok_or_else(|| Error::Format("section 'layers' is not an array".into()))?;
        for (i, layer) in layers.iter().enumerate() {
            match layer.get("type").and_then(Value::as_str) {
                Some("dense") | None => {}
                Some(other) => {
                    return Err(Error::UnsupportedLayer(format!(
                        "layer {i} has type {other:?}; only dense layers are supported"
                    )))
                }
            }
        }
        let model: ModelSpec = serde_json::from_value(v)
            .map_err(|e| Error::Format(format!("invalid model file: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::storage::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn save_model(model: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    ModelSpec::load(path)
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Key path of the innermost JSON container still open at the end of
/// `text`, e.g. `layers[1].weights`.
fn open_section(text: &str) -> String {
    enum Frame {
        Object(Option<String>),
        Array(usize),
    }
    let mut stack: Vec<Frame> = Vec::new();
    let mut chars = text.chars().peekable();
    let mut last_string: Option<String> = None;
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                let mut s = String::new();
                while let Some(c) = chars.next() {
                    match c {
                        '\\' => {
                            chars.next();
                        }
                        '"' => break,
                        c => s.push(c),
                    }
                }
                last_string = Some(s);
            }
            ':' => {
                if let Some(Frame::Object(key)) = stack.last_mut() {
                    *key = last_string.take();
                }
            }
            ',' => {
                if let Some(Frame::Array(i)) = stack.last_mut() {
                    *i += 1;
                }
            }
            '{' => stack.push(Frame::Object(None)),
            '[' => stack.push(Frame::Array(0)),
            '}' | ']' => {
                stack.pop();
            }
            _ => {}
        }
    }
    let mut path = String::new();
    for frame in &stack {
        match frame {
            Frame::Object(Some(k)) => {
                if !path.is_empty() {
                    path.push('.');
                }
                path.push_str(k);
            }
            Frame::Object(None) => {}
            Frame::Array(i) => path.push_str(&format!("[{i}]")),
        }
    }
    if path.is_empty() {
        "header".into()
    } else {
        path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer() -> ModelSpec {
        ModelSpec::new(
            "t",
            vec![
                DenseLayer::new(
                    vec![vec![0.5, -1.0], vec![0.25, 2.0], vec![1.0, 1.0]],
                    vec![0.1, -0.2, 0.0],
                    ActivationKind::Relu,
                )
                .unwrap(),
                DenseLayer::new(
                    vec![vec![1.0, 0.0, -1.0], vec![0.5, 0.5, 0.5]],
                    vec![0.0, 1.0],
                    ActivationKind::None,
                )
                .unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        let id = DenseLayer::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            ActivationKind::None,
        )
        .unwrap();
        let m = ModelSpec::new("id", vec![id]).unwrap();
        assert_eq!(m.forward(&[3.5, -2.0]).unwrap(), vec![3.5, -2.0]);
        assert!(matches!(m.forward(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn activations() {
        let relu: Vec<f64> = [-1.0, 2.0].iter().map(|&z| ActivationKind::Relu.apply(z)).collect();
        assert_eq!(relu, vec![0.0, 2.0]);
        assert_eq!(ActivationKind::SquarePlusTwo.apply(1.0), 3.0);
        assert_eq!(ActivationKind::SquarePlusTwo.apply(-1.0), -1.0);
        assert_eq!("square2x".parse::<ActivationKind>().unwrap(), ActivationKind::SquarePlusTwo);
        assert!("softplus".parse::<ActivationKind>().is_err());
    }

    #[test]
    fn shape_errors() {
        assert!(DenseLayer::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0; 2], ActivationKind::None).is_err());
        assert!(DenseLayer::new(vec![vec![1.0]], vec![0.0; 2], ActivationKind::None).is_err());
        let a = DenseLayer::zeros(2, 3, ActivationKind::Relu);
        let b = DenseLayer::zeros(4, 2, ActivationKind::None);
        assert!(matches!(ModelSpec::new("x", vec![a, b]), Err(Error::Dimension(_))));
    }

    #[test]
    fn json_roundtrip() {
        let m = two_layer();
        let text = m.to_json();
        assert!(text.contains("\"type\": \"dense\""));
        assert!(text.contains("\"activation\": \"relu\""));
        assert_eq!(ModelSpec::from_json(&text).unwrap(), m);
    }

    #[test]
    fn truncated_file_names_section() {
        let text = two_layer().to_json();
        let cut = text.find("-1.0").unwrap();
        let err = ModelSpec::from_json(&text[..cut]).unwrap_err().to_string();
        assert!(err.contains("layers[0].weights"), "{err}");
        let cut = text.find("\"bias\"").unwrap() + 10;
        let err = ModelSpec::from_json(&text[..cut]).unwrap_err().to_string();
        assert!(err.contains("layers[0].bias"), "{err}");
    }

    #[test]
    fn conv_layer_rejected() {
        let text = two_layer().to_json().replacen("\"dense\"", "\"conv2d\"", 1);
        assert!(matches!(
            ModelSpec::from_json(&text),
            Err(Error::UnsupportedLayer(_))
        ));
    }

    #[test]
    fn version_checked() {
        let text = two_layer()
            .to_json()
            .replace("\"format_version\": 1", "\"format_version\": 7");
        assert!(matches!(
            ModelSpec::from_json(&text),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = two_layer();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }
}
