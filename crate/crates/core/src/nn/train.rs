use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{argmax, ActivationKind, DenseLayer, ModelSpec};
use crate::error::{Error, Result};

/// Layer widths: `input_dim → hidden... → class_count`. Every hidden layer
/// uses `activation`; the output layer has none.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub class_count: usize,
    pub activation: ActivationKind,
}

impl Architecture {
    /// `[FC → act → FC]`.
    pub fn classifier(input_dim: usize, hidden: usize, class_count: usize, activation: ActivationKind) -> Self {
        Architecture {
            input_dim,
            hidden: vec![hidden],
            class_count,
            activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Gradients are rescaled to at most this L2 norm per step.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 1,
            clip_norm: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelSpec,
    pub history: Vec<EpochStats>,
}

impl TrainOutcome {
    pub fn final_validation_accuracy(&self) -> Option<f64> {
        self.history.last().and_then(|e| e.validation_accuracy)
    }
}

pub fn accuracy(model: &ModelSpec, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (x, &y) in data.features.iter().zip(&data.labels) {
        if model.predict(x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

fn init_layers(arch: &Architecture, rng: &mut ChaCha20Rng) -> Vec<DenseLayer> {
    let mut widths = vec![arch.input_dim];
    widths.extend(&arch.hidden);
    widths.push(arch.class_count);
    let last = widths.len() - 2;
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DenseLayer {
                weights: (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| rng.gen_range(-limit..limit)).collect())
                    .collect(),
                bias: vec![0.0; fan_out],
                activation: if i == last {
                    ActivationKind::None
                } else {
                    arch.activation
                },
            }
        })
        .collect()
}

fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(exps[label] / sum).ln();
    let grad = exps
        .iter()
        .enumerate()
        .map(|(k, e)| e / sum - if k == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

struct Grads {
    w: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
}

impl Grads {
    fn zeros(layers: &[DenseLayer]) -> Self {
        Grads {
            w: layers
                .iter()
                .map(|l| vec![vec![0.0; l.inputs()]; l.outputs()])
                .collect(),
            b: layers.iter().map(|l| vec![0.0; l.outputs()]).collect(),
        }
    }

    fn norm(&self) -> f64 {
        self.w
            .iter()
            .flatten()
            .flatten()
            .chain(self.b.iter().flatten())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Accumulates the loss gradient of one sample; returns (loss, correct).
fn backprop(layers: &[DenseLayer], x: &[f64], label: usize, g: &mut Grads) -> (f64, bool) {
    let mut inputs = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(layers.len());
    for layer in layers {
        let z = layer.affine(inputs.last().expect("input"));
        inputs.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
        pre.push(z);
    }
    let logits = inputs.last().expect("logits");
    let correct = argmax(logits) == label;
    let (loss, mut delta) = softmax_xent(logits, label);
    for (i, layer) in layers.iter().enumerate().rev() {
        for (d, &z) in delta.iter_mut().zip(&pre[i]) {
            *d *= layer.activation.derivative(z);
        }
        let a = &inputs[i];
        for (k, &d) in delta.iter().enumerate() {
            g.b[i][k] += d;
            for (gw, &av) in g.w[i][k].iter_mut().zip(a) {
                *gw += d * av;
            }
        }
        if i > 0 {
            let mut back = vec![0.0; layer.inputs()];
            for (k, &d) in delta.iter().enumerate() {
                for (bv, &w) in back.iter_mut().zip(&layer.weights[k]) {
                    *bv += d * w;
                }
            }
            delta = back;
        }
    }
    (loss, correct)
}

/// Mini-batch SGD on softmax cross-entropy. Deterministic for a given seed.
pub fn train_sgd(
    train: &Dataset,
    validation: Option<&Dataset>,
    arch: &Architecture,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Dimension("empty training set".into()));
    }
    if train.input_dim() != arch.input_dim || train.class_count > arch.class_count {
        return Err(Error::Dimension(format!(
            "dataset ({} features, {} classes) does not fit architecture ({} → {})",
            train.input_dim(),
            train.class_count,
            arch.input_dim,
            arch.class_count
        )));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Usage("batch size and learning rate must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut layers = init_layers(arch, &mut rng);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut hits = 0;
        for batch in order.chunks(config.batch_size) {
            let mut g = Grads::zeros(&layers);
            for &i in batch {
                let (loss, ok) = backprop(&layers, &train.features[i], train.labels[i], &mut g);
                total_loss += loss;
                hits += ok as usize;
            }
            let norm = g.norm() / batch.len() as f64;
            let clip = if norm > config.clip_norm {
                config.clip_norm / norm
            } else {
                1.0
            };
            let step = config.learning_rate * clip / batch.len() as f64;
            for (l, layer) in layers.iter_mut().enumerate() {
                for (row, grow) in layer.weights.iter_mut().zip(&g.w[l]) {
                    for (w, gw) in row.iter_mut().zip(grow) {
                        *w -= step * gw;
                    }
                }
                for (b, gb) in layer.bias.iter_mut().zip(&g.b[l]) {
                    *b -= step * gb;
                }
            }
        }
        let loss = total_loss / train.len() as f64;
        if !loss.is_finite() || layers.iter().flat_map(|l| l.weights.iter().flatten()).any(|w| !w.is_finite()) {
            return Err(Error::Training {
                epoch,
                reason: format!("non-finite loss {loss}"),
            });
        }
        let mut model = ModelSpec::new("", layers.clone())?;
        model.class_count = arch.class_count;
        history.push(EpochStats {
            epoch,
            loss,
            train_accuracy: hits as f64 / train.len() as f64,
            validation_accuracy: validation.map(|v| accuracy(&model, v)).transpose()?,
        });
    }
    let mut model = ModelSpec::new(&format!("mlp-{}", arch.activation), layers)?;
    model.training_hash = Some(format!("{:016x}", config_hash(arch, config)));
    Ok(TrainOutcome { model, history })
}

pub fn config_hash(arch: &Architecture, config: &TrainConfig) -> u64 {
    let text = serde_json::to_string(&(arch, config)).expect("config serializes");
    crate::bfv::fnv1a(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_toy_all_activations() {
        let data = Dataset::two_blobs(200, 4, 3);
        for act in [ActivationKind::Relu, ActivationKind::SquarePlusTwo, ActivationKind::None] {
            let arch = Architecture::classifier(4, 6, 2, act);
            let cfg = TrainConfig {
                epochs: 50,
                ..TrainConfig::default()
            };
            let out = train_sgd(&data, None, &arch, &cfg).unwrap();
            let acc = accuracy(&out.model, &data).unwrap();
            assert!(acc >= 0.99, "{act}: {acc}");
            assert_eq!(out.history.len(), 50);
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let data = Dataset::two_blobs(60, 3, 1);
        let arch = Architecture::classifier(3, 4, 2, ActivationKind::SquarePlusTwo);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train_sgd(&data, None, &arch, &cfg).unwrap();
        let b = train_sgd(&data, None, &arch, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let c = train_sgd(&data, None, &arch, &TrainConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn divergence_reports_epoch() {
        let data = Dataset::two_blobs(40, 3, 1);
        let arch = Architecture::classifier(3, 4, 2, ActivationKind::SquarePlusTwo);
        let cfg = TrainConfig {
            epochs: 20,
            learning_rate: 1e300,
            clip_norm: f64::INFINITY,
            ..TrainConfig::default()
        };
        match train_sgd(&data, None, &arch, &cfg) {
            Err(Error::Training { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
