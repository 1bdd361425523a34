use serde::{Deserialize, Serialize};

use super::model::{ActivationKind, ModelSpec};
use crate::encode::{FixedPointCodec, ScaleState};
use crate::error::{Error, Result};

/// Scale powers of one layer. Weights always sit at power 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerScale {
    pub input: u32,
    pub weight: u32,
    pub bias: u32,
    pub output: u32,
}

/// Per-layer scale bookkeeping for a model whose input arrives at power 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePlan {
    pub layers: Vec<LayerScale>,
}

impl ScalePlan {
    pub fn for_activations(acts: &[ActivationKind]) -> Self {
        let mut power = 1;
        let layers = acts
            .iter()
            .map(|act| {
                let z = power + 1;
                let output = match act {
                    ActivationKind::SquarePlusTwo => 2 * z,
                    ActivationKind::Relu | ActivationKind::None => z,
                };
                let s = LayerScale {
                    input: power,
                    weight: 1,
                    bias: z,
                    output,
                };
                power = output;
                s
            })
            .collect();
        ScalePlan { layers }
    }

    pub fn output(&self) -> ScaleState {
        ScaleState::new(self.layers.last().map_or(1, |l| l.output))
    }
}

pub fn scale_plan(model: &ModelSpec) -> ScalePlan {
    ScalePlan::for_activations(&model.layers.iter().map(|l| l.activation).collect::<Vec<_>>())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    /// `weights[k][l]` = `round(Δ·w_kl)`
    pub weights: Vec<Vec<i64>>,
    /// At the layer's pre-activation power.
    pub bias: Vec<i128>,
    pub activation: ActivationKind,
    pub scale: LayerScale,
}

impl QuantizedLayer {
    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub name: String,
    pub codec: FixedPointCodec,
    pub input_dim: usize,
    pub class_count: usize,
    pub layers: Vec<QuantizedLayer>,
}

pub fn quantize(model: &ModelSpec, codec: &FixedPointCodec) -> Result<QuantizedModel> {
    model.validate()?;
    let plan = scale_plan(model);
    let layers = model
        .layers
        .iter()
        .zip(&plan.layers)
        .map(|(layer, &scale)| {
            let weights = layer
                .weights
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&w| codec.quantize(w, scale.weight).map(|v| v as i64))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let bias = layer
                .bias
                .iter()
                .map(|&b| codec.quantize(b, scale.bias))
                .collect::<Result<Vec<_>>>()?;
            Ok(QuantizedLayer {
                weights,
                bias,
                activation: layer.activation,
                scale,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedModel {
        name: model.name.clone(),
        codec: *codec,
        input_dim: model.input_dim,
        class_count: model.class_count,
        layers,
    })
}

impl QuantizedModel {
    pub fn plan(&self) -> ScalePlan {
        ScalePlan {
            layers: self.layers.iter().map(|l| l.scale).collect(),
        }
    }

    pub fn output_scale(&self) -> ScaleState {
        self.plan().output()
    }

    pub fn plain_modulus(&self) -> u64 {
        self.codec.plain_modulus()
    }

    /// Same integers under a different plaintext modulus (the quantized
    /// values do not depend on `t`, only the range check does).
    pub fn with_plain_modulus(&self, t: u64) -> Result<Self> {
        let mut q = self.clone();
        q.codec = FixedPointCodec::new(self.codec.scale(), t)?;
        Ok(q)
    }

    /// Quantizes an input vector at power 1.
    pub fn quantize_input(&self, x: &[f64]) -> Result<Vec<i128>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        x.iter().map(|&v| self.codec.quantize(v, 1)).collect()
    }

    /// Worst-case magnitude of every intermediate integer (pre-activation
    /// and activation output, per layer) for inputs bounded by `input_bound`.
    /// Saturates instead of overflowing.
    pub fn magnitude_bounds(&self, input_bound: i128) -> Vec<(i128, i128)> {
        let mut bound = input_bound.max(0);
        self.layers
            .iter()
            .map(|l| {
                let z = l
                    .weights
                    .iter()
                    .zip(&l.bias)
                    .map(|(row, &b)| {
                        row.iter()
                            .fold(b.abs(), |acc, &w| acc.saturating_add((w as i128).abs().saturating_mul(bound)))
                    })
                    .max()
                    .unwrap_or(0);
                let a = match l.activation {
                    ActivationKind::SquarePlusTwo => {
                        let two_dk = self
                            .codec
                            .scale_pow(l.scale.bias)
                            .map_or(i128::MAX, |d| d.saturating_mul(2));
                        z.saturating_mul(z).saturating_add(two_dk.saturating_mul(z))
                    }
                    ActivationKind::Relu | ActivationKind::None => z,
                };
                bound = a;
                (z, a)
            })
            .collect()
    }

    /// Largest intermediate magnitude for inputs bounded by `input_bound`.
    pub fn max_magnitude(&self, input_bound: i128) -> i128 {
        self.magnitude_bounds(input_bound)
            .into_iter()
            .map(|(z, a)| z.max(a))
            .max()
            .unwrap_or(input_bound)
            .max(input_bound)
    }

    /// Plaintext-modulus size (bits) that keeps every intermediate below `t/2`.
    pub fn required_plain_bits(&self, input_bound: i128) -> u32 {
        let m = self.max_magnitude(input_bound);
        // t > 2m + 1  ⇐  t >= 2^(bits(m) + 1)
        (128 - m.leading_zeros()) + 2
    }

    /// Fails before any arithmetic if some intermediate could reach `t/2`.
    pub fn preflight(&self, input_bound: i128) -> Result<()> {
        let limit = self.codec.max_magnitude();
        for (i, (z, a)) in self.magnitude_bounds(input_bound).into_iter().enumerate() {
            if z > limit || a > limit {
                return Err(Error::QuantizationOverflow(format!(
                    "layer {i} may reach magnitude {} > (t-1)/2 = {limit}",
                    z.max(a)
                )));
            }
        }
        Ok(())
    }
}

fn mod_t(v: i128, t: u64) -> u64 {
    v.rem_euclid(t as i128) as u64
}

fn centered(v: u64, t: u64) -> i128 {
    if v > t / 2 {
        v as i128 - t as i128
    } else {
        v as i128
    }
}

fn mul_mod(a: u64, b: u64, t: u64) -> u64 {
    ((a as u128 * b as u128) % t as u128) as u64
}

/// Evaluates one layer on residues mod `t`, exactly as the encrypted engine
/// does: products and sums mod `t`, bias at the pre-activation power, `x²+2x`
/// as `a² + (2Δ^k)·a`, ReLU on the centered lift.
pub fn layer_forward_mod(layer: &QuantizedLayer, codec: &FixedPointCodec, a: &[u64]) -> Vec<u64> {
    let t = codec.plain_modulus();
    layer
        .weights
        .iter()
        .zip(&layer.bias)
        .map(|(row, &b)| {
            let mut acc = mod_t(b, t);
            for (&w, &x) in row.iter().zip(a) {
                acc = ((acc as u128 + mul_mod(mod_t(w as i128, t), x, t) as u128) % t as u128) as u64;
            }
            activation_mod(layer.activation, layer.scale.bias, codec, acc)
        })
        .collect()
}

pub(crate) fn activation_mod(act: ActivationKind, power: u32, codec: &FixedPointCodec, z: u64) -> u64 {
    let t = codec.plain_modulus();
    match act {
        ActivationKind::None => z,
        ActivationKind::Relu => {
            if centered(z, t) < 0 {
                0
            } else {
                z
            }
        }
        ActivationKind::SquarePlusTwo => {
            let two_dk = mod_t(2 * codec.scale_pow(power).expect("scale power fits"), t);
            let sq = mul_mod(z, z, t);
            ((sq as u128 + mul_mod(two_dk, z, t) as u128) % t as u128) as u64
        }
    }
}

/// Exact integer forward pass mod `t`; the ground truth for encrypted
/// inference. `x_int` is the input at power 1 (signed).
pub fn oracle_forward_int(q: &QuantizedModel, x_int: &[i128]) -> Result<Vec<u64>> {
    if x_int.len() != q.input_dim {
        return Err(Error::Dimension(format!(
            "input has {} features, model expects {}",
            x_int.len(),
            q.input_dim
        )));
    }
    let t = q.plain_modulus();
    let mut a: Vec<u64> = x_int.iter().map(|&v| mod_t(v, t)).collect();
    let mut power = 1;
    for layer in &q.layers {
        if layer.scale.input != power {
            return Err(Error::ScaleMismatch {
                left: layer.scale.input,
                right: power,
            });
        }
        a = layer_forward_mod(layer, &q.codec, &a);
        power = layer.scale.output;
    }
    Ok(a)
}

/// Decodes oracle (or decrypted) logits to reals.
pub fn decode_logits(q: &QuantizedModel, logits: &[u64]) -> Vec<f64> {
    q.codec.decode(logits, q.output_scale())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modring::ntt_primes;
    use crate::nn::model::{argmax, DenseLayer};
    use crate::nn::Dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn t60() -> u64 {
        ntt_primes(60, 8192, 1, &[]).unwrap()[0]
    }

    fn random_model(rng: &mut ChaCha20Rng, dims: &[usize], act: ActivationKind) -> ModelSpec {
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                DenseLayer::new(
                    (0..w[1])
                        .map(|_| (0..w[0]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect(),
                    (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                    if i == last { ActivationKind::None } else { act },
                )
                .unwrap()
            })
            .collect();
        ModelSpec::new("r", layers).unwrap()
    }

    #[test]
    fn scale_plan_table() {
        use ActivationKind::*;
        let p = ScalePlan::for_activations(&[SquarePlusTwo, None]);
        assert_eq!(
            p.layers,
            vec![
                LayerScale { input: 1, weight: 1, bias: 2, output: 4 },
                LayerScale { input: 4, weight: 1, bias: 5, output: 5 },
            ]
        );
        let p = ScalePlan::for_activations(&[Relu, None]);
        assert_eq!(p.layers[1], LayerScale { input: 2, weight: 1, bias: 3, output: 3 });
        let p = ScalePlan::for_activations(&[None, None]);
        assert_eq!(p.output().power, 3);
    }

    #[test]
    fn quantize_examples() {
        let codec = FixedPointCodec::new(1024, t60()).unwrap();
        let m = ModelSpec::new(
            "q",
            vec![
                DenseLayer::new(vec![vec![0.5]], vec![0.25], ActivationKind::None).unwrap(),
                DenseLayer::new(vec![vec![0.0]], vec![0.0], ActivationKind::None).unwrap(),
            ],
        )
        .unwrap();
        let q = quantize(&m, &codec).unwrap();
        assert_eq!(q.layers[0].weights, vec![vec![512]]);
        assert_eq!(q.layers[0].bias, vec![1 << 18]);
        assert_eq!(q.layers[1].weights, vec![vec![0]]);
        assert_eq!(q.layers[1].bias, vec![0]);
        assert_eq!(q.layers[1].scale.bias, 3);
    }

    #[test]
    fn quantize_overflow() {
        let codec = FixedPointCodec::new(1024, 1_000_003).unwrap();
        let m = ModelSpec::new(
            "o",
            vec![DenseLayer::new(vec![vec![1000.0]], vec![0.0], ActivationKind::None).unwrap()],
        )
        .unwrap();
        assert!(matches!(quantize(&m, &codec), Err(Error::QuantizationOverflow(_))));
    }

    #[test]
    fn exactly_representable_values_match_float() {
        // weights and inputs are multiples of 1/Δ, so nothing rounds
        let codec = FixedPointCodec::new(16, t60()).unwrap();
        let m = ModelSpec::new(
            "e",
            vec![
                DenseLayer::new(
                    vec![vec![0.5, -0.25], vec![1.0, 0.125]],
                    vec![0.0625, -1.0],
                    ActivationKind::SquarePlusTwo,
                )
                .unwrap(),
                DenseLayer::new(vec![vec![2.0, -0.5]], vec![0.75], ActivationKind::None).unwrap(),
            ],
        )
        .unwrap();
        let q = quantize(&m, &codec).unwrap();
        let x = [0.75, -1.5];
        let got = decode_logits(&q, &oracle_forward_int(&q, &q.quantize_input(&x).unwrap()).unwrap());
        assert_eq!(got, m.forward(&x).unwrap());
    }

    #[test]
    fn relu_uses_sign() {
        let codec = FixedPointCodec::new(4, 97).unwrap();
        assert_eq!(activation_mod(ActivationKind::Relu, 2, &codec, 96), 0);
        assert_eq!(activation_mod(ActivationKind::Relu, 2, &codec, 5), 5);
        // Δ=4, k=1: a=2 → 4 + 2·4·2 = 20
        assert_eq!(activation_mod(ActivationKind::SquarePlusTwo, 1, &codec, 2), 20);
    }

    #[test]
    fn oracle_close_to_float_on_random_nets() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let codec = FixedPointCodec::new(1 << 10, t60()).unwrap();
        for act in [ActivationKind::Relu, ActivationKind::None, ActivationKind::SquarePlusTwo] {
            for _ in 0..20 {
                let m = random_model(&mut rng, &[6, 5, 3], act);
                let q = quantize(&m, &codec).unwrap();
                let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let xi = q.quantize_input(&x).unwrap();
                q.preflight(xi.iter().map(|v| v.abs()).max().unwrap()).unwrap();
                let got = decode_logits(&q, &oracle_forward_int(&q, &xi).unwrap());
                let want = m.forward(&x).unwrap();
                let scale = want.iter().map(|v| v.abs()).fold(1.0, f64::max);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() <= 0.01 * scale, "{act}: {g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn error_shrinks_with_delta() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut ratios = Vec::new();
        for _ in 0..30 {
            let m = random_model(&mut rng, &[5, 4, 3], ActivationKind::None);
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let want = m.forward(&x).unwrap();
            let err = |delta: u64| {
                let q = quantize(&m, &FixedPointCodec::new(delta, t60()).unwrap()).unwrap();
                let got = decode_logits(&q, &oracle_forward_int(&q, &q.quantize_input(&x).unwrap()).unwrap());
                got.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max)
            };
            let (coarse, fine) = (err(1 << 8), err(1 << 9));
            if coarse > 0.0 {
                ratios.push(fine / coarse);
            }
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[ratios.len() / 2];
        assert!(median < 0.75, "median error ratio {median}");
    }

    #[test]
    fn overflow_preflight_catches_wraparound() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let t = 100_000_007;
        let codec = FixedPointCodec::new(16, t).unwrap();
        let (mut caught, mut passed) = (0, 0);
        for _ in 0..50 {
            let m = random_model(&mut rng, &[4, 4, 2], ActivationKind::SquarePlusTwo);
            let q = quantize(&m, &codec).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xi = q.quantize_input(&x).unwrap();
            let bound = xi.iter().map(|v| v.abs()).max().unwrap();
            if q.preflight(bound).is_err() {
                caught += 1;
                continue;
            }
            // passed preflight: the modular result equals exact integer arithmetic
            passed += 1;
            let got = oracle_forward_int(&q, &xi).unwrap();
            let exact = exact_forward(&q, &xi);
            assert_eq!(got, exact.iter().map(|&v| mod_t(v, t)).collect::<Vec<_>>());
            assert!(exact.iter().all(|v| v.abs() <= codec.max_magnitude()));
        }
        assert!(caught > 0 && passed > 0, "{caught} caught, {passed} passed");
    }

    fn exact_forward(q: &QuantizedModel, x: &[i128]) -> Vec<i128> {
        let mut a = x.to_vec();
        for l in &q.layers {
            a = l
                .weights
                .iter()
                .zip(&l.bias)
                .map(|(row, &b)| {
                    let z = row.iter().zip(&a).map(|(&w, &v)| w as i128 * v).sum::<i128>() + b;
                    match l.activation {
                        ActivationKind::None => z,
                        ActivationKind::Relu => z.max(0),
                        ActivationKind::SquarePlusTwo => {
                            z * z + 2 * q.codec.scale_pow(l.scale.bias).unwrap() * z
                        }
                    }
                })
                .collect();
        }
        a
    }

    #[test]
    fn digits_argmax_agrees_at_delta_2_10() {
        use crate::nn::{train_sgd, Architecture, TrainConfig};
        let data = Dataset::digits().pooled(2).unwrap();
        let (train, test) = data.split(0.8, 1);
        let arch = Architecture::classifier(16, 12, 10, ActivationKind::Relu);
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let m = train_sgd(&train, None, &arch, &cfg).unwrap().model;
        let q = quantize(&m, &FixedPointCodec::new(1 << 10, t60()).unwrap()).unwrap();
        let mut agree = 0;
        for x in &test.features {
            let xi = q.quantize_input(x).unwrap();
            let o = decode_logits(&q, &oracle_forward_int(&q, &xi).unwrap());
            agree += (argmax(&o) == m.predict(x).unwrap()) as usize;
        }
        assert!(agree as f64 >= 0.99 * test.len() as f64, "{agree}/{}", test.len());
    }
}
