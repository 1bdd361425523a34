//! Model protection: encrypting in-scope parameters, deployment packages,
//! and the backend key vault.

mod package;
mod vault;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;

use crate::bfv::{BfvContext, Ciphertext, KeySet, Plaintext, PublicKey};
use crate::codec::{ByteReader, ByteWriter};
use crate::encode::FixedPointCodec;
use crate::error::{Error, Result};
use crate::nn::{ActivationKind, LayerScale, QuantizedLayer, QuantizedModel};

pub use package::{build_package, cleartext_weight_hits, DeploymentPackage, PACKAGE_MAGIC, PACKAGE_VERSION};
pub use vault::{KeyVaultRecord, Vault};

/// Which layers carry encrypted parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncryptionScope {
    LastLayer,
    Full,
}

impl EncryptionScope {
    pub fn as_str(self) -> &'static str {
        match self {
            EncryptionScope::LastLayer => "last",
            EncryptionScope::Full => "full",
        }
    }

    /// Index of the first encrypted layer in a model with `layers` layers.
    pub fn first_encrypted(self, layers: usize) -> usize {
        match self {
            EncryptionScope::LastLayer => layers.saturating_sub(1),
            EncryptionScope::Full => 0,
        }
    }
}

impl fmt::Display for EncryptionScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncryptionScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" | "last_layer" | "last_layer_only" => Ok(EncryptionScope::LastLayer),
            "full" | "full_classifier" => Ok(EncryptionScope::Full),
            other => Err(Error::Usage(format!("unknown scope {other:?}"))),
        }
    }
}

/// One ciphertext per scalar; every slot holds the same value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedLayer {
    pub weights: Vec<Vec<Ciphertext>>,
    pub bias: Vec<Ciphertext>,
    pub activation: ActivationKind,
    pub scale: LayerScale,
}

impl EncryptedLayer {
    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.weights.len()
    }

    pub fn ciphertexts(&self) -> impl Iterator<Item = &Ciphertext> {
        self.weights.iter().flatten().chain(&self.bias)
    }

    pub fn ciphertexts_mut(&mut self) -> impl Iterator<Item = &mut Ciphertext> {
        self.weights.iter_mut().flatten().chain(self.bias.iter_mut())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtectedLayer {
    Plain(QuantizedLayer),
    Encrypted(EncryptedLayer),
}

impl ProtectedLayer {
    pub fn scale(&self) -> LayerScale {
        match self {
            ProtectedLayer::Plain(l) => l.scale,
            ProtectedLayer::Encrypted(l) => l.scale,
        }
    }

    pub fn activation(&self) -> ActivationKind {
        match self {
            ProtectedLayer::Plain(l) => l.activation,
            ProtectedLayer::Encrypted(l) => l.activation,
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            ProtectedLayer::Plain(l) => l.outputs(),
            ProtectedLayer::Encrypted(l) => l.outputs(),
        }
    }

    pub fn is_encrypted(&self) -> bool {
        matches!(self, ProtectedLayer::Encrypted(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtectedModel {
    pub name: String,
    pub scope: EncryptionScope,
    pub codec: FixedPointCodec,
    pub input_dim: usize,
    pub class_count: usize,
    pub layers: Vec<ProtectedLayer>,
    pub params_id: u64,
}

impl ProtectedModel {
    pub fn first_encrypted(&self) -> usize {
        self.scope.first_encrypted(self.layers.len())
    }

    pub fn output_scale(&self) -> crate::encode::ScaleState {
        crate::encode::ScaleState::new(self.layers.last().map_or(1, |l| l.scale().output))
    }

    pub fn ciphertext_count(&self) -> usize {
        self.encrypted_layers().map(|l| l.ciphertexts().count()).sum()
    }

    pub fn ciphertext_bytes(&self) -> usize {
        self.encrypted_layers()
            .flat_map(|l| l.ciphertexts())
            .map(Ciphertext::byte_size)
            .sum()
    }

    pub fn encrypted_layers(&self) -> impl Iterator<Item = &EncryptedLayer> {
        self.layers.iter().filter_map(|l| match l {
            ProtectedLayer::Encrypted(e) => Some(e),
            ProtectedLayer::Plain(_) => None,
        })
    }

    /// Moves every ciphertext to the evaluation domain (what the engine wants).
    pub fn to_evaluation(&mut self, ctx: &BfvContext) {
        for layer in &mut self.layers {
            if let ProtectedLayer::Encrypted(e) = layer {
                for ct in e.ciphertexts_mut() {
                    ctx.to_evaluation(ct);
                }
            }
        }
    }

    /// Decrypts every parameter back to signed integers (vault-side check).
    pub fn decrypt_parameters(
        &self,
        ctx: &BfvContext,
        keys: &KeySet,
    ) -> Result<Vec<(Vec<Vec<i128>>, Vec<i128>)>> {
        let dec = |ct: &Ciphertext| -> Result<i128> {
            let pt = ctx.decrypt(ct, &keys.secret_key)?;
            Ok(self.codec.from_slot(pt.coeffs()[0]))
        };
        self.layers
            .iter()
            .map(|l| match l {
                ProtectedLayer::Plain(q) => Ok((
                    q.weights
                        .iter()
                        .map(|r| r.iter().map(|&w| w as i128).collect())
                        .collect(),
                    q.bias.clone(),
                )),
                ProtectedLayer::Encrypted(e) => Ok((
                    e.weights
                        .iter()
                        .map(|r| r.iter().map(dec).collect::<Result<Vec<_>>>())
                        .collect::<Result<Vec<_>>>()?,
                    e.bias.iter().map(dec).collect::<Result<Vec<_>>>()?,
                )),
            })
            .collect()
    }

    pub(crate) fn write_header(&self, w: &mut ByteWriter) {
        w.str(&self.name)
            .u8(match self.scope {
                EncryptionScope::LastLayer => 0,
                EncryptionScope::Full => 1,
            })
            .u64(self.codec.scale())
            .u64(self.codec.plain_modulus())
            .u64(self.input_dim as u64)
            .u64(self.class_count as u64)
            .u64(self.params_id)
            .u32(self.layers.len() as u32);
    }

    pub(crate) fn read_header(r: &mut ByteReader<'_>) -> Result<(Self, usize)> {
        let name = r.string("model name")?;
        let scope = match r.u8("scope")? {
            0 => EncryptionScope::LastLayer,
            1 => EncryptionScope::Full,
            s => return Err(Error::Format(format!("unknown scope tag {s}"))),
        };
        let codec = FixedPointCodec::new(r.u64("codec scale")?, r.u64("codec modulus")?)?;
        let model = ProtectedModel {
            name,
            scope,
            codec,
            input_dim: r.u64("input dim")? as usize,
            class_count: r.u64("class count")? as usize,
            layers: Vec::new(),
            params_id: r.u64("params id")?,
        };
        let count = r.u32("layer count")? as usize;
        Ok((model, count))
    }
}

fn activation_tag(a: ActivationKind) -> u8 {
    match a {
        ActivationKind::Relu => 0,
        ActivationKind::SquarePlusTwo => 1,
        ActivationKind::None => 2,
    }
}

fn activation_from_tag(t: u8) -> Result<ActivationKind> {
    match t {
        0 => Ok(ActivationKind::Relu),
        1 => Ok(ActivationKind::SquarePlusTwo),
        2 => Ok(ActivationKind::None),
        t => Err(Error::Format(format!("unknown activation tag {t}"))),
    }
}

impl ProtectedLayer {
    pub(crate) fn write(&self, w: &mut ByteWriter) {
        let s = self.scale();
        let (kind, outputs, inputs) = match self {
            ProtectedLayer::Plain(l) => (0u8, l.outputs(), l.inputs()),
            ProtectedLayer::Encrypted(l) => (1u8, l.outputs(), l.inputs()),
        };
        w.u8(kind)
            .u8(activation_tag(self.activation()))
            .u32(s.input)
            .u32(s.weight)
            .u32(s.bias)
            .u32(s.output)
            .u32(outputs as u32)
            .u32(inputs as u32);
        match self {
            ProtectedLayer::Plain(l) => {
                for &v in l.weights.iter().flatten() {
                    w.i64(v);
                }
                for &b in &l.bias {
                    w.i128(b);
                }
            }
            ProtectedLayer::Encrypted(l) => {
                for ct in l.ciphertexts() {
                    ct.write(w);
                }
            }
        }
    }

    pub(crate) fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let kind = r.u8("layer kind")?;
        let activation = activation_from_tag(r.u8("activation")?)?;
        let scale = LayerScale {
            input: r.u32("input power")?,
            weight: r.u32("weight power")?,
            bias: r.u32("bias power")?,
            output: r.u32("output power")?,
        };
        let outputs = r.u32("layer outputs")? as usize;
        let inputs = r.u32("layer inputs")? as usize;
        match kind {
            0 => {
                let weights = (0..outputs)
                    .map(|_| (0..inputs).map(|_| r.i64("weight")).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                let bias = (0..outputs).map(|_| r.i128("bias")).collect::<Result<Vec<_>>>()?;
                Ok(ProtectedLayer::Plain(QuantizedLayer {
                    weights,
                    bias,
                    activation,
                    scale,
                }))
            }
            1 => {
                let weights = (0..outputs)
                    .map(|_| (0..inputs).map(|_| Ciphertext::read(r)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                let bias = (0..outputs).map(|_| Ciphertext::read(r)).collect::<Result<Vec<_>>>()?;
                Ok(ProtectedLayer::Encrypted(EncryptedLayer {
                    weights,
                    bias,
                    activation,
                    scale,
                }))
            }
            k => Err(Error::Format(format!("unknown layer kind {k}"))),
        }
    }
}

/// Cost of protecting one model.
#[derive(Clone, Debug, PartialEq)]
pub struct EncryptionReport {
    pub seconds: f64,
    /// Encrypted scalar parameters.
    pub parameter_count: usize,
    /// Those parameters as 8-byte integers.
    pub plaintext_bytes: usize,
    /// Raw residue bytes of their ciphertexts.
    pub ciphertext_bytes: usize,
    pub ratio: f64,
}

/// Encrypts every parameter of the in-scope layers under `public_key`.
pub fn protect_model<R: Rng + ?Sized>(
    qmodel: &QuantizedModel,
    scope: EncryptionScope,
    ctx: &BfvContext,
    public_key: &PublicKey,
    rng: &mut R,
) -> Result<(ProtectedModel, EncryptionReport)> {
    let t = ctx.plain_modulus();
    if qmodel.plain_modulus() != t {
        return Err(Error::Usage(format!(
            "model quantized for t = {}, parameters use t = {t}",
            qmodel.plain_modulus()
        )));
    }
    if public_key.params_id() != ctx.params_id() {
        return Err(Error::Usage("public key belongs to other parameters".into()));
    }
    if qmodel.layers.is_empty() {
        return Err(Error::Dimension("model without layers".into()));
    }
    let first = scope.first_encrypted(qmodel.layers.len());
    for (i, l) in qmodel.layers.iter().enumerate().skip(first) {
        if !l.activation.is_polynomial() {
            return Err(Error::UnsupportedLayer(format!(
                "layer {i} uses {} which cannot be evaluated on ciphertexts",
                l.activation
            )));
        }
    }
    let n = ctx.degree();
    let start = Instant::now();
    let mut encrypt = |v: i128| -> Result<Ciphertext> {
        let pt = Plaintext::constant(qmodel.codec.to_slot(v), n, t)?;
        ctx.encrypt(&pt, public_key, rng)
    };
    let mut layers = Vec::with_capacity(qmodel.layers.len());
    let mut count = 0;
    for (i, l) in qmodel.layers.iter().enumerate() {
        if i < first {
            layers.push(ProtectedLayer::Plain(l.clone()));
            continue;
        }
        let weights = l
            .weights
            .iter()
            .map(|row| row.iter().map(|&w| encrypt(w as i128)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let bias = l.bias.iter().map(|&b| encrypt(b)).collect::<Result<Vec<_>>>()?;
        count += l.outputs() * l.inputs() + l.outputs();
        layers.push(ProtectedLayer::Encrypted(EncryptedLayer {
            weights,
            bias,
            activation: l.activation,
            scale: l.scale,
        }));
    }
    let seconds = start.elapsed().as_secs_f64();
    let model = ProtectedModel {
        name: qmodel.name.clone(),
        scope,
        codec: qmodel.codec,
        input_dim: qmodel.input_dim,
        class_count: qmodel.class_count,
        layers,
        params_id: ctx.params_id(),
    };
    let ciphertext_bytes = model.ciphertext_bytes();
    let plaintext_bytes = count * 8;
    Ok((
        model,
        EncryptionReport {
            seconds,
            parameter_count: count,
            plaintext_bytes,
            ciphertext_bytes,
            ratio: ciphertext_bytes as f64 / plaintext_bytes.max(1) as f64,
        },
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::bfv::testing::toy;
    use crate::nn::{quantize, DenseLayer, ModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    pub(crate) fn small_qmodel(t: u64, hidden_act: ActivationKind) -> QuantizedModel {
        let m = ModelSpec::new(
            "small",
            vec![
                DenseLayer::new(
                    vec![vec![0.5, -0.25], vec![0.75, 1.0], vec![-1.0, 0.125]],
                    vec![0.25, 0.0, -0.5],
                    hidden_act,
                )
                .unwrap(),
                DenseLayer::new(
                    vec![vec![1.0, -0.5, 0.25], vec![0.0, 0.5, -1.0]],
                    vec![0.5, -0.25],
                    ActivationKind::None,
                )
                .unwrap(),
            ],
        )
        .unwrap();
        quantize(&m, &FixedPointCodec::new(2, t).unwrap()).unwrap()
    }

    #[test]
    fn scope_semantics_and_roundtrip() {
        let (ctx, keys) = toy();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let q = small_qmodel(97, ActivationKind::Relu);
        let (pm, report) =
            protect_model(&q, EncryptionScope::LastLayer, &ctx, &keys.public_key, &mut rng).unwrap();
        assert_eq!(pm.layers[0], ProtectedLayer::Plain(q.layers[0].clone()));
        assert!(pm.layers[1].is_encrypted());
        assert_eq!(report.parameter_count, 8);
        assert_eq!(pm.ciphertext_count(), 8);
        assert!(report.ratio > 1.0);
        let dec = pm.decrypt_parameters(&ctx, &keys).unwrap();
        for (l, (w, b)) in q.layers.iter().zip(&dec) {
            let qw: Vec<Vec<i128>> = l.weights.iter().map(|r| r.iter().map(|&v| v as i128).collect()).collect();
            assert_eq!(&qw, w);
            assert_eq!(&l.bias, b);
        }
    }

    #[test]
    fn full_scope_rejects_relu() {
        let (ctx, keys) = toy();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let q = small_qmodel(97, ActivationKind::Relu);
        assert!(matches!(
            protect_model(&q, EncryptionScope::Full, &ctx, &keys.public_key, &mut rng),
            Err(Error::UnsupportedLayer(_))
        ));
        let q = small_qmodel(97, ActivationKind::SquarePlusTwo);
        let (pm, _) = protect_model(&q, EncryptionScope::Full, &ctx, &keys.public_key, &mut rng).unwrap();
        assert!(pm.layers.iter().all(ProtectedLayer::is_encrypted));
        let wrong_t = small_qmodel(193, ActivationKind::None);
        assert!(protect_model(&wrong_t, EncryptionScope::Full, &ctx, &keys.public_key, &mut rng).is_err());
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("last".parse::<EncryptionScope>().unwrap(), EncryptionScope::LastLayer);
        assert_eq!("full".parse::<EncryptionScope>().unwrap(), EncryptionScope::Full);
        assert!("half".parse::<EncryptionScope>().is_err());
    }
}
