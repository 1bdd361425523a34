//! Deployment package container.
//!
//! Layout: `CDPK`, version `u32`, section count `u32`, then a table of
//! `(tag[4], offset u64, length u64)` entries, the section bodies, and a
//! CRC-32 of everything before it.

use std::path::Path;

use super::{EncryptionScope, ProtectedLayer, ProtectedModel};
use crate::bfv::{contains_secret_key, EncryptionParams, PublicKey, RelinKeys};
use crate::codec::{ByteReader, ByteWriter};
use crate::encode::FixedPointCodec;
use crate::error::{Error, Result};
use crate::nn::QuantizedModel;
use crate::storage::write_atomic;

pub const PACKAGE_MAGIC: &[u8; 4] = b"CDPK";
pub const PACKAGE_VERSION: u32 = 1;

const PARAMS: &[u8; 4] = b"PARM";
const PUBLIC_KEY: &[u8; 4] = b"PUBK";
const RELIN_KEYS: &[u8; 4] = b"RELN";
const CODEC: &[u8; 4] = b"CODC";
const MODEL: &[u8; 4] = b"MODL";
const LAYER: &[u8; 4] = b"LAYR";

/// Everything the edge needs: the protected model and public material only.
#[derive(Clone, Debug, PartialEq)]
pub struct DeploymentPackage {
    pub model_id: String,
    pub params: EncryptionParams,
    pub public_key: PublicKey,
    pub relin_keys: RelinKeys,
    pub model: ProtectedModel,
}

/// Assembles a package and refuses to emit one that carries secret material.
pub fn build_package(
    model_id: &str,
    model: ProtectedModel,
    params: &EncryptionParams,
    public_key: &PublicKey,
    relin_keys: &RelinKeys,
) -> Result<(DeploymentPackage, Vec<u8>)> {
    let id = params.fingerprint();
    if model.params_id != id || public_key.params_id() != id || relin_keys.params_id() != id {
        return Err(Error::Usage("package parts belong to different parameter sets".into()));
    }
    if model.codec.plain_modulus() != params.plain_modulus {
        return Err(Error::Usage("codec modulus differs from the plaintext modulus".into()));
    }
    let package = DeploymentPackage {
        model_id: model_id.to_string(),
        params: params.clone(),
        public_key: public_key.clone(),
        relin_keys: relin_keys.clone(),
        model,
    };
    let bytes = package.to_bytes();
    if contains_secret_key(&bytes) {
        return Err(Error::Security("secret key material found in deployment package".into()));
    }
    Ok((package, bytes))
}

impl DeploymentPackage {
    pub fn params_id(&self) -> u64 {
        self.model.params_id
    }

    pub fn codec(&self) -> FixedPointCodec {
        self.model.codec
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(&[u8; 4], Vec<u8>)> = Vec::new();
        sections.push((PARAMS, self.params.to_bytes()));
        let mut w = ByteWriter::new();
        self.public_key.write(&mut w);
        sections.push((PUBLIC_KEY, w.finish()));
        let mut w = ByteWriter::new();
        self.relin_keys.write(&mut w);
        sections.push((RELIN_KEYS, w.finish()));
        let mut w = ByteWriter::new();
        w.u64(self.model.codec.scale()).u64(self.model.codec.plain_modulus());
        sections.push((CODEC, w.finish()));
        let mut w = ByteWriter::new();
        w.str(&self.model_id);
        self.model.write_header(&mut w);
        sections.push((MODEL, w.finish()));
        for layer in &self.model.layers {
            let mut w = ByteWriter::new();
            layer.write(&mut w);
            sections.push((LAYER, w.finish()));
        }

        let table_len = 4 + 4 + 4 + sections.len() * 20;
        let mut out = ByteWriter::new();
        out.raw(PACKAGE_MAGIC).u32(PACKAGE_VERSION).u32(sections.len() as u32);
        let mut offset = table_len as u64;
        for (tag, body) in &sections {
            out.raw(*tag).u64(offset).u64(body.len() as u64);
            offset += body.len() as u64;
        }
        for (_, body) in &sections {
            out.raw(body);
        }
        let mut bytes = out.finish();
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != PACKAGE_MAGIC {
            return Err(Error::Format("not a deployment package".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = ByteReader::new(body, "package header");
        r.raw(4, "magic")?;
        let version = r.u32("package version")?;
        if version != PACKAGE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: PACKAGE_VERSION,
            });
        }
        let count = r.u32("section count")? as usize;
        let mut sections = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let tag: [u8; 4] = r.raw(4, "section tag")?.try_into().expect("4 bytes");
            let offset = r.u64("section offset")? as usize;
            let len = r.u64("section length")? as usize;
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= body.len())
                .ok_or_else(|| Error::Format("section outside package".into()))?;
            sections.push((tag, &body[offset..end]));
        }
        let find = |tag: &[u8; 4]| -> Result<&[u8]> {
            sections
                .iter()
                .find(|(t, _)| t == tag)
                .map(|(_, b)| *b)
                .ok_or_else(|| Error::Format(format!("missing section {}", String::from_utf8_lossy(tag))))
        };

        let params = EncryptionParams::from_bytes(find(PARAMS)?)?;
        let mut r = ByteReader::new(find(PUBLIC_KEY)?, "public key section");
        let public_key = PublicKey::read(&mut r)?;
        r.expect_end()?;
        let mut r = ByteReader::new(find(RELIN_KEYS)?, "relin key section");
        let relin_keys = RelinKeys::read(&mut r)?;
        r.expect_end()?;
        let mut r = ByteReader::new(find(CODEC)?, "codec section");
        let codec = FixedPointCodec::new(r.u64("codec scale")?, r.u64("codec modulus")?)?;
        r.expect_end()?;
        let mut r = ByteReader::new(find(MODEL)?, "model section");
        let model_id = r.string("model id")?;
        let (mut model, layer_count) = ProtectedModel::read_header(&mut r)?;
        r.expect_end()?;
        if model.codec != codec {
            return Err(Error::Format("codec section disagrees with model header".into()));
        }
        let layer_bodies: Vec<&[u8]> = sections
            .iter()
            .filter(|(t, _)| t == LAYER)
            .map(|(_, b)| *b)
            .collect();
        if layer_bodies.len() != layer_count {
            return Err(Error::Format(format!(
                "model declares {layer_count} layers, package has {}",
                layer_bodies.len()
            )));
        }
        for b in layer_bodies {
            let mut r = ByteReader::new(b, "layer section");
            model.layers.push(ProtectedLayer::read(&mut r)?);
            r.expect_end()?;
        }
        let package = DeploymentPackage {
            model_id,
            params,
            public_key,
            relin_keys,
            model,
        };
        package.check_consistency()?;
        Ok(package)
    }

    fn check_consistency(&self) -> Result<()> {
        let id = self.params.fingerprint();
        if self.model.params_id != id || self.public_key.params_id() != id || self.relin_keys.params_id() != id {
            return Err(Error::Format("package parts carry different parameter fingerprints".into()));
        }
        let mut width = self.model.input_dim;
        for (i, layer) in self.model.layers.iter().enumerate() {
            let (outputs, inputs) = match layer {
                ProtectedLayer::Plain(l) => (l.outputs(), l.inputs()),
                ProtectedLayer::Encrypted(l) => {
                    if l.ciphertexts().any(|c| c.params_id() != id) {
                        return Err(Error::Format(format!("layer {i} has foreign ciphertexts")));
                    }
                    (l.outputs(), l.inputs())
                }
            };
            if inputs != width {
                return Err(Error::Format(format!("layer {i} expects {inputs} inputs, gets {width}")));
            }
            width = outputs;
        }
        if width != self.model.class_count {
            return Err(Error::Format("last layer width differs from class count".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Counts in-scope weight rows whose cleartext encoding (signed 64-bit,
/// residue mod t, or float of the dequantized value) appears in `bytes`.
pub fn cleartext_weight_hits(bytes: &[u8], qmodel: &QuantizedModel, scope: EncryptionScope) -> usize {
    let first = scope.first_encrypted(qmodel.layers.len());
    let codec = qmodel.codec;
    let mut hits = 0;
    for layer in &qmodel.layers[first..] {
        for row in &layer.weights {
            if row.len() < 2 || row.iter().all(|&w| w == 0) {
                continue;
            }
            let encodings: [Vec<u8>; 3] = [
                row.iter().flat_map(|w| w.to_le_bytes()).collect(),
                row.iter()
                    .flat_map(|&w| codec.to_slot(w as i128).to_le_bytes())
                    .collect(),
                row.iter()
                    .flat_map(|&w| (w as f64 / codec.scale() as f64).to_le_bytes())
                    .collect(),
            ];
            for pattern in &encodings {
                if bytes.windows(pattern.len()).any(|w| w == &pattern[..]) {
                    hits += 1;
                }
            }
        }
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfv::testing::toy;
    use crate::nn::ActivationKind;
    use crate::protect::{protect_model, tests::small_qmodel};
    use crate::nn::{quantize, DenseLayer, ModelSpec};
    use rand::Rng;

    /// 8 → 4 → 3 with random weights; rows are long enough that a byte
    /// match cannot be structural coincidence.
    fn wide_qmodel(t: u64, seed: u64) -> QuantizedModel {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut layer = |outs: usize, ins: usize, act| {
            let w = (0..outs)
                .map(|_| (0..ins).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            DenseLayer::new(w, vec![0.0; outs], act).unwrap()
        };
        let m = ModelSpec::new(
            "wide",
            vec![layer(4, 8, ActivationKind::SquarePlusTwo), layer(3, 4, ActivationKind::None)],
        )
        .unwrap();
        quantize(&m, &FixedPointCodec::new(16, t).unwrap()).unwrap()
    }
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy_package(scope: EncryptionScope) -> (DeploymentPackage, Vec<u8>, QuantizedModel) {
        let (ctx, keys) = toy();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let q = wide_qmodel(97, 7);
        let (pm, _) = protect_model(&q, scope, &ctx, &keys.public_key, &mut rng).unwrap();
        let (pkg, bytes) =
            build_package("m1", pm, ctx.params(), &keys.public_key, &keys.relin_keys).unwrap();
        (pkg, bytes, q)
    }

    #[test]
    fn roundtrip_and_tamper() {
        for scope in [EncryptionScope::LastLayer, EncryptionScope::Full] {
            let (pkg, mut bytes, q) = toy_package(scope);
            assert_eq!(DeploymentPackage::from_bytes(&bytes).unwrap(), pkg);
            assert!(!contains_secret_key(&bytes));
            assert_eq!(cleartext_weight_hits(&bytes, &q, scope), 0);
            let mid = bytes.len() / 2;
            bytes[mid] ^= 0x01;
            assert!(matches!(
                DeploymentPackage::from_bytes(&bytes),
                Err(Error::Checksum { .. })
            ));
        }
    }

    #[test]
    fn plain_layers_are_visible_to_the_scan() {
        let (_, bytes, q) = toy_package(EncryptionScope::LastLayer);
        // Layer 0 is outside the scope and shipped as integers.
        let mut all = q.clone();
        all.layers.truncate(1);
        assert!(cleartext_weight_hits(&bytes, &all, EncryptionScope::Full) > 0);
    }

    #[test]
    fn truncated_and_foreign_inputs_rejected() {
        let (_, bytes, _) = toy_package(EncryptionScope::Full);
        assert!(DeploymentPackage::from_bytes(&bytes[..bytes.len() - 10]).is_err());
        assert!(DeploymentPackage::from_bytes(b"nope").is_err());
    }

    #[test]
    fn secret_material_blocks_the_build() {
        let (ctx, keys) = toy();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let q = small_qmodel(97, ActivationKind::SquarePlusTwo);
        let (mut pm, _) = protect_model(&q, EncryptionScope::Full, &ctx, &keys.public_key, &mut rng).unwrap();
        pm.name = String::from_utf8_lossy(crate::bfv::SECRET_KEY_MARKER).into_owned();
        assert!(matches!(
            build_package("m1", pm, ctx.params(), &keys.public_key, &keys.relin_keys),
            Err(Error::Security(_))
        ));
    }
}
