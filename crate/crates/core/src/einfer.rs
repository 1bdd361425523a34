//! Forward pass over a protected model.
//!
//! Slot `j` of every ciphertext belongs to sample `j` of the batch; neuron
//! `k` of a layer is one ciphertext. Layers before the encryption scope run
//! on plaintext integers. In plaintext-input mode the first in-scope layer
//! multiplies encrypted weights by batch-encoded plaintext activations; in
//! encrypted-input mode those activations are encrypted first and every
//! in-scope product is ciphertext by ciphertext.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::Rng;

use crate::codec::{ByteReader, ByteWriter};
use crate::bfv::{preset_table, BfvContext, Ciphertext, LiftedCiphertext, PublicKey, SecretKey};
use crate::encode::{compose_scales, BatchLayout, FixedPointCodec, ScaleOp, ScaleState};
use crate::error::{Error, Result};
use crate::nn::{argmax, ActivationKind, QuantizedLayer};
use crate::protect::{DeploymentPackage, EncryptedLayer, ProtectedLayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputMode {
    Plaintext,
    Encrypted,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Plaintext => "plain",
            InputMode::Encrypted => "encrypted",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "plaintext" | "plaintext_input" => Ok(InputMode::Plaintext),
            "encrypted" | "encrypted_input" => Ok(InputMode::Encrypted),
            other => Err(Error::Usage(format!("unknown mode {other:?}"))),
        }
    }
}

/// One ciphertext per neuron; slots are samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedActivations {
    pub cts: Vec<Ciphertext>,
    pub scale: ScaleState,
    /// Index of the layer that consumes these activations.
    pub layer: usize,
    pub batch: usize,
}

impl EncryptedActivations {
    pub fn byte_size(&self) -> usize {
        self.cts.iter().map(Ciphertext::byte_size).sum()
    }

    pub fn write(&self, w: &mut ByteWriter) {
        w.u32(self.layer as u32)
            .u64(self.batch as u64)
            .u32(self.scale.power)
            .u32(self.cts.len() as u32);
        for c in &self.cts {
            c.write(w);
        }
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let layer = r.u32("layer")? as usize;
        let batch = r.u64("batch")? as usize;
        let scale = ScaleState::new(r.u32("scale power")?);
        let count = r.u32("neuron count")? as usize;
        let cts = (0..count).map(|_| Ciphertext::read(r)).collect::<Result<Vec<_>>>()?;
        Ok(EncryptedActivations {
            cts,
            scale,
            layer,
            batch,
        })
    }
}

/// Plaintext residues, `slots[neuron][sample]`.
#[derive(Clone, Debug)]
struct PlainActivations {
    slots: Vec<Vec<u64>>,
    scale: ScaleState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub layer: usize,
    pub op_kind: String,
    /// Minimum over the step's output ciphertexts; `None` when no secret key
    /// was available to measure it.
    pub min_budget_bits: Option<u32>,
    pub elapsed_ms: f64,
    pub ciphertext_bytes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BudgetTrace {
    pub rows: Vec<TraceRow>,
}

impl BudgetTrace {
    pub const CSV_HEADER: &'static str = "layer,op_kind,min_budget_bits,elapsed_ms,ciphertext_bytes";

    pub fn final_budget(&self) -> Option<u32> {
        self.rows.iter().rev().find_map(|r| r.min_budget_bits)
    }

    pub fn total_ms(&self) -> f64 {
        self.rows.iter().map(|r| r.elapsed_ms).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            let budget = r.min_budget_bits.map(|b| b.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{:.3},{}",
                r.layer, r.op_kind, budget, r.elapsed_ms, r.ciphertext_bytes
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("ascii")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(Error::Format("budget trace header missing".into()));
        }
        let bad = |l: &str| Error::Format(format!("bad budget trace row {l:?}"));
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 5 {
                    return Err(bad(l));
                }
                Ok(TraceRow {
                    layer: f[0].parse().map_err(|_| bad(l))?,
                    op_kind: f[1].to_string(),
                    min_budget_bits: if f[2].is_empty() {
                        None
                    } else {
                        Some(f[2].parse().map_err(|_| bad(l))?)
                    },
                    elapsed_ms: f[3].parse().map_err(|_| bad(l))?,
                    ciphertext_bytes: f[4].parse().map_err(|_| bad(l))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BudgetTrace { rows })
    }
}

pub enum InferenceInput {
    /// Real-valued samples, `features[sample][feature]`.
    Features(Vec<Vec<f64>>),
    /// Activations already encrypted for the first in-scope layer.
    Encrypted(EncryptedActivations),
}

#[derive(Clone, Debug)]
pub struct InferenceOutput {
    pub logits: EncryptedActivations,
    pub trace: BudgetTrace,
    /// Set when a measured budget reached zero; decryption is then unreliable.
    pub exhausted: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecryptedOutput {
    /// `residues[sample][class]`, mod `t`.
    pub residues: Vec<Vec<u64>>,
    pub logits: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
    pub final_budget: u32,
}

/// Multiplicative levels the encrypted part of `package` consumes.
pub fn required_depth(package: &DeploymentPackage) -> u32 {
    package
        .model
        .layers
        .iter()
        .filter(|l| l.is_encrypted())
        .map(|l| 1 + u32::from(l.activation() == ActivationKind::SquarePlusTwo))
        .sum()
}

/// A loaded package ready to serve inference jobs. Shareable across threads.
pub struct Engine {
    ctx: Arc<BfvContext>,
    layout: BatchLayout,
    package: DeploymentPackage,
    /// Weights of each encrypted layer in the extended base, built on first use.
    lifted: Vec<OnceLock<Vec<Vec<LiftedCiphertext>>>>,
}

impl Engine {
    pub fn new(mut package: DeploymentPackage) -> Result<Self> {
        let ctx = BfvContext::new(package.params.clone())?;
        if ctx.params_id() != package.params_id() {
            return Err(Error::Format("package parameters do not match its fingerprint".into()));
        }
        package.model.to_evaluation(&ctx);
        let layout = BatchLayout::new(ctx.degree(), ctx.plain_modulus())?;
        let lifted = package.model.layers.iter().map(|_| OnceLock::new()).collect();
        Ok(Engine {
            ctx,
            layout,
            package,
            lifted,
        })
    }

    pub fn with_context(ctx: Arc<BfvContext>, mut package: DeploymentPackage) -> Result<Self> {
        if ctx.params_id() != package.params_id() {
            return Err(Error::Usage("context and package use different parameters".into()));
        }
        package.model.to_evaluation(&ctx);
        let layout = BatchLayout::new(ctx.degree(), ctx.plain_modulus())?;
        let lifted = package.model.layers.iter().map(|_| OnceLock::new()).collect();
        Ok(Engine {
            ctx,
            layout,
            package,
            lifted,
        })
    }

    pub fn context(&self) -> &Arc<BfvContext> {
        &self.ctx
    }

    pub fn package(&self) -> &DeploymentPackage {
        &self.package
    }

    pub fn slot_count(&self) -> usize {
        self.ctx.degree()
    }

    fn codec(&self) -> FixedPointCodec {
        self.package.model.codec
    }

    /// Warns when the parameters match a known preset whose measured depth is
    /// below what this model needs.
    pub fn preflight(&self) -> Vec<String> {
        let need = required_depth(&self.package);
        let known = preset_table()
            .iter()
            .find(|p| p.params().ok().as_ref() == Some(&self.package.params));
        match known {
            Some(p) if p.depth < need => vec![format!(
                "model needs {need} multiplicative levels, parameters are rated for {}",
                p.depth
            )],
            _ => Vec::new(),
        }
    }

    /// Quantizes and encrypts a batch at power 1 for layer `layer`.
    pub fn encrypt_input<R: Rng + ?Sized>(
        &self,
        batch: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<EncryptedActivations> {
        let plain = self.quantize_batch(batch)?;
        self.encrypt_plain(&plain, 0, batch.len(), &self.package.public_key, rng)
    }

    fn quantize_batch(&self, batch: &[Vec<f64>]) -> Result<PlainActivations> {
        let dim = self.package.model.input_dim;
        if batch.is_empty() || batch.len() > self.slot_count() {
            return Err(Error::Dimension(format!(
                "batch of {} samples for {} slots",
                batch.len(),
                self.slot_count()
            )));
        }
        let codec = self.codec();
        let mut slots = vec![Vec::with_capacity(batch.len()); dim];
        for (j, x) in batch.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::Dimension(format!(
                    "sample {j} has {} features, model expects {dim}",
                    x.len()
                )));
            }
            for (l, &v) in x.iter().enumerate() {
                slots[l].push(codec.to_slot(codec.quantize(v, 1)?));
            }
        }
        Ok(PlainActivations {
            slots,
            scale: ScaleState::new(1),
        })
    }

    fn encrypt_plain<R: Rng + ?Sized>(
        &self,
        acts: &PlainActivations,
        layer: usize,
        batch: usize,
        pk: &PublicKey,
        rng: &mut R,
    ) -> Result<EncryptedActivations> {
        let cts = acts
            .slots
            .iter()
            .map(|s| {
                let pt = self.layout.encode(s)?;
                let mut ct = self.ctx.encrypt(&pt, pk, rng)?;
                self.ctx.to_evaluation(&mut ct);
                Ok(ct)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncryptedActivations {
            cts,
            scale: acts.scale,
            layer,
            batch,
        })
    }

    fn plain_dense(&self, layer: &QuantizedLayer, acts: &PlainActivations) -> Result<PlainActivations> {
        check_input(layer.scale.input, acts.scale)?;
        let codec = self.codec();
        let batch = acts.slots.first().map_or(0, Vec::len);
        let mut out = vec![Vec::with_capacity(batch); layer.outputs()];
        let mut column = vec![0u64; acts.slots.len()];
        for j in 0..batch {
            for (c, s) in column.iter_mut().zip(&acts.slots) {
                *c = s[j];
            }
            for (o, v) in out.iter_mut().zip(crate::nn::layer_forward_mod(layer, &codec, &column)) {
                o.push(v);
            }
        }
        Ok(PlainActivations {
            slots: out,
            scale: ScaleState::new(layer.scale.output),
        })
    }

    /// Encrypted weights times plaintext activations.
    fn dense_ct_pt(&self, layer: &EncryptedLayer, acts: &PlainActivations) -> Result<Vec<Ciphertext>> {
        let prepared = acts
            .slots
            .iter()
            .map(|s| self.ctx.prepare_plain(&self.layout.encode(s)?))
            .collect::<Result<Vec<_>>>()?;
        layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, b)| {
                let mut acc = b.clone();
                for (w, p) in row.iter().zip(&prepared) {
                    self.ctx.add_assign(&mut acc, &self.ctx.multiply_prepared(w, p)?)?;
                }
                Ok(acc)
            })
            .collect()
    }

    /// Encrypted weights times encrypted activations, one relinearization per neuron.
    /// Lifts every encrypted weight up front so the first job does not pay
    /// for it. Optional; jobs lift lazily otherwise.
    pub fn prepare(&self) -> Result<()> {
        for (i, layer) in self.package.model.layers.iter().enumerate() {
            if let ProtectedLayer::Encrypted(e) = layer {
                self.lifted_weights(i, e)?;
            }
        }
        Ok(())
    }

    fn lifted_weights(&self, index: usize, layer: &EncryptedLayer) -> Result<&[Vec<LiftedCiphertext>]> {
        let cell = &self.lifted[index];
        if let Some(w) = cell.get() {
            return Ok(w);
        }
        let w = layer
            .weights
            .iter()
            .map(|row| row.iter().map(|w| self.ctx.lift(w)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        Ok(cell.get_or_init(|| w))
    }

    fn dense_ct_ct(&self, index: usize, layer: &EncryptedLayer, acts: &EncryptedActivations) -> Result<Vec<Ciphertext>> {
        let weights = self.lifted_weights(index, layer)?;
        let lifted = acts
            .cts
            .iter()
            .map(|c| self.ctx.lift(c))
            .collect::<Result<Vec<_>>>()?;
        let rk = &self.package.relin_keys;
        weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, b)| {
                let pairs: Vec<_> = row.iter().zip(&lifted).collect();
                let z = self.ctx.dot_product(&pairs, rk)?;
                self.ctx.add(&z, b)
            })
            .collect()
    }

    /// Plaintext integer weights times encrypted activations.
    fn dense_pt_ct(&self, layer: &QuantizedLayer, acts: &EncryptedActivations) -> Result<Vec<Ciphertext>> {
        let codec = self.codec();
        layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, &b)| {
                let bias = self.layout.encode_constant(codec.to_slot(b))?;
                let mut acc = self.ctx.add_plain(&self.ctx.zero_ciphertext(), &bias)?;
                for (&w, a) in row.iter().zip(&acts.cts) {
                    if w != 0 {
                        let p = self.ctx.multiply_scalar(a, codec.to_slot(w as i128))?;
                        self.ctx.add_assign(&mut acc, &p)?;
                    }
                }
                Ok(acc)
            })
            .collect()
    }

    /// `a² + (2Δ^k)·a` per neuron: `Δ^{2k}(x² + 2x)` at power `2k`.
    pub fn square_plus_two(&self, acts: &EncryptedActivations) -> Result<EncryptedActivations> {
        let k = acts.scale.power;
        let codec = self.codec();
        let two_dk = codec
            .scale_pow(k)
            .map(|d| codec.to_slot(2 * d))
            .ok_or_else(|| Error::QuantizationOverflow(format!("Δ^{k} does not fit")))?;
        let rk = &self.package.relin_keys;
        let cts = acts
            .cts
            .iter()
            .map(|a| {
                let sq = self.ctx.square(a, rk)?;
                self.ctx.add(&sq, &self.ctx.multiply_scalar(a, two_dk)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncryptedActivations {
            cts,
            scale: compose_scales(ScaleOp::Mul, acts.scale, acts.scale)?,
            layer: acts.layer,
            batch: acts.batch,
        })
    }

    /// Runs the model. `budget_key` is a diagnostic hook for trusted test and
    /// benchmark harnesses; the edge never has one.
    pub fn run<R: Rng + ?Sized>(
        &self,
        input: InferenceInput,
        mode: InputMode,
        budget_key: Option<&SecretKey>,
        rng: &mut R,
    ) -> Result<InferenceOutput> {
        let model = &self.package.model;
        let first = model.first_encrypted();
        let mut trace = BudgetTrace::default();
        let warnings = self.preflight();
        let measure = |cts: &[Ciphertext]| -> Result<Option<u32>> {
            match budget_key {
                None => Ok(None),
                Some(sk) => {
                    let mut min = u32::MAX;
                    for c in cts {
                        min = min.min(self.ctx.noise_budget(c, sk)?);
                    }
                    Ok(Some(min))
                }
            }
        };

        let (mut plain, mut enc, batch) = match input {
            InferenceInput::Features(batch) => (Some(self.quantize_batch(&batch)?), None, batch.len()),
            InferenceInput::Encrypted(acts) => {
                if mode != InputMode::Encrypted {
                    return Err(Error::Usage("encrypted input requires encrypted mode".into()));
                }
                if acts.layer != first || acts.cts.len() != width_into(model, first) {
                    return Err(Error::Dimension(format!(
                        "encrypted input is for layer {} with {} neurons",
                        acts.layer,
                        acts.cts.len()
                    )));
                }
                let b = acts.batch;
                (None, Some(acts), b)
            }
        };

        for (i, layer) in model.layers.iter().enumerate() {
            if i == first && mode == InputMode::Encrypted && enc.is_none() {
                let start = Instant::now();
                let p = plain.take().expect("plain activations before scope");
                let e = self.encrypt_plain(&p, i, batch, &self.package.public_key, rng)?;
                trace.rows.push(TraceRow {
                    layer: i,
                    op_kind: "encrypt_input".into(),
                    min_budget_bits: measure(&e.cts)?,
                    elapsed_ms: ms(start),
                    ciphertext_bytes: e.byte_size(),
                });
                enc = Some(e);
            }
            let start = Instant::now();
            let scale = layer.scale();
            match (layer, plain.as_ref(), enc.as_ref()) {
                (ProtectedLayer::Plain(q), Some(p), None) => {
                    plain = Some(self.plain_dense(q, p)?);
                    trace.rows.push(TraceRow {
                        layer: i,
                        op_kind: "plain_dense".into(),
                        min_budget_bits: None,
                        elapsed_ms: ms(start),
                        ciphertext_bytes: 0,
                    });
                    continue;
                }
                (ProtectedLayer::Encrypted(e), Some(p), None) => {
                    check_input(scale.input, p.scale)?;
                    let cts = self.dense_ct_pt(e, p)?;
                    enc = Some(self.finish_dense(i, cts, p.scale, &mut trace, "dense_ct_pt", start, batch, &measure)?);
                    plain = None;
                }
                (ProtectedLayer::Encrypted(e), None, Some(a)) => {
                    check_input(scale.input, a.scale)?;
                    let cts = self.dense_ct_ct(i, e, a)?;
                    enc = Some(self.finish_dense(i, cts, a.scale, &mut trace, "dense_ct_ct", start, batch, &measure)?);
                }
                (ProtectedLayer::Plain(q), None, Some(a)) => {
                    check_input(scale.input, a.scale)?;
                    let cts = self.dense_pt_ct(q, a)?;
                    enc = Some(self.finish_dense(i, cts, a.scale, &mut trace, "dense_pt_ct", start, batch, &measure)?);
                }
                _ => unreachable!("exactly one activation form is live"),
            }
            let acts = enc.take().expect("encrypted activations");
            let acts = match layer.activation() {
                ActivationKind::None => acts,
                ActivationKind::SquarePlusTwo => {
                    let start = Instant::now();
                    let out = self.square_plus_two(&acts)?;
                    trace.rows.push(TraceRow {
                        layer: i,
                        op_kind: "square_plus_two".into(),
                        min_budget_bits: measure(&out.cts)?,
                        elapsed_ms: ms(start),
                        ciphertext_bytes: out.byte_size(),
                    });
                    out
                }
                ActivationKind::Relu => {
                    return Err(Error::UnsupportedLayer(format!(
                        "layer {i}: ReLU cannot be evaluated on ciphertexts"
                    )))
                }
            };
            if acts.scale.power != scale.output {
                return Err(Error::ScaleMismatch {
                    left: acts.scale.power,
                    right: scale.output,
                });
            }
            enc = Some(EncryptedActivations { layer: i + 1, ..acts });
        }

        let logits = match (enc, plain) {
            (Some(e), _) => e,
            (None, Some(p)) => {
                // Nothing was in scope; cannot happen for a valid package.
                return Err(Error::Usage(format!(
                    "model produced plaintext logits at power {}",
                    p.scale.power
                )));
            }
            (None, None) => unreachable!(),
        };
        let exhausted = trace.final_budget() == Some(0);
        Ok(InferenceOutput {
            logits,
            trace,
            exhausted,
            warnings,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_dense(
        &self,
        layer: usize,
        cts: Vec<Ciphertext>,
        input: ScaleState,
        trace: &mut BudgetTrace,
        op_kind: &str,
        start: Instant,
        batch: usize,
        measure: &dyn Fn(&[Ciphertext]) -> Result<Option<u32>>,
    ) -> Result<EncryptedActivations> {
        let scale = self.package.model.layers[layer].scale();
        let z = compose_scales(ScaleOp::Mul, input, ScaleState::new(scale.weight))?;
        let z = compose_scales(ScaleOp::Add, z, ScaleState::new(scale.bias))?;
        let acts = EncryptedActivations {
            cts,
            scale: z,
            layer,
            batch,
        };
        trace.rows.push(TraceRow {
            layer,
            op_kind: op_kind.into(),
            min_budget_bits: measure(&acts.cts)?,
            elapsed_ms: ms(start),
            ciphertext_bytes: acts.byte_size(),
        });
        Ok(acts)
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn check_input(expected: u32, got: ScaleState) -> Result<()> {
    if expected != got.power {
        return Err(Error::ScaleMismatch {
            left: expected,
            right: got.power,
        });
    }
    Ok(())
}

fn width_into(model: &crate::protect::ProtectedModel, layer: usize) -> usize {
    match layer {
        0 => model.input_dim,
        i => model.layers[i - 1].outputs(),
    }
}

/// Decrypts logits; only the first `batch` slots are samples.
pub fn decrypt_output(
    ctx: &BfvContext,
    logits: &EncryptedActivations,
    secret_key: &SecretKey,
    codec: &FixedPointCodec,
) -> Result<DecryptedOutput> {
    let layout = BatchLayout::new(ctx.degree(), ctx.plain_modulus())?;
    let mut per_class = Vec::with_capacity(logits.cts.len());
    let mut final_budget = u32::MAX;
    for ct in &logits.cts {
        final_budget = final_budget.min(ctx.noise_budget(ct, secret_key)?);
        let slots = layout.decode(&ctx.decrypt(ct, secret_key)?)?;
        per_class.push(slots);
    }
    let residues: Vec<Vec<u64>> = (0..logits.batch)
        .map(|j| per_class.iter().map(|s| s[j]).collect())
        .collect();
    let logits_f: Vec<Vec<f64>> = residues.iter().map(|r| codec.decode(r, logits.scale)).collect();
    let classes = logits_f.iter().map(|l| argmax(l)).collect();
    Ok(DecryptedOutput {
        residues,
        logits: logits_f,
        classes,
        final_budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfv::testing::toy;
    use crate::bfv::{EncryptionParams, KeySet};
    use crate::modring::ntt_primes;
    use crate::nn::{oracle_forward_int, quantize, DenseLayer, ModelSpec, QuantizedModel};
    use crate::protect::{build_package, protect_model, EncryptionScope};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn engine_for(
        q: &QuantizedModel,
        scope: EncryptionScope,
        ctx: &Arc<BfvContext>,
        keys: &KeySet,
        rng: &mut ChaCha20Rng,
    ) -> Engine {
        let (pm, _) = protect_model(q, scope, ctx, &keys.public_key, rng).unwrap();
        let (pkg, _) = build_package("t", pm, ctx.params(), &keys.public_key, &keys.relin_keys).unwrap();
        Engine::with_context(ctx.clone(), pkg).unwrap()
    }

    #[test]
    fn one_by_one_layer() {
        let (ctx, keys) = toy();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let m = ModelSpec::new(
            "1x1",
            vec![DenseLayer::new(vec![vec![1.0]], vec![0.25], ActivationKind::None).unwrap()],
        )
        .unwrap();
        // Δ = 2: w = 2, b = 1 at power 2, x = 1.5 → a = 3, z = 7.
        let q = quantize(&m, &FixedPointCodec::new(2, 97).unwrap()).unwrap();
        assert_eq!(q.layers[0].bias, vec![1]);
        let engine = engine_for(&q, EncryptionScope::Full, &ctx, &keys, &mut rng);
        for mode in [InputMode::Plaintext, InputMode::Encrypted] {
            let out = engine
                .run(InferenceInput::Features(vec![vec![1.5]]), mode, Some(&keys.secret_key), &mut rng)
                .unwrap();
            let dec = decrypt_output(&ctx, &out.logits, &keys.secret_key, &q.codec).unwrap();
            assert_eq!(dec.residues, vec![vec![7]]);
            assert!(!out.exhausted);
        }
    }

    #[test]
    fn square_plus_two_identity() {
        // x = 0.5, Δ = 10 is not a power of two, so use the integers directly:
        // a = 5, Δ^k = 10 → 25 + 100 = 125.
        let (ctx, keys) = toy();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let layout = BatchLayout::new(ctx.degree(), ctx.plain_modulus()).unwrap();
        let sq = |a: u64, dk: u64, rng: &mut ChaCha20Rng| {
            let ct = ctx.encrypt(&layout.encode(&[a]).unwrap(), &keys.public_key, rng).unwrap();
            let s = ctx.square(&ct, &keys.relin_keys).unwrap();
            let r = ctx.add(&s, &ctx.multiply_scalar(&ct, 2 * dk % 97).unwrap()).unwrap();
            layout.decode(&ctx.decrypt(&r, &keys.secret_key).unwrap()).unwrap()[0]
        };
        assert_eq!(sq(5, 10, &mut rng), 125 % 97);
        // x = -1 at Δ = 4: a = -4 → 16 - 32 = -16 = Δ²·(-1)
        assert_eq!(sq(97 - 4, 4, &mut rng), 97 - 16);
    }

    #[test]
    fn zero_weights_give_bias() {
        let (ctx, keys) = toy();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let m = ModelSpec::new(
            "z",
            vec![DenseLayer::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![2.0, -3.0], ActivationKind::None)
                .unwrap()],
        )
        .unwrap();
        let q = quantize(&m, &FixedPointCodec::new(2, 97).unwrap()).unwrap();
        let engine = engine_for(&q, EncryptionScope::Full, &ctx, &keys, &mut rng);
        let out = engine
            .run(
                InferenceInput::Features(vec![vec![1.0, 2.0], vec![-1.0, 0.5]]),
                InputMode::Encrypted,
                None,
                &mut rng,
            )
            .unwrap();
        let dec = decrypt_output(&ctx, &out.logits, &keys.secret_key, &q.codec).unwrap();
        assert_eq!(dec.logits, vec![vec![2.0, -3.0], vec![2.0, -3.0]]);
        assert!(out.trace.rows.iter().all(|r| r.min_budget_bits.is_none()));
    }

    /// Small real preset so a two-level model fits; 1 ms-scale operations.
    fn real_ctx() -> (Arc<BfvContext>, KeySet) {
        let n = 1024;
        let t = ntt_primes(20, n, 1, &[]).unwrap()[0];
        let q = ntt_primes(55, n, 3, &[t]).unwrap();
        let params = EncryptionParams::insecure(n, q, t);
        let ctx = BfvContext::new(params).unwrap();
        let keys = ctx.keygen(&mut ChaCha20Rng::seed_from_u64(9));
        (ctx, keys)
    }

    fn random_model(rng: &mut ChaCha20Rng, act: ActivationKind, t: u64) -> QuantizedModel {
        let mut layer = |o: usize, i: usize, a| {
            let w = (0..o).map(|_| (0..i).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let b = (0..o).map(|_| rng.gen_range(-0.5..0.5)).collect();
            DenseLayer::new(w, b, a).unwrap()
        };
        let m = ModelSpec::new("r", vec![layer(3, 4, act), layer(2, 3, ActivationKind::None)]).unwrap();
        quantize(&m, &FixedPointCodec::new(4, t).unwrap()).unwrap()
    }

    #[test]
    fn matches_integer_oracle_all_variants() {
        let (ctx, keys) = real_ctx();
        let t = ctx.plain_modulus();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let cases = [
            (EncryptionScope::LastLayer, ActivationKind::Relu),
            (EncryptionScope::Full, ActivationKind::None),
            (EncryptionScope::Full, ActivationKind::SquarePlusTwo),
        ];
        for (scope, act) in cases {
            for _ in 0..2 {
                let q = random_model(&mut rng, act, t);
                let engine = engine_for(&q, scope, &ctx, &keys, &mut rng);
                let batch: Vec<Vec<f64>> = (0..5)
                    .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                for mode in [InputMode::Plaintext, InputMode::Encrypted] {
                    let out = engine
                        .run(InferenceInput::Features(batch.clone()), mode, Some(&keys.secret_key), &mut rng)
                        .unwrap();
                    assert!(!out.exhausted, "{scope} {act} {mode}");
                    let dec = decrypt_output(&ctx, &out.logits, &keys.secret_key, &q.codec).unwrap();
                    for (x, got) in batch.iter().zip(&dec.residues) {
                        let xi = q.quantize_input(x).unwrap();
                        assert_eq!(&oracle_forward_int(&q, &xi).unwrap(), got, "{scope} {act} {mode}");
                    }
                    let budgets: Vec<u32> = out.trace.rows.iter().filter_map(|r| r.min_budget_bits).collect();
                    assert!(budgets.windows(2).all(|w| w[0] >= w[1]), "{budgets:?}");
                    assert_eq!(out.trace.final_budget(), Some(dec.final_budget));
                }
            }
        }
    }

    #[test]
    fn relu_in_scope_is_rejected_and_batch_checked() {
        let (ctx, keys) = real_ctx();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let q = random_model(&mut rng, ActivationKind::Relu, ctx.plain_modulus());
        let engine = engine_for(&q, EncryptionScope::LastLayer, &ctx, &keys, &mut rng);
        let too_many = vec![vec![0.0; 4]; ctx.degree() + 1];
        assert!(engine
            .run(InferenceInput::Features(too_many), InputMode::Plaintext, None, &mut rng)
            .is_err());
        assert!(engine
            .run(InferenceInput::Features(vec![vec![1e9; 4]]), InputMode::Plaintext, None, &mut rng)
            .is_err());
    }

    #[test]
    fn trace_csv_roundtrip() {
        let trace = BudgetTrace {
            rows: vec![
                TraceRow {
                    layer: 0,
                    op_kind: "plain_dense".into(),
                    min_budget_bits: None,
                    elapsed_ms: 0.5,
                    ciphertext_bytes: 0,
                },
                TraceRow {
                    layer: 1,
                    op_kind: "dense_ct_ct".into(),
                    min_budget_bits: Some(17),
                    elapsed_ms: 12.25,
                    ciphertext_bytes: 4096,
                },
            ],
        };
        let csv = trace.to_csv();
        assert!(csv.starts_with("layer,op_kind,min_budget_bits,elapsed_ms,ciphertext_bytes\n"));
        assert_eq!(BudgetTrace::from_csv(&csv).unwrap(), trace);
    }
}
