//! Backend agent: protection, key generation, deployment, job submission and
//! decryption.

use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::wire::{
    parse_error_payload, read_frame, write_frame, Frame, FrameType, InferResponse, InferenceJob, JobInput,
    ReadOutcome,
};
use crate::bfv::{keygen, select_preset, BfvContext, Preset, SecurityLevel};
use crate::einfer::{decrypt_output, BudgetTrace, DecryptedOutput, Engine, InputMode};
use crate::encode::FixedPointCodec;
use crate::error::{Error, Result};
use crate::nn::{quantize, ActivationKind, ModelSpec, QuantizedModel};
use crate::protect::{
    build_package, protect_model, DeploymentPackage, EncryptionReport, EncryptionScope, KeyVaultRecord, Vault,
};

/// Choices that fix the encryption parameters of a protected model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtectOptions {
    pub level: SecurityLevel,
    pub scope: EncryptionScope,
    /// Fixed-point scale Δ (power of two).
    pub delta: u64,
    /// Largest absolute input feature value the model will see.
    pub input_range: f64,
    pub seed: u64,
}

impl Default for ProtectOptions {
    fn default() -> Self {
        ProtectOptions {
            level: SecurityLevel::Bits128,
            scope: EncryptionScope::LastLayer,
            delta: 1 << 10,
            input_range: 1.0,
            seed: 1,
        }
    }
}

/// Multiplicative levels consumed when `model` is encrypted under `scope`.
pub fn scope_depth(model: &ModelSpec, scope: EncryptionScope) -> u32 {
    let first = scope.first_encrypted(model.layers.len());
    model.layers[first..]
        .iter()
        .map(|l| 1 + u32::from(l.activation == ActivationKind::SquarePlusTwo))
        .sum()
}

/// Quantizes `model` and picks the smallest preset with enough depth and a
/// plaintext modulus wide enough for every worst-case intermediate.
pub fn plan_protection(model: &ModelSpec, opts: &ProtectOptions) -> Result<(Preset, QuantizedModel)> {
    // Bounds only depend on Δ; a huge odd modulus lets quantization succeed first.
    let wide = FixedPointCodec::new(opts.delta, (1 << 62) + 1)?;
    let q = quantize(model, &wide)?;
    let input_bound = wide.quantize(opts.input_range, 1)?.abs();
    let bits = q.required_plain_bits(input_bound);
    if bits > 60 {
        return Err(Error::QuantizationOverflow(format!(
            "worst-case intermediates need a {bits}-bit plaintext modulus (max 60); lower delta"
        )));
    }
    let preset = select_preset(opts.level.bits(), scope_depth(model, opts.scope), bits)?;
    let params = preset.params()?;
    let q = q.with_plain_modulus(params.plain_modulus)?;
    q.preflight(input_bound)?;
    Ok((preset, q))
}

/// Largest power-of-two Δ ≤ 2^10 whose worst-case intermediates fit a
/// 60-bit plaintext modulus under `opts` (whose own `delta` is ignored).
pub fn largest_delta(model: &ModelSpec, opts: &ProtectOptions) -> Result<u64> {
    let mut last = None;
    for bits in (1..=10).rev() {
        match plan_protection(model, &ProtectOptions { delta: 1 << bits, ..*opts }) {
            Ok(_) => return Ok(1 << bits),
            Err(e @ Error::QuantizationOverflow(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::QuantizationOverflow("no usable delta".into())))
}

/// Everything the protection step produces. `record` stays at the backend.
pub struct Protected {
    pub preset: Preset,
    pub qmodel: QuantizedModel,
    pub package: DeploymentPackage,
    pub package_bytes: Vec<u8>,
    pub record: KeyVaultRecord,
    pub report: EncryptionReport,
}

/// Quantize, generate keys, encrypt in-scope parameters and build the package.
pub fn protect_for_deployment(model: &ModelSpec, model_id: &str, opts: &ProtectOptions) -> Result<Protected> {
    let (preset, qmodel) = plan_protection(model, opts)?;
    let params = preset.params()?;
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let (ctx, keys) = keygen(&params, &mut rng)?;
    let (protected, report) = protect_model(&qmodel, opts.scope, &ctx, &keys.public_key, &mut rng)?;
    let (package, package_bytes) =
        build_package(model_id, protected, &params, &keys.public_key, &keys.relin_keys)?;
    Ok(Protected {
        preset,
        qmodel,
        package,
        package_bytes,
        record: KeyVaultRecord::new(model_id, params, keys),
        report,
    })
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Builds a job. In encrypted mode with the whole classifier in scope the
/// batch is encrypted here, so the edge never sees it; otherwise the edge
/// receives features and encrypts after its plaintext layers.
pub fn prepare_job<R: Rng + ?Sized>(
    engine: &Engine,
    job_id: u64,
    mode: InputMode,
    batch: Vec<Vec<f64>>,
    rng: &mut R,
) -> Result<InferenceJob> {
    let pkg = engine.package();
    let input = if mode == InputMode::Encrypted && pkg.model.first_encrypted() == 0 {
        JobInput::Encrypted(engine.encrypt_input(&batch, rng)?)
    } else {
        JobInput::Features(batch)
    };
    Ok(InferenceJob {
        job_id,
        model_id: pkg.model_id.clone(),
        mode,
        input,
        submitted_unix_ms: unix_ms(),
    })
}

/// One connection to an edge agent.
pub struct EdgeClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl EdgeClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let net = |source| Error::Network { job_id: 0, source };
        let stream = TcpStream::connect(addr).map_err(net)?;
        let _ = stream.set_nodelay(true);
        Ok(EdgeClient {
            reader: BufReader::new(stream.try_clone().map_err(net)?),
            writer: BufWriter::new(stream),
        })
    }

    /// Sends raw bytes (possibly not a valid frame) and reads one reply.
    pub fn send_raw(&mut self, bytes: &[u8], job_id: u64) -> Result<Frame> {
        use std::io::Write;
        let net = |source| Error::Network { job_id, source };
        self.writer.write_all(bytes).map_err(net)?;
        self.writer.flush().map_err(net)?;
        self.read_reply(job_id)
    }

    fn read_reply(&mut self, job_id: u64) -> Result<Frame> {
        match read_frame(&mut self.reader).map_err(|source| Error::Network { job_id, source })? {
            ReadOutcome::Frame(f) => Ok(f),
            ReadOutcome::Closed => Err(Error::Network {
                job_id,
                source: std::io::ErrorKind::ConnectionAborted.into(),
            }),
            ReadOutcome::Rejected(m) | ReadOutcome::Fatal(m) => Err(Error::Protocol(m)),
        }
    }

    fn request(&mut self, frame: &Frame, job_id: u64) -> Result<Frame> {
        write_frame(&mut self.writer, frame).map_err(|source| Error::Network { job_id, source })?;
        let reply = self.read_reply(job_id)?;
        if reply.frame_type() == Some(FrameType::Error) {
            let (_, msg) = parse_error_payload(&reply.payload)?;
            return Err(Error::Remote(msg));
        }
        Ok(reply)
    }

    pub fn deploy(&mut self, package_bytes: &[u8]) -> Result<String> {
        let reply = self.request(&Frame::new(FrameType::Deploy, package_bytes.to_vec()), 0)?;
        Ok(String::from_utf8_lossy(&reply.payload).into_owned())
    }

    pub fn status(&mut self) -> Result<String> {
        let reply = self.request(&Frame::new(FrameType::Status, Vec::new()), 0)?;
        Ok(String::from_utf8_lossy(&reply.payload).into_owned())
    }

    pub fn infer(&mut self, job: &InferenceJob) -> Result<InferResponse> {
        let reply = self.request(&Frame::new(FrameType::InferReq, job.to_bytes()), job.job_id)?;
        if reply.frame_type() != Some(FrameType::InferResp) {
            return Err(Error::Protocol(format!("expected INFER_RESP, got type {}", reply.kind)));
        }
        let resp = InferResponse::from_bytes(&reply.payload)?;
        if resp.job_id != job.job_id {
            return Err(Error::Protocol(format!(
                "response for job {} while waiting for {}",
                resp.job_id, job.job_id
            )));
        }
        Ok(resp)
    }
}

pub fn backend_deploy(addr: impl ToSocketAddrs, package_bytes: &[u8]) -> Result<String> {
    EdgeClient::connect(addr)?.deploy(package_bytes)
}

pub fn backend_infer(addr: impl ToSocketAddrs, job: &InferenceJob) -> Result<InferResponse> {
    let mut client = EdgeClient::connect(addr).map_err(|e| match e {
        Error::Network { source, .. } => Error::Network {
            job_id: job.job_id,
            source,
        },
        e => e,
    })?;
    client.infer(job)
}

/// Decrypts a response with the key of its model. The returned trace has the
/// final budget filled in.
pub fn backend_decrypt(resp: &InferResponse, vault: &Vault) -> Result<(DecryptedOutput, BudgetTrace)> {
    let record = vault.fetch(&resp.model_id)?;
    decrypt_with_record(resp, &record)
}

pub fn decrypt_with_record(resp: &InferResponse, record: &KeyVaultRecord) -> Result<(DecryptedOutput, BudgetTrace)> {
    if record.model_id != resp.model_id
        || record.params.fingerprint() != resp.params_id
        || record.keys.public_key.fingerprint() != resp.key_fingerprint
    {
        return Err(Error::VaultMismatch(format!(
            "response for model {:?} (key {:016x}) does not belong to vault record {:?} (key {:016x})",
            resp.model_id,
            resp.key_fingerprint,
            record.model_id,
            record.keys.public_key.fingerprint()
        )));
    }
    let ctx = BfvContext::new(record.params.clone())?;
    let codec = FixedPointCodec::new(resp.codec_scale, record.params.plain_modulus)?;
    let out = decrypt_output(&ctx, &resp.logits, &record.keys.secret_key, &codec)?;
    let mut trace = resp.trace.clone();
    if let Some(last) = trace.rows.last_mut() {
        last.min_budget_bits = Some(out.final_budget);
    }
    Ok((out, trace))
}
