//! Framed TCP protocol between backend and edge.
//!
//! Frame: magic `CDNN`, version `u8`, type `u8`, payload length `u64` LE,
//! payload, CRC-32 (LE) of everything before it.

use std::io::{self, Read, Write};

use crate::codec::{ByteReader, ByteWriter};
use crate::einfer::{BudgetTrace, EncryptedActivations, InputMode};
use crate::error::{Error, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"CDNN";
pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
/// Larger frames are refused without reading them.
pub const MAX_PAYLOAD: u64 = 1 << 31;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Deploy = 1,
    InferReq = 2,
    InferResp = 3,
    Status = 4,
    Error = 5,
}

impl FrameType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => FrameType::Deploy,
            2 => FrameType::InferReq,
            3 => FrameType::InferResp,
            4 => FrameType::Status,
            5 => FrameType::Error,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, payload: Vec<u8>) -> Self {
        Frame {
            kind: kind as u8,
            payload,
        }
    }

    pub fn frame_type(&self) -> Option<FrameType> {
        FrameType::from_u8(self.kind)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() + 4);
        out.extend_from_slice(FRAME_MAGIC);
        out.push(WIRE_VERSION);
        out.push(self.kind);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }
}

/// Outcome of reading one frame off a stream.
#[derive(Debug)]
pub enum ReadOutcome {
    Frame(Frame),
    /// Clean end of stream before a header.
    Closed,
    /// The frame was consumed but is unusable; the stream is still in sync.
    Rejected(String),
    /// The stream cannot be resynchronized.
    Fatal(String),
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.to_bytes())?;
    w.flush()
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut read = 0;
    while read < buf.len() {
        match r.read(&mut buf[read..]) {
            Ok(0) if read == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => read += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<ReadOutcome> {
    let mut header = [0u8; HEADER_LEN];
    if !read_exact_or_eof(r, &mut header)? {
        return Ok(ReadOutcome::Closed);
    }
    if &header[..4] != FRAME_MAGIC {
        return Ok(ReadOutcome::Fatal("bad frame magic".into()));
    }
    let version = header[4];
    let kind = header[5];
    let len = u64::from_le_bytes(header[6..14].try_into().expect("8 bytes"));
    if len > MAX_PAYLOAD {
        return Ok(ReadOutcome::Fatal(format!("frame payload of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    let mut trailer = [0u8; 4];
    r.read_exact(&mut trailer)?;
    let stored = u32::from_le_bytes(trailer);
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&header);
    hasher.update(&payload);
    let computed = hasher.finalize();
    if stored != computed {
        return Ok(ReadOutcome::Rejected(format!(
            "frame checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    if version != WIRE_VERSION {
        return Ok(ReadOutcome::Rejected(format!("unsupported wire version {version}")));
    }
    Ok(ReadOutcome::Frame(Frame { kind, payload }))
}

/// Parses a complete frame from a buffer (tests and fuzzing).
pub fn parse_frame(bytes: &[u8]) -> Result<Frame> {
    let mut cursor = bytes;
    match read_frame(&mut cursor) {
        Ok(ReadOutcome::Frame(f)) if cursor.is_empty() => Ok(f),
        Ok(ReadOutcome::Frame(_)) => Err(Error::Protocol("trailing bytes after frame".into())),
        Ok(ReadOutcome::Closed) => Err(Error::Protocol("empty input".into())),
        Ok(ReadOutcome::Rejected(m)) | Ok(ReadOutcome::Fatal(m)) => Err(Error::Protocol(m)),
        Err(e) => Err(Error::Protocol(format!("truncated frame: {e}"))),
    }
}

/// Batch payload of an inference job.
#[derive(Clone, Debug, PartialEq)]
pub enum JobInput {
    Features(Vec<Vec<f64>>),
    Encrypted(EncryptedActivations),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceJob {
    pub job_id: u64,
    pub model_id: String,
    pub mode: InputMode,
    pub input: JobInput,
    pub submitted_unix_ms: u64,
}

impl InferenceJob {
    pub fn batch_len(&self) -> usize {
        match &self.input {
            JobInput::Features(f) => f.len(),
            JobInput::Encrypted(e) => e.batch,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.u64(self.job_id)
            .str(&self.model_id)
            .u8(mode_tag(self.mode))
            .u64(self.submitted_unix_ms);
        match &self.input {
            JobInput::Features(rows) => {
                let dim = rows.first().map_or(0, Vec::len);
                w.u8(0).u64(rows.len() as u64).u64(dim as u64);
                for &v in rows.iter().flatten() {
                    w.f64(v);
                }
            }
            JobInput::Encrypted(e) => {
                w.u8(1);
                e.write(&mut w);
            }
        }
        w.finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(b, "inference job");
        let job_id = r.u64("job id")?;
        let model_id = r.string("model id")?;
        let mode = mode_from_tag(r.u8("mode")?)?;
        let submitted_unix_ms = r.u64("timestamp")?;
        let input = match r.u8("input kind")? {
            0 => {
                let n = r.u64("batch")? as usize;
                let dim = r.u64("dim")? as usize;
                if n.saturating_mul(dim).saturating_mul(8) > r.remaining() {
                    return Err(Error::Format("inference job: batch larger than payload".into()));
                }
                let rows = (0..n)
                    .map(|_| (0..dim).map(|_| r.f64("feature")).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                JobInput::Features(rows)
            }
            1 => JobInput::Encrypted(EncryptedActivations::read(&mut r)?),
            k => return Err(Error::Format(format!("unknown input kind {k}"))),
        };
        r.expect_end()?;
        Ok(InferenceJob {
            job_id,
            model_id,
            mode,
            input,
            submitted_unix_ms,
        })
    }
}

fn mode_tag(m: InputMode) -> u8 {
    match m {
        InputMode::Plaintext => 0,
        InputMode::Encrypted => 1,
    }
}

fn mode_from_tag(t: u8) -> Result<InputMode> {
    match t {
        0 => Ok(InputMode::Plaintext),
        1 => Ok(InputMode::Encrypted),
        t => Err(Error::Format(format!("unknown mode tag {t}"))),
    }
}

/// What the edge returns: encrypted logits plus everything the backend needs
/// to pick the right key and decode them.
#[derive(Clone, Debug, PartialEq)]
pub struct InferResponse {
    pub job_id: u64,
    pub model_id: String,
    pub params_id: u64,
    pub key_fingerprint: u64,
    pub codec_scale: u64,
    pub mode: InputMode,
    pub logits: EncryptedActivations,
    pub trace: BudgetTrace,
    pub warnings: Vec<String>,
    pub edge_ms: f64,
}

impl InferResponse {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.u64(self.job_id)
            .str(&self.model_id)
            .u64(self.params_id)
            .u64(self.key_fingerprint)
            .u64(self.codec_scale)
            .u8(mode_tag(self.mode))
            .f64(self.edge_ms)
            .str(&self.trace.to_csv())
            .u32(self.warnings.len() as u32);
        for m in &self.warnings {
            w.str(m);
        }
        self.logits.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(b, "inference response");
        let job_id = r.u64("job id")?;
        let model_id = r.string("model id")?;
        let params_id = r.u64("params id")?;
        let key_fingerprint = r.u64("key fingerprint")?;
        let codec_scale = r.u64("codec scale")?;
        let mode = mode_from_tag(r.u8("mode")?)?;
        let edge_ms = r.f64("edge time")?;
        let trace = BudgetTrace::from_csv(&r.string("trace")?)?;
        let count = r.u32("warning count")? as usize;
        let warnings = (0..count).map(|_| r.string("warning")).collect::<Result<Vec<_>>>()?;
        let logits = EncryptedActivations::read(&mut r)?;
        r.expect_end()?;
        Ok(InferResponse {
            job_id,
            model_id,
            params_id,
            key_fingerprint,
            codec_scale,
            mode,
            logits,
            trace,
            warnings,
            edge_ms,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::storage::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// ERROR payload: job id (0 when none) and a message.
pub fn error_payload(job_id: u64, msg: &str) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u64(job_id).str(msg);
    w.finish()
}

pub fn parse_error_payload(b: &[u8]) -> Result<(u64, String)> {
    let mut r = ByteReader::new(b, "error frame");
    Ok((r.u64("job id")?, r.string("message")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn frame_roundtrip(kind in 0u8..=255, payload in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let f = Frame { kind, payload };
            let bytes = f.to_bytes();
            prop_assert_eq!(bytes.len(), HEADER_LEN + f.payload.len() + 4);
            prop_assert_eq!(parse_frame(&bytes).unwrap(), f);
        }

        #[test]
        fn any_single_bit_flip_is_caught(payload in proptest::collection::vec(any::<u8>(), 1..256), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
            let bytes = Frame::new(FrameType::Status, payload).to_bytes();
            let mut bad = bytes.clone();
            let i = pos.index(bytes.len());
            bad[i] ^= 1 << bit;
            prop_assert!(parse_frame(&bad).is_err());
        }

        #[test]
        fn feature_job_roundtrip(rows in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 3), 1..20), id in any::<u64>()) {
            let job = InferenceJob {
                job_id: id,
                model_id: "m".into(),
                mode: InputMode::Plaintext,
                input: JobInput::Features(rows),
                submitted_unix_ms: 5,
            };
            prop_assert_eq!(InferenceJob::from_bytes(&job.to_bytes()).unwrap(), job);
        }
    }

    #[test]
    fn stream_stays_in_sync_after_bad_crc() {
        let mut bad = Frame::new(FrameType::Status, b"one".to_vec()).to_bytes();
        let n = bad.len();
        bad[n - 1] ^= 0xff;
        let good = Frame::new(FrameType::Status, b"two".to_vec()).to_bytes();
        let stream: Vec<u8> = bad.into_iter().chain(good).collect();
        let mut cursor = &stream[..];
        assert!(matches!(read_frame(&mut cursor).unwrap(), ReadOutcome::Rejected(_)));
        match read_frame(&mut cursor).unwrap() {
            ReadOutcome::Frame(f) => assert_eq!(f.payload, b"two"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_frame(&mut cursor).unwrap(), ReadOutcome::Closed));
    }

    #[test]
    fn oversized_and_garbage_headers_are_fatal() {
        let mut h = Frame::new(FrameType::Deploy, vec![]).to_bytes();
        h[6..14].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(read_frame(&mut &h[..]).unwrap(), ReadOutcome::Fatal(_)));
        assert!(matches!(read_frame(&mut &b"XXXXXXXXXXXXXXXXXX"[..]).unwrap(), ReadOutcome::Fatal(_)));
    }

    #[test]
    fn error_payload_roundtrip() {
        let p = error_payload(42, "model \"x\" not found");
        assert_eq!(parse_error_payload(&p).unwrap(), (42, "model \"x\" not found".to_string()));
    }
}
