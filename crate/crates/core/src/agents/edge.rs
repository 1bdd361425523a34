//! Edge agent: stores deployment packages and runs inference on them.
//!
//! This module only ever sees public material. It has no access to the
//! vault and nothing here can decrypt.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::wire::{
    error_payload, read_frame, write_frame, Frame, FrameType, InferResponse, InferenceJob, JobInput,
    ReadOutcome,
};
use crate::einfer::{Engine, InferenceInput};
use crate::error::{Error, Result};
use crate::protect::DeploymentPackage;
use crate::storage::write_atomic;

/// Package store plus a cache of loaded engines.
pub struct EdgeState {
    data_dir: PathBuf,
    engines: RwLock<HashMap<String, Arc<Engine>>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl EdgeState {
    pub fn open(data_dir: impl AsRef<Path>) -> Result<Self> {
        let data_dir = data_dir.as_ref().to_path_buf();
        fs::create_dir_all(data_dir.join("models"))?;
        Ok(EdgeState {
            data_dir,
            engines: RwLock::new(HashMap::new()),
        })
    }

    fn package_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("models").join(format!("{id}.cdpk"))
    }

    /// Validates, stores (write-then-rename) and activates a package.
    pub fn deploy(&self, bytes: &[u8]) -> Result<String> {
        let package = DeploymentPackage::from_bytes(bytes)?;
        let id = package.model_id.clone();
        if !valid_id(&id) {
            return Err(Error::Usage(format!("invalid model id {id:?}")));
        }
        let engine = Arc::new(Engine::new(package)?);
        engine.prepare()?;
        write_atomic(&self.package_path(&id), bytes)?;
        self.engines.write().expect("engine map").insert(id.clone(), engine);
        Ok(id)
    }

    pub fn engine(&self, id: &str) -> Result<Arc<Engine>> {
        if let Some(e) = self.engines.read().expect("engine map").get(id) {
            return Ok(e.clone());
        }
        if !valid_id(id) {
            return Err(Error::NotFound(format!("model {id:?} is not deployed")));
        }
        let bytes = match fs::read(self.package_path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("model {id:?} is not deployed")))
            }
            Err(e) => return Err(e.into()),
        };
        let engine = Arc::new(Engine::new(DeploymentPackage::from_bytes(&bytes)?)?);
        self.engines
            .write()
            .expect("engine map")
            .insert(id.to_string(), engine.clone());
        Ok(engine)
    }

    pub fn deployed(&self) -> Result<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(self.data_dir.join("models"))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".cdpk").map(str::to_string)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn infer(&self, job: InferenceJob) -> Result<InferResponse> {
        let start = Instant::now();
        let engine = self.engine(&job.model_id)?;
        let mut resp = run_job(&engine, job)?;
        resp.edge_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(resp)
    }

    /// Answers one request frame.
    pub fn handle(&self, frame: Frame) -> Frame {
        let err = |job: u64, e: &Error| {
            Frame::new(
                FrameType::Error,
                error_payload(job, &format!("kind={} msg={e}", e.kind())),
            )
        };
        match frame.frame_type() {
            Some(FrameType::Deploy) => match self.deploy(&frame.payload) {
                Ok(id) => Frame::new(FrameType::Status, format!("deployed {id}").into_bytes()),
                Err(e) => err(0, &e),
            },
            Some(FrameType::InferReq) => {
                let job = match InferenceJob::from_bytes(&frame.payload) {
                    Ok(j) => j,
                    Err(e) => return err(0, &e),
                };
                let id = job.job_id;
                match self.infer(job) {
                    Ok(resp) => Frame::new(FrameType::InferResp, resp.to_bytes()),
                    Err(e) => err(id, &e),
                }
            }
            Some(FrameType::Status) => {
                let models = self.deployed().unwrap_or_default().join(",");
                Frame::new(FrameType::Status, format!("ok models={models}").into_bytes())
            }
            Some(FrameType::InferResp) | Some(FrameType::Error) | None => Frame::new(
                FrameType::Error,
                error_payload(0, &format!("kind=protocol msg=unexpected frame type {}", frame.kind)),
            ),
        }
    }
}

/// Runs one job on a loaded engine without any secret material.
pub fn run_job(engine: &Engine, job: InferenceJob) -> Result<InferResponse> {
    let start = Instant::now();
    let pkg = engine.package();
    if job.model_id != pkg.model_id {
        return Err(Error::NotFound(format!("model {:?} is not loaded", job.model_id)));
    }
    let input = match job.input {
        JobInput::Features(f) => InferenceInput::Features(f),
        JobInput::Encrypted(e) => InferenceInput::Encrypted(e),
    };
    let mut rng = ChaCha20Rng::from_entropy();
    let out = engine.run(input, job.mode, None, &mut rng)?;
    Ok(InferResponse {
        job_id: job.job_id,
        model_id: job.model_id,
        params_id: pkg.params_id(),
        key_fingerprint: pkg.public_key.fingerprint(),
        codec_scale: pkg.codec().scale(),
        mode: job.mode,
        logits: out.logits,
        trace: out.trace,
        warnings: out.warnings,
        edge_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn serve_connection(state: &EdgeState, stream: TcpStream) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let reply = match read_frame(&mut reader)? {
            ReadOutcome::Closed => return Ok(()),
            ReadOutcome::Frame(f) => state.handle(f),
            ReadOutcome::Rejected(msg) => {
                Frame::new(FrameType::Error, error_payload(0, &format!("kind=protocol msg={msg}")))
            }
            ReadOutcome::Fatal(msg) => {
                let f = Frame::new(FrameType::Error, error_payload(0, &format!("kind=protocol msg={msg}")));
                write_frame(&mut writer, &f)?;
                return Ok(());
            }
        };
        write_frame(&mut writer, &reply)?;
    }
}

/// A running edge server.
pub struct EdgeHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl EdgeHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for EdgeHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn accept_loop(listener: TcpListener, state: Arc<EdgeState>, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let state = state.clone();
        thread::spawn(move || {
            let _ = serve_connection(&state, stream);
        });
    }
}

/// Binds `addr` and serves in a background thread.
pub fn spawn_edge(addr: impl ToSocketAddrs, data_dir: impl AsRef<Path>) -> Result<EdgeHandle> {
    let state = Arc::new(EdgeState::open(data_dir)?);
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = thread::spawn(move || accept_loop(listener, state, flag));
    Ok(EdgeHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

/// Serves forever on the calling thread.
pub fn edge_serve(addr: impl ToSocketAddrs, data_dir: impl AsRef<Path>) -> Result<()> {
    let state = Arc::new(EdgeState::open(data_dir)?);
    let listener = TcpListener::bind(addr)?;
    eprintln!("edge listening on {}", listener.local_addr()?);
    accept_loop(listener, state, Arc::new(AtomicBool::new(false)));
    Ok(())
}
