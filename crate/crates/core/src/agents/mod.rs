//! Backend and edge agents and the protocol between them.

mod backend;
mod edge;
pub mod wire;

pub use backend::{
    backend_decrypt, backend_deploy, backend_infer, decrypt_with_record, largest_delta, plan_protection, prepare_job,
    protect_for_deployment, scope_depth, unix_ms, EdgeClient, ProtectOptions, Protected,
};
pub use edge::{edge_serve, run_job, spawn_edge, EdgeHandle, EdgeState};
pub use wire::{Frame, FrameType, InferResponse, InferenceJob, JobInput};
