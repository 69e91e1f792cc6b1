//! Network-facing federation gateway.
//!
//! The gateway is the trust boundary of the deployment: it terminates
//! mutual TLS, derives an [`EdgeIdentity`] from the validated client
//! certificate, enforces per-route identity guards, and exposes the
//! governance surface:
//!
//! - envelope ceremony: `POST /beta/bind/init`, `GET /verify-start`,
//!   `GET /session/claim?code=`, `POST /beta/bind/approve`
//! - token issuance: `POST /mint_ect`
//! - admission: `POST /admission/check`
//! - guarded backend: `POST /predict_image` (internal dispatch only; the
//!   HTTP binding rejects every external caller)
//!
//! Admission decisions travel at the application level: the endpoint
//! answers HTTP 200 with an outcome object and records every decision in
//! the append-only decision log. The backend stub is invoked exactly once
//! per ALLOW and never on DENY.

pub mod backend;
pub mod config;
pub mod identity;
pub mod routes;
pub mod serve;
pub mod state;
pub mod wire;

use thiserror::Error;

pub use backend::Backend;
pub use config::{ForwardedConfig, GatewayConfig};
pub use identity::{EdgeIdentity, IdentitySource, Role};
pub use serve::RunningGateway;
pub use state::AppState;
pub use wire::{
    AdmissionWireRequest, AdmissionWireResponse, ApiError, ApproveRequest, ApproveResponse,
    BindInitRequest, BindInitResponse, ClaimResponse, ExecuteParams, ExecutionResult,
    MintWireRequest, MintWireResponse, VerifyStartResponse,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    /// Fatal startup problem: missing TLS material, certificate without a
    /// service identity, policy/audience mismatch, unreadable state files.
    #[error("config_error: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("tls: {0}")]
    Tls(String),
}
