//! Wire DTOs shared by the gateway and its clients.

use fcac_core::admission::{Outcome, ReasonCode};
use fcac_core::envelope::{EnvelopeState, SessionState};
use fcac_core::jose::Jwk;
use fcac_core::policy::ExecutionTuple;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// Uniform error body for non-2xx responses: `{"error": "<code>"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
}

impl ApiError {
    pub fn new(code: impl Into<String>) -> Self {
        ApiError { error: code.into() }
    }
}

// ---- envelope ceremony ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BindInitRequest {
    pub participants: Vec<String>,
    pub quorum_k: u32,
    pub quorum_n: u32,
    /// Optional validity window; omitted bounds default to a 30-day
    /// window starting now.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbf: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exp: Option<i64>,
}

/// Envelope summary returned to the hub. Verification codes are absent
/// by construction: they travel only to each participant's admin via
/// `/verify-start`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BindInitResponse {
    pub envelope_id: Uuid,
    pub state: EnvelopeState,
    pub participants: Vec<String>,
    pub quorum_k: u32,
    pub quorum_n: u32,
    pub nbf: i64,
    pub exp: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyStartResponse {
    pub session_id: Uuid,
    pub envelope_id: Uuid,
    pub participant: String,
    /// Six-digit verification code, displayed out of band to the
    /// operator.
    pub code: String,
    pub expires_at: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimResponse {
    pub session_id: Uuid,
    pub envelope_id: Uuid,
    pub participant: String,
    pub state: SessionState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproveRequest {
    pub session_id: Uuid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproveResponse {
    pub envelope_id: Uuid,
    pub state: EnvelopeState,
    pub approvals: Vec<String>,
    pub quorum_k: u32,
    pub quorum_n: u32,
}

// ---- minting ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MintWireRequest {
    /// Handle of the issuer key in the gateway keystore. The key must be
    /// an active anchor belonging to the calling admin's organization.
    pub issuer_key_handle: String,
    pub holder_jwk: Jwk,
    pub profiles: Vec<String>,
    pub not_before: i64,
    pub not_after: i64,
    pub audience: String,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_scope: Option<String>,
    /// Explicit token id for reproducible runs; omitted draws randomly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jti: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MintWireResponse {
    /// Compact serialization of the minted token.
    pub ect: String,
    pub jti: String,
    pub issuer_thumbprint: String,
    pub holder_thumbprint: String,
}

// ---- admission ----

/// Body of `POST /admission/check`. The token and proof arrive in the
/// `Authorization: DPoP <ect>` and `DPoP: <proof>` headers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissionWireRequest {
    pub execution: ExecutionTuple,
    /// Backend parameters for the admitted operation (e.g. the digit to
    /// classify). Ignored on DENY.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ExecuteParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecuteParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digit: Option<u8>,
    /// Display identity of the requesting member; echoed by callers,
    /// ignored by the backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub who: Option<String>,
}

/// What the guarded backend returned for an admitted request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExecutionResult {
    /// Classification visible to the caller.
    Label { digit: u8, label: String },
    /// The cohort masks this class; the label is replaced by the
    /// `masked` marker.
    Masked { digit: u8, label: String },
    /// No model artifact exists for the envelope yet.
    ModelNotReady,
    /// Training wrote the model artifact.
    Trained { artifact: String },
    /// Generic acknowledged execution (non-ML operations).
    Done,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissionWireResponse {
    pub outcome: Outcome,
    pub reason: ReasonCode,
    pub decision_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_tuple_index: Option<usize>,
    /// Present exactly when the outcome is ALLOW.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ExecutionResult>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn execution_result_wire_shape() {
        let label = serde_json::to_value(ExecutionResult::Label {
            digit: 4,
            label: "4".to_string(),
        })
        .unwrap();
        assert_eq!(label["status"], "label");
        assert_eq!(label["digit"], 4);
        let masked = serde_json::to_value(ExecutionResult::Masked {
            digit: 3,
            label: "masked".to_string(),
        })
        .unwrap();
        assert_eq!(masked["status"], "masked");
        let not_ready = serde_json::to_value(ExecutionResult::ModelNotReady).unwrap();
        assert_eq!(not_ready["status"], "model_not_ready");
    }

    #[test]
    fn bind_init_response_has_no_code_field() {
        let value = serde_json::to_value(BindInitResponse {
            envelope_id: Uuid::nil(),
            state: EnvelopeState::PendingApprovals,
            participants: vec!["org:a".to_string()],
            quorum_k: 1,
            quorum_n: 1,
            nbf: 0,
            exp: 1,
        })
        .unwrap();
        let rendered = value.to_string();
        assert!(!rendered.contains("code"));
    }
}
