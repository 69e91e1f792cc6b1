//! HTTP surface: guarded router construction and handlers.
//!
//! Routes can only be registered through [`GuardedRouter::route`], which
//! takes a [`Guard`] alongside the handler; there is no way to mount an
//! unguarded route. Guards run before handlers and see only the
//! [`EdgeIdentity`] the connection layer attached.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Json, Response};
use axum::routing::{get, post, MethodRouter};
use axum::{Extension, Router};
use serde_json::json;

use fcac_core::admission::{AdmissionRequest, Outcome};
use fcac_core::envelope::EnvelopeError;
use fcac_core::policy::ExecutionTuple;
use fcac_core::tokens::{mint_ect, parse_ect, MintRequest, TokenError};

use crate::identity::{EdgeIdentity, Role};
use crate::state::AppState;
use crate::wire::{
    AdmissionWireRequest, AdmissionWireResponse, ApiError, ApproveRequest, ApproveResponse,
    BindInitRequest, BindInitResponse, ClaimResponse, MintWireRequest, MintWireResponse,
    VerifyStartResponse,
};

/// Per-route identity constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guard {
    /// Only the hub certificate.
    HubOnly,
    /// Only organization administrator certificates.
    OrgAdminOnly,
    /// Any authenticated identity (hub, admin, or member).
    Authenticated,
    /// No network caller at all: the route exists for the internal
    /// dispatcher only and every external request is rejected.
    InternalOnly,
    /// No identity requirement (health only).
    Public,
}

/// Router builder that refuses unguarded registration by construction.
pub struct GuardedRouter {
    router: Router<Arc<AppState>>,
}

impl GuardedRouter {
    pub fn new() -> Self {
        GuardedRouter {
            router: Router::new(),
        }
    }

    pub fn route(mut self, path: &str, handler: MethodRouter<Arc<AppState>>, guard: Guard) -> Self {
        self.router = self.router.route(
            path,
            handler.layer(middleware::from_fn(move |req: Request, next: Next| {
                enforce(guard, req, next)
            })),
        );
        self
    }

    pub fn finish(self, state: Arc<AppState>) -> Router {
        self.router.with_state(state)
    }
}

impl Default for GuardedRouter {
    fn default() -> Self {
        Self::new()
    }
}

async fn enforce(guard: Guard, req: Request, next: Next) -> Response {
    let identity = req.extensions().get::<EdgeIdentity>();
    let rejection = match (guard, identity) {
        (Guard::Public, _) => None,
        // The internal route never admits a network caller, identified
        // or not; the dispatcher calls the backend in-process.
        (Guard::InternalOnly, _) => Some((StatusCode::FORBIDDEN, "internal_route_violation")),
        (_, None) => Some((StatusCode::FORBIDDEN, "identity_unknown")),
        (Guard::Authenticated, Some(_)) => None,
        (Guard::HubOnly, Some(id)) => match id.role {
            Role::Hub => None,
            _ => Some((StatusCode::FORBIDDEN, "identity_not_hub")),
        },
        (Guard::OrgAdminOnly, Some(id)) => match id.role {
            Role::OrgAdmin(_) => None,
            _ => Some((StatusCode::FORBIDDEN, "identity_not_admin")),
        },
    };
    match rejection {
        Some((status, code)) => (status, Json(ApiError::new(code))).into_response(),
        None => next.run(req).await,
    }
}

/// The full route table. Every route carries its guard here, in one
/// place.
pub fn build_router(state: Arc<AppState>) -> Router {
    GuardedRouter::new()
        .route("/healthz", get(health), Guard::Public)
        .route("/beta/bind/init", post(bind_init), Guard::HubOnly)
        .route("/verify-start", get(verify_start), Guard::OrgAdminOnly)
        .route("/session/claim", get(session_claim), Guard::HubOnly)
        .route("/beta/bind/approve", post(bind_approve), Guard::HubOnly)
        .route("/mint_ect", post(handle_mint), Guard::OrgAdminOnly)
        .route("/admission/check", post(handle_admission), Guard::Authenticated)
        .route("/predict_image", post(predict_image), Guard::InternalOnly)
        .finish(state)
}

// ---- helpers ----

fn envelope_error_response(e: &EnvelopeError) -> Response {
    let status = match e {
        EnvelopeError::IdentityNotHub | EnvelopeError::IdentityNotAdmin => StatusCode::FORBIDDEN,
        EnvelopeError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    };
    (status, Json(ApiError::new(e.to_string()))).into_response()
}

fn mint_error_code(e: &TokenError) -> &'static str {
    match e {
        TokenError::Malformed(_) => "malformed_request",
        TokenError::AnchorUnknown(_) => "anchor_unknown",
        TokenError::SignatureInvalid => "signature_invalid",
        TokenError::UnknownProfile(_) => "unknown_profile",
        TokenError::EmptyGrant => "empty_grant",
        TokenError::IssuerKeyInactive(_) => "issuer_key_inactive",
        TokenError::ValidityOutOfRange => "validity_out_of_range",
        TokenError::Keystore(_) => "keystore_error",
    }
}

// ---- handlers ----

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn bind_init(
    State(state): State<Arc<AppState>>,
    Extension(identity): Extension<EdgeIdentity>,
    Json(body): Json<BindInitRequest>,
) -> Response {
    let now = state.clock.now();
    let validity = match (body.nbf, body.exp) {
        (None, None) => None,
        (nbf, exp) => Some((nbf.unwrap_or(now), exp.unwrap_or(now + 30 * 24 * 3600))),
    };
    let mut envelopes = state.envelopes.lock().expect("envelope lock");
    match envelopes.bind_init(
        &identity.caller_role(),
        body.participants,
        body.quorum_k,
        body.quorum_n,
        validity,
        now,
    ) {
        Ok(envelope) => Json(BindInitResponse {
            envelope_id: envelope.envelope_id,
            state: envelope.state,
            participants: envelope.participants,
            quorum_k: envelope.quorum_k,
            quorum_n: envelope.quorum_n,
            nbf: envelope.nbf,
            exp: envelope.exp,
        })
        .into_response(),
        Err(e) => envelope_error_response(&e),
    }
}

async fn verify_start(
    State(state): State<Arc<AppState>>,
    Extension(identity): Extension<EdgeIdentity>,
) -> Response {
    let now = state.clock.now();
    let mut envelopes = state.envelopes.lock().expect("envelope lock");
    match envelopes.verify_start(&identity.caller_role(), now) {
        Ok(session) => Json(VerifyStartResponse {
            session_id: session.session_id,
            envelope_id: session.envelope_id,
            participant: session.participant,
            code: session.code,
            expires_at: session.issued_at + session.ttl_secs,
        })
        .into_response(),
        Err(e) => envelope_error_response(&e),
    }
}

async fn session_claim(
    State(state): State<Arc<AppState>>,
    Extension(identity): Extension<EdgeIdentity>,
    Query(params): Query<HashMap<String, String>>,
) -> Response {
    let code = match params.get("code") {
        Some(c) => c.clone(),
        None => {
            return (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(ApiError::new("invalid_code")),
            )
                .into_response()
        }
    };
    let now = state.clock.now();
    let mut envelopes = state.envelopes.lock().expect("envelope lock");
    match envelopes.session_claim(&identity.caller_role(), &code, now) {
        Ok(session) => Json(ClaimResponse {
            session_id: session.session_id,
            envelope_id: session.envelope_id,
            participant: session.participant,
            state: session.state,
        })
        .into_response(),
        Err(e) => envelope_error_response(&e),
    }
}

async fn bind_approve(
    State(state): State<Arc<AppState>>,
    Extension(identity): Extension<EdgeIdentity>,
    Json(body): Json<ApproveRequest>,
) -> Response {
    let now = state.clock.now();
    let mut envelopes = state.envelopes.lock().expect("envelope lock");
    match envelopes.bind_approve(&identity.caller_role(), body.session_id, now) {
        Ok(envelope) => Json(ApproveResponse {
            envelope_id: envelope.envelope_id,
            state: envelope.state,
            approvals: envelope.approvals.into_iter().collect(),
            quorum_k: envelope.quorum_k,
            quorum_n: envelope.quorum_n,
        })
        .into_response(),
        Err(e) => envelope_error_response(&e),
    }
}

async fn handle_mint(
    State(state): State<Arc<AppState>>,
    Extension(identity): Extension<EdgeIdentity>,
    Json(body): Json<MintWireRequest>,
) -> Response {
    let admin_org = match &identity.role {
        Role::OrgAdmin(org) => org.clone(),
        // The route guard admits only admins; anything else is a wiring
        // bug, answered closed.
        _ => {
            return (StatusCode::FORBIDDEN, Json(ApiError::new("identity_not_admin")))
                .into_response()
        }
    };
    let issuer = match state.keystore.load(&body.issuer_key_handle) {
        Ok(pair) => pair,
        Err(_) => {
            return (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(ApiError::new("unknown_issuer_key")),
            )
                .into_response()
        }
    };
    let anchors = state.anchors.read().expect("anchor lock");
    // The admin may only mint under an issuer key registered to their
    // own organization.
    match anchors.active_anchor(&issuer.thumbprint()) {
        Some(record) if record.org_id == admin_org => {}
        Some(_) => {
            return (StatusCode::FORBIDDEN, Json(ApiError::new("identity_mismatch")))
                .into_response()
        }
        None => {
            return (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(ApiError::new("issuer_key_inactive")),
            )
                .into_response()
        }
    }
    let request = MintRequest {
        issuer_key_handle: body.issuer_key_handle,
        holder_jwk: body.holder_jwk,
        profiles: body.profiles,
        not_before: body.not_before,
        not_after: body.not_after,
        audience: body.audience,
        subject: body.subject,
        envelope_scope: body.envelope_scope,
        jti: body.jti,
    };
    let now = state.clock.now();
    match mint_ect(&state.policy, &request, &state.keystore, &anchors, now) {
        Ok(token) => Json(MintWireResponse {
            jti: token.claims.jti.clone(),
            issuer_thumbprint: issuer.thumbprint(),
            holder_thumbprint: token.claims.cnf.jkt.clone(),
            ect: token.compact,
        })
        .into_response(),
        Err(e) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(ApiError::new(mint_error_code(&e))),
        )
            .into_response(),
    }
}

/// Placeholder execution used when the request body cannot be decoded;
/// it fails validation inside the verifier, producing the canonical
/// `malformed_artifact` DENY.
fn unparseable_execution() -> ExecutionTuple {
    ExecutionTuple {
        resource: String::new(),
        action: String::new(),
        qualifiers: Default::default(),
        audience: String::new(),
        envelope_id: String::new(),
    }
}

/// Pull `<ect>` out of `Authorization: DPoP <ect>`. Anything else reads
/// as an absent token and fails closed downstream.
fn bearer_ect(headers: &HeaderMap) -> String {
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("DPoP "))
        .map(str::trim)
        .unwrap_or_default()
        .to_string()
}

fn proof_header(headers: &HeaderMap) -> String {
    headers
        .get("dpop")
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string()
}

async fn handle_admission(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let now = state.clock.now();
    let (execution, params) = match serde_json::from_slice::<AdmissionWireRequest>(&body) {
        Ok(wire) => (wire.execution, wire.params),
        Err(_) => (unparseable_execution(), None),
    };
    let request = AdmissionRequest {
        ect_compact: bearer_ect(&headers),
        proof_compact: proof_header(&headers),
        execution,
        method: "POST".to_string(),
        uri: state.admission_url(),
        received_at: now,
    };
    let decision = {
        let anchors = state.anchors.read().expect("anchor lock");
        let envelopes = state.envelopes.lock().expect("envelope lock").status_view(now);
        state
            .verifier
            .decide(&request, &anchors, &envelopes, &state.replay, now)
    };
    // Record before executing: the log must contain the decision even if
    // dispatch fails.
    if state.decision_log.append(&decision).is_err() {
        return (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(ApiError::new("decision_log_unavailable")),
        )
            .into_response();
    }
    let result = match decision.outcome {
        Outcome::Allow => Some(state.backend.execute(&request.execution, params.as_ref())),
        Outcome::Deny => None,
    };
    Json(AdmissionWireResponse {
        outcome: decision.outcome,
        reason: decision.reason,
        decision_digest: decision.decision_digest,
        matched_tuple_index: decision.matched_tuple_index,
        result,
    })
    .into_response()
}

/// HTTP binding of the guarded backend. The guard rejects every network
/// caller; admitted work reaches the backend through the in-process
/// dispatcher in [`handle_admission`], never through this route.
async fn predict_image() -> Response {
    (
        StatusCode::FORBIDDEN,
        Json(ApiError::new("internal_route_violation")),
    )
        .into_response()
}

// ---- local verification helpers for clients ----

/// Client-side sanity check: does a freshly minted token verify against
/// an anchor snapshot? Used by operator tooling after `/mint_ect`.
pub fn verify_minted_token(
    compact: &str,
    anchors: &fcac_core::registry::TrustAnchorSet,
) -> Result<String, TokenError> {
    let token = parse_ect(compact)?;
    token.verify_signature(anchors)
}
