//! The boundary decision function: deterministic, fail-closed, offline.
//!
//! `decide` runs a fixed eight-step pipeline and short-circuits on the
//! first failure: (1) parse ECT, (2) issuer signature against the anchor
//! snapshot, (3) temporal validity with leeway, (4) audience, (5) parse
//! and verify the possession proof (binding, context, freshness, ath,
//! replay), (6) envelope activity, (7) prohibitions, (8) tuple coverage.
//! Check order is load-bearing: reason codes are part of the audit
//! surface, so reordering is a breaking change.
//!
//! The function consults no network and no policy engine; everything it
//! reads arrives as an argument. Its only side effect is the replay-cache
//! insert, which happens strictly after checks (1)-(4) pass.

use crate::envelope::{EnvelopeState, EnvelopeStatusView};
use crate::jose::{canonical_json, sha256_b64url};
use crate::policy::{
    check_prohibitions, covers, ExecutionTuple, GlobalCaveats, PolicyArtifact, ProhibitionPattern,
};
use crate::proofs::{verify_proof, ProofError, ReplayCache};
use crate::registry::TrustAnchorSet;
use crate::tokens::{parse_ect, TokenError};
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

/// Clock-skew leeway for nbf/exp checks.
pub const SKEW_LEEWAY_SECS: i64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "ALLOW")]
    Allow,
    #[serde(rename = "DENY")]
    Deny,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Allow => write!(f, "ALLOW"),
            Outcome::Deny => write!(f, "DENY"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    Ok,
    MalformedArtifact,
    AnchorUnknown,
    SignatureInvalid,
    Expired,
    NotYetValid,
    AudienceMismatch,
    PopSignatureInvalid,
    HolderBindingMismatch,
    HtmMismatch,
    HtuMismatch,
    StaleProof,
    AthMismatch,
    ReplayDetected,
    EnvelopeInactive,
    Prohibited,
    CapabilityMiss,
}

impl ReasonCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReasonCode::Ok => "ok",
            ReasonCode::MalformedArtifact => "malformed_artifact",
            ReasonCode::AnchorUnknown => "anchor_unknown",
            ReasonCode::SignatureInvalid => "signature_invalid",
            ReasonCode::Expired => "expired",
            ReasonCode::NotYetValid => "not_yet_valid",
            ReasonCode::AudienceMismatch => "audience_mismatch",
            ReasonCode::PopSignatureInvalid => "pop_signature_invalid",
            ReasonCode::HolderBindingMismatch => "holder_binding_mismatch",
            ReasonCode::HtmMismatch => "htm_mismatch",
            ReasonCode::HtuMismatch => "htu_mismatch",
            ReasonCode::StaleProof => "stale_proof",
            ReasonCode::AthMismatch => "ath_mismatch",
            ReasonCode::ReplayDetected => "replay_detected",
            ReasonCode::EnvelopeInactive => "envelope_inactive",
            ReasonCode::Prohibited => "prohibited",
            ReasonCode::CapabilityMiss => "capability_miss",
        }
    }
}

impl std::fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The two presented artifacts plus the concrete execution context, as
/// received at the boundary. Absent or garbled fields surface as DENY
/// reasons, never as type errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissionRequest {
    pub ect_compact: String,
    pub proof_compact: String,
    pub execution: ExecutionTuple,
    pub method: String,
    pub uri: String,
    pub received_at: i64,
}

/// One auditable decision record. `decision_digest` is the SHA-256 of the
/// canonical serialization of every other field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionDecision {
    pub outcome: Outcome,
    pub reason: ReasonCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_tuple_index: Option<usize>,
    pub ect_digest: String,
    pub proof_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer_thumbprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder_thumbprint: Option<String>,
    pub anchor_set_version: u64,
    pub policy_id: String,
    pub envelope_id: String,
    pub evaluated_at: i64,
    pub decision_digest: String,
}

impl AdmissionDecision {
    /// Recompute the digest from every field except the digest itself.
    pub fn compute_digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("decision serializes");
        value
            .as_object_mut()
            .expect("decision is an object")
            .remove("decision_digest");
        sha256_b64url(
            canonical_json(&value)
                .expect("decision contains no floats")
                .as_bytes(),
        )
    }

    pub fn digest_valid(&self) -> bool {
        self.compute_digest() == self.decision_digest
    }
}

#[derive(Debug, Error)]
pub enum VerifierConfigError {
    #[error("config_error: verifier audience `{verifier}` does not match policy audience `{policy}`")]
    AudienceMismatch { verifier: String, policy: String },
}

/// Startup-configured decision function. The service audience must equal
/// the policy's caveat audience; a mismatch is fatal at construction.
#[derive(Debug, Clone)]
pub struct Verifier {
    service_audience: String,
    policy_id: String,
    prohibitions: Vec<ProhibitionPattern>,
    skew_leeway: i64,
    expected_nonce: Option<String>,
    /// Off by default: v1 capabilities are set-scoped, so an ECT's
    /// advisory envelope_scope is not matched. Strict mode pins the token
    /// to exactly that envelope.
    strict_envelope_binding: bool,
}

impl Verifier {
    pub fn from_policy(
        policy: &PolicyArtifact,
        service_audience: &str,
    ) -> Result<Self, VerifierConfigError> {
        if policy.caveats.audience != service_audience {
            return Err(VerifierConfigError::AudienceMismatch {
                verifier: service_audience.to_string(),
                policy: policy.caveats.audience.clone(),
            });
        }
        Ok(Verifier {
            service_audience: service_audience.to_string(),
            policy_id: policy.meta.policy_id.clone(),
            prohibitions: policy.caveats.prohibitions.clone(),
            skew_leeway: SKEW_LEEWAY_SECS,
            expected_nonce: None,
            strict_envelope_binding: false,
        })
    }

    pub fn with_nonce(mut self, nonce: Option<String>) -> Self {
        self.expected_nonce = nonce;
        self
    }

    /// Override the temporal leeway applied to exp/nbf checks. Clamped at
    /// zero; leeway never goes negative.
    pub fn with_skew_leeway(mut self, secs: i64) -> Self {
        self.skew_leeway = secs.max(0);
        self
    }

    pub fn with_strict_envelope_binding(mut self, strict: bool) -> Self {
        self.strict_envelope_binding = strict;
        self
    }

    pub fn service_audience(&self) -> &str {
        &self.service_audience
    }

    pub fn policy_id(&self) -> &str {
        &self.policy_id
    }

    /// The boundary decision. Never panics on hostile input; every
    /// failure is a DENY with a stable reason code.
    pub fn decide(
        &self,
        req: &AdmissionRequest,
        anchors: &TrustAnchorSet,
        envelopes: &EnvelopeStatusView,
        cache: &ReplayCache,
        now: i64,
    ) -> AdmissionDecision {
        let mut draft = DecisionDraft {
            ect_digest: sha256_b64url(req.ect_compact.as_bytes()),
            proof_digest: sha256_b64url(req.proof_compact.as_bytes()),
            issuer_thumbprint: None,
            holder_thumbprint: None,
            anchor_set_version: anchors.version,
            policy_id: self.policy_id.clone(),
            envelope_id: req.execution.envelope_id.clone(),
            evaluated_at: now,
        };
        let reason = self.evaluate(req, anchors, envelopes, cache, now, &mut draft);
        draft.finish(reason)
    }

    fn evaluate(
        &self,
        req: &AdmissionRequest,
        anchors: &TrustAnchorSet,
        envelopes: &EnvelopeStatusView,
        cache: &ReplayCache,
        now: i64,
        draft: &mut DecisionDraft,
    ) -> Result<usize, ReasonCode> {
        // (1) structural parse of the ECT and the execution tuple.
        let ect = parse_ect(&req.ect_compact).map_err(|_| ReasonCode::MalformedArtifact)?;
        let execution = req.execution.clone().canonicalize();
        execution
            .validate()
            .map_err(|_| ReasonCode::MalformedArtifact)?;

        // (2) issuer signature against the anchor snapshot.
        let issuer = ect.verify_signature(anchors).map_err(|e| match e {
            TokenError::AnchorUnknown(_) => ReasonCode::AnchorUnknown,
            _ => ReasonCode::SignatureInvalid,
        })?;
        draft.issuer_thumbprint = Some(issuer);

        // (3) temporal validity with skew leeway.
        if now > ect.claims.exp + self.skew_leeway {
            return Err(ReasonCode::Expired);
        }
        if now < ect.claims.nbf - self.skew_leeway {
            return Err(ReasonCode::NotYetValid);
        }

        // (4) audience must match the verifier's configured service.
        if ect.claims.aud != self.service_audience {
            return Err(ReasonCode::AudienceMismatch);
        }

        // (5) possession proof. Replay insert happens inside, last.
        let holder = verify_proof(
            &req.proof_compact,
            &req.method,
            &req.uri,
            &ect,
            self.expected_nonce.as_deref(),
            cache,
            now,
        )
        .map_err(|e| match e {
            ProofError::Malformed(_) | ProofError::MalformedUri(_) => ReasonCode::MalformedArtifact,
            ProofError::PopSignatureInvalid => ReasonCode::PopSignatureInvalid,
            ProofError::HolderBindingMismatch => ReasonCode::HolderBindingMismatch,
            ProofError::HtmMismatch => ReasonCode::HtmMismatch,
            ProofError::HtuMismatch => ReasonCode::HtuMismatch,
            ProofError::StaleProof => ReasonCode::StaleProof,
            ProofError::AthMismatch => ReasonCode::AthMismatch,
            ProofError::ReplayDetected => ReasonCode::ReplayDetected,
        })?;
        draft.holder_thumbprint = Some(holder);

        // (6) envelope activity at `now`.
        let entry = envelopes
            .get(&execution.envelope_id)
            .ok_or(ReasonCode::EnvelopeInactive)?;
        if entry.state != EnvelopeState::Active || now < entry.nbf || now > entry.exp {
            return Err(ReasonCode::EnvelopeInactive);
        }
        if self.strict_envelope_binding {
            if let Some(scope) = &ect.claims.envelope_scope {
                if *scope != execution.envelope_id {
                    return Err(ReasonCode::EnvelopeInactive);
                }
            }
        }

        // (7) prohibitions; deny wins over any allow.
        let caveats = GlobalCaveats {
            audience: self.service_audience.clone(),
            prohibitions: self.prohibitions.clone(),
        };
        if !check_prohibitions(&caveats, &execution) {
            return Err(ReasonCode::Prohibited);
        }

        // (8) coverage; the lowest canonical index is reported.
        ect.claims
            .tuples
            .iter()
            .position(|t| covers(t, &execution))
            .ok_or(ReasonCode::CapabilityMiss)
    }
}

struct DecisionDraft {
    ect_digest: String,
    proof_digest: String,
    issuer_thumbprint: Option<String>,
    holder_thumbprint: Option<String>,
    anchor_set_version: u64,
    policy_id: String,
    envelope_id: String,
    evaluated_at: i64,
}

impl DecisionDraft {
    fn finish(self, reason: Result<usize, ReasonCode>) -> AdmissionDecision {
        let (outcome, reason, matched) = match reason {
            Ok(idx) => (Outcome::Allow, ReasonCode::Ok, Some(idx)),
            Err(code) => (Outcome::Deny, code, None),
        };
        let mut decision = AdmissionDecision {
            outcome,
            reason,
            matched_tuple_index: matched,
            ect_digest: self.ect_digest,
            proof_digest: self.proof_digest,
            issuer_thumbprint: self.issuer_thumbprint,
            holder_thumbprint: self.holder_thumbprint,
            anchor_set_version: self.anchor_set_version,
            policy_id: self.policy_id,
            envelope_id: self.envelope_id,
            evaluated_at: self.evaluated_at,
            decision_digest: String::new(),
        };
        decision.decision_digest = decision.compute_digest();
        decision
    }
}

// ---- decision log ----

#[derive(Debug, Error)]
pub enum LogError {
    #[error("storage_error: {0}")]
    Storage(String),
}

/// One hash-chained log line. `chain` commits to every prior decision:
/// chain_n = SHA-256(chain_{n-1} || ":" || decision_digest_n).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub seq: u64,
    pub decision: AdmissionDecision,
    pub chain: String,
}

pub fn chain_digest(prev_chain: &str, decision_digest: &str) -> String {
    sha256_b64url(format!("{prev_chain}:{decision_digest}").as_bytes())
}

struct LogState {
    seq: u64,
    chain: String,
}

/// Append-only JSON Lines decision log with strictly increasing sequence
/// numbers and a running hash chain. The appender is serialized.
pub struct DecisionLog {
    path: PathBuf,
    state: Mutex<LogState>,
}

impl DecisionLog {
    /// Open or create; recovers seq and chain tip by replaying the file.
    pub fn open<P: AsRef<Path>>(path: P) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let mut seq = 0u64;
        let mut chain = String::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| LogError::Storage(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| LogError::Storage(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: DecisionRecord = serde_json::from_str(&line)
                    .map_err(|e| LogError::Storage(format!("log recovery: {e}")))?;
                seq = record.seq;
                chain = record.chain;
            }
        }
        Ok(DecisionLog {
            path,
            state: Mutex::new(LogState { seq, chain }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one decision; returns its sequence number (1-based).
    pub fn append(&self, decision: &AdmissionDecision) -> Result<u64, LogError> {
        let mut state = self.state.lock().expect("decision log lock");
        let seq = state.seq + 1;
        let chain = chain_digest(&state.chain, &decision.decision_digest);
        let record = DecisionRecord {
            seq,
            decision: decision.clone(),
            chain: chain.clone(),
        };
        let line = canonical_json(&record).map_err(|e| LogError::Storage(e.to_string()))?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| LogError::Storage(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| LogError::Storage(e.to_string()))?;
        state.seq = seq;
        state.chain = chain;
        Ok(seq)
    }
}
