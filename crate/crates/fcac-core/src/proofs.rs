//! Per-request possession proofs binding the ECT holder key to one
//! concrete HTTP execution event.
//!
//! A proof is a compact JWS (`typ: "dpop+jwt"`) signed by the holder
//! private key, carrying the uppercase method (`htm`), the normalized
//! request URI without query or fragment (`htu`), a freshness timestamp,
//! a one-time `jti`, an optional server nonce, and `ath`, the SHA-256 of
//! the exact ECT compact form it accompanies. The replay cache's
//! insert-if-absent is the only mutable state and runs last, so failed
//! proofs never poison it.

use crate::jose::{
    self, b64url_decode, b64url_encode, sha256_b64url, Jwk, ALG_EDDSA,
};
use crate::keys::KeyPair;
use crate::tokens::EnvelopeCapabilityToken;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::HashMap;
use std::sync::Mutex;
use thiserror::Error;

pub const DPOP_TYP: &str = "dpop+jwt";

/// Accepted distance between a proof's iat and the verifier clock.
pub const IAT_WINDOW_SECS: i64 = 300;

/// Replay entries are retained at least this long past their proof's iat;
/// twice the acceptance window so an entry outlives every clock position
/// at which its proof would still be fresh.
pub const REPLAY_RETENTION_SECS: i64 = 2 * IAT_WINDOW_SECS;

#[derive(Debug, Error)]
pub enum ProofError {
    #[error("malformed_proof: {0}")]
    Malformed(String),
    #[error("malformed_uri: {0}")]
    MalformedUri(String),
    #[error("pop_signature_invalid")]
    PopSignatureInvalid,
    #[error("holder_binding_mismatch")]
    HolderBindingMismatch,
    #[error("htm_mismatch")]
    HtmMismatch,
    #[error("htu_mismatch")]
    HtuMismatch,
    #[error("stale_proof")]
    StaleProof,
    #[error("ath_mismatch")]
    AthMismatch,
    #[error("replay_detected")]
    ReplayDetected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofHeader {
    pub alg: String,
    pub typ: String,
    pub jwk: Jwk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofClaims {
    pub htm: String,
    pub htu: String,
    pub iat: i64,
    pub jti: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce: Option<String>,
    pub ath: String,
}

#[derive(Debug, Clone)]
pub struct PossessionProof {
    pub header: ProofHeader,
    pub claims: ProofClaims,
    pub compact: String,
    signature: Vec<u8>,
}

/// Normalize a target URI for `htu`: absolute form, query and fragment
/// stripped, scheme and host lowercased, default ports elided.
pub fn normalize_htu(uri: &str) -> Result<String, ProofError> {
    let mut parsed = url::Url::parse(uri).map_err(|e| ProofError::MalformedUri(e.to_string()))?;
    parsed.set_query(None);
    parsed.set_fragment(None);
    Ok(parsed.to_string())
}

fn random_jti() -> String {
    let bytes: [u8; 16] = rand::random();
    b64url_encode(&bytes)
}

/// Build and sign a proof for one request. `jti: None` draws a random
/// 128-bit id, so two calls with identical inputs yield distinct proofs.
pub fn build_proof(
    holder_key: &KeyPair,
    method: &str,
    uri: &str,
    ect_compact: &str,
    now: i64,
    nonce: Option<&str>,
    jti: Option<String>,
) -> Result<PossessionProof, ProofError> {
    let header = ProofHeader {
        alg: ALG_EDDSA.to_string(),
        typ: DPOP_TYP.to_string(),
        jwk: holder_key.public_jwk(),
    };
    let claims = ProofClaims {
        htm: method.to_uppercase(),
        htu: normalize_htu(uri)?,
        iat: now,
        jti: jti.unwrap_or_else(random_jti),
        nonce: nonce.map(str::to_string),
        ath: sha256_b64url(ect_compact.as_bytes()),
    };
    let compact = jose::encode_signed(&header, &claims, holder_key.signing_key())
        .map_err(|e| ProofError::Malformed(e.to_string()))?;
    parse_proof(&compact)
}

/// Structural decode of a compact proof. No signature checks.
pub fn parse_proof(compact: &str) -> Result<PossessionProof, ProofError> {
    let (h, p, s) = jose::split_compact(compact)
        .ok_or_else(|| ProofError::Malformed("compact form must have exactly three segments".into()))?;
    let header_bytes =
        b64url_decode(h).map_err(|_| ProofError::Malformed("header segment is not base64url".into()))?;
    let payload_bytes =
        b64url_decode(p).map_err(|_| ProofError::Malformed("payload segment is not base64url".into()))?;
    let signature =
        b64url_decode(s).map_err(|_| ProofError::Malformed("signature segment is not base64url".into()))?;
    if signature.len() != 64 {
        return Err(ProofError::Malformed("Ed25519 signature must be 64 bytes".into()));
    }
    let header_value: Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| ProofError::Malformed(format!("header JSON: {e}")))?;
    if header_value.get("crit").is_some() {
        return Err(ProofError::Malformed("unknown critical header".into()));
    }
    let header: ProofHeader = serde_json::from_value(header_value)
        .map_err(|e| ProofError::Malformed(format!("header fields: {e}")))?;
    if header.alg != ALG_EDDSA {
        return Err(ProofError::Malformed(format!(
            "alg `{}` is not on the allowlist",
            header.alg
        )));
    }
    if header.typ != DPOP_TYP {
        return Err(ProofError::Malformed(format!(
            "typ `{}` is not `{DPOP_TYP}`",
            header.typ
        )));
    }
    if header.jwk.has_private_material() {
        return Err(ProofError::Malformed(
            "proof header jwk must not carry private members".into(),
        ));
    }
    let claims: ProofClaims = serde_json::from_slice(&payload_bytes)
        .map_err(|e| ProofError::Malformed(format!("claims JSON: {e}")))?;
    if claims.jti.is_empty() {
        return Err(ProofError::Malformed("jti must be non-empty".into()));
    }
    Ok(PossessionProof {
        header,
        claims,
        compact: compact.to_string(),
        signature,
    })
}

/// One-time jti registry with time-bounded retention.
#[derive(Debug)]
pub struct ReplayCache {
    entries: Mutex<HashMap<String, i64>>,
    retention_secs: i64,
}

impl ReplayCache {
    pub fn new(retention_secs: i64) -> Self {
        ReplayCache {
            entries: Mutex::new(HashMap::new()),
            retention_secs,
        }
    }

    /// Atomically record `jti` unless already present. Returns false on a
    /// replay. Entries persist until `iat + retention`.
    pub fn insert_if_absent(&self, jti: &str, iat: i64, now: i64) -> bool {
        let mut entries = self.entries.lock().expect("replay cache lock");
        entries.retain(|_, retain_until| *retain_until >= now);
        if entries.contains_key(jti) {
            return false;
        }
        entries.insert(jti.to_string(), iat + self.retention_secs);
        true
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("replay cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for ReplayCache {
    fn default() -> Self {
        Self::new(REPLAY_RETENTION_SECS)
    }
}

/// Verify a proof against the request context and its accompanying ECT.
///
/// Check order is fixed: signature, holder binding, method, URI,
/// freshness, nonce, token hash, replay. The cache insert happens only
/// after every other check has passed. A nonce mismatch reports as a
/// freshness failure (`stale_proof`): the proof is not fresh with respect
/// to the server's current challenge.
pub fn verify_proof(
    proof_compact: &str,
    expected_method: &str,
    expected_uri: &str,
    ect: &EnvelopeCapabilityToken,
    expected_nonce: Option<&str>,
    cache: &ReplayCache,
    now: i64,
) -> Result<String, ProofError> {
    let proof = parse_proof(proof_compact)?;
    let holder = proof
        .header
        .jwk
        .as_ed25519()
        .map_err(|e| ProofError::Malformed(e.to_string()))?;
    let end = proof.compact.rfind('.').expect("compact form has segments");
    jose::verify_signature(proof.compact[..end].as_bytes(), &proof.signature, &holder)
        .map_err(|_| ProofError::PopSignatureInvalid)?;

    let jkt = proof
        .header
        .jwk
        .thumbprint()
        .map_err(|e| ProofError::Malformed(e.to_string()))?;
    if jkt != ect.claims.cnf.jkt {
        return Err(ProofError::HolderBindingMismatch);
    }
    if proof.claims.htm != expected_method.to_uppercase() {
        return Err(ProofError::HtmMismatch);
    }
    if proof.claims.htu != normalize_htu(expected_uri)? {
        return Err(ProofError::HtuMismatch);
    }
    if (now - proof.claims.iat).abs() > IAT_WINDOW_SECS {
        return Err(ProofError::StaleProof);
    }
    if let Some(expected) = expected_nonce {
        if proof.claims.nonce.as_deref() != Some(expected) {
            return Err(ProofError::StaleProof);
        }
    }
    if proof.claims.ath != ect.ath() {
        return Err(ProofError::AthMismatch);
    }
    if !cache.insert_if_absent(&proof.claims.jti, proof.claims.iat, now) {
        return Err(ProofError::ReplayDetected);
    }
    Ok(jkt)
}
