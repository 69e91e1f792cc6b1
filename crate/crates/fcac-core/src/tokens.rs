//! Envelope Capability Tokens: holder-bound JWTs carrying compiled
//! capability tuples under an issuer anchor.
//!
//! An ECT is a compact JWS (`typ: "ect+jwt"`, EdDSA only) whose claims fix
//! the grant at mint time: once minted, scope and limits never change.
//! `cnf.jkt` binds the token to a holder key; there is no bearer mode.
//! Parsing is structural only and yields an explicitly unverified value;
//! signature and temporal checks happen at admission.

use crate::jose::{
    self, b64url_decode, b64url_encode, canonical_json, sha256_b64url, Jwk, JoseError, ALG_EDDSA,
};
use crate::keys::Keystore;
use crate::policy::{compile_tuples, CapabilityTuple, PolicyArtifact, PolicyError};
use crate::registry::TrustAnchorSet;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const ECT_TYP: &str = "ect+jwt";

#[derive(Debug, Error)]
pub enum TokenError {
    #[error("malformed_token: {0}")]
    Malformed(String),
    #[error("anchor_unknown: no active anchor for kid `{0}`")]
    AnchorUnknown(String),
    #[error("signature_invalid")]
    SignatureInvalid,
    #[error("unknown_profile: `{0}`")]
    UnknownProfile(String),
    #[error("empty_grant: minted token must carry at least one tuple")]
    EmptyGrant,
    #[error("issuer_key_inactive: `{0}` is not an active anchor")]
    IssuerKeyInactive(String),
    #[error("validity_out_of_range: token validity must sit inside issuer key validity")]
    ValidityOutOfRange,
    #[error("keystore: {0}")]
    Keystore(String),
}

impl From<PolicyError> for TokenError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::UnknownProfile(p) => TokenError::UnknownProfile(p),
            other => TokenError::Malformed(other.to_string()),
        }
    }
}

impl From<JoseError> for TokenError {
    fn from(e: JoseError) -> Self {
        TokenError::Malformed(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EctHeader {
    pub alg: String,
    pub typ: String,
    /// Issuer key thumbprint; doubles as the anchor lookup key.
    pub kid: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cnf {
    /// Holder JWK thumbprint (RFC 7638).
    pub jkt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EctClaims {
    pub iss: String,
    pub sub: String,
    pub aud: String,
    pub iat: i64,
    pub nbf: i64,
    pub exp: i64,
    pub jti: String,
    pub cnf: Cnf,
    pub tuples: Vec<CapabilityTuple>,
    pub policy_id: String,
    /// SHA-256 of the canonical policy bytes; together with policy_id this
    /// pins the exact contract version the grant was compiled from.
    pub policy_digest: String,
    pub profiles: Vec<String>,
    /// Advisory envelope association. Capabilities are set-scoped in v1:
    /// any Active envelope satisfies the activity gate, and this field is
    /// not matched unless the verifier runs in strict binding mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_scope: Option<String>,
}

/// A structurally decoded ECT. Holding this value proves nothing: the
/// signature has not been checked until `verify_signature` succeeds
/// against an anchor snapshot.
#[derive(Debug, Clone)]
pub struct EnvelopeCapabilityToken {
    pub header: EctHeader,
    pub claims: EctClaims,
    pub compact: String,
    signature: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct MintRequest {
    pub issuer_key_handle: String,
    pub holder_jwk: Jwk,
    pub profiles: Vec<String>,
    pub not_before: i64,
    pub not_after: i64,
    pub audience: String,
    pub subject: String,
    pub envelope_scope: Option<String>,
    /// Explicit token id for deterministic serialization; `None` draws a
    /// random 128-bit id.
    pub jti: Option<String>,
}

fn random_jti() -> String {
    let bytes: [u8; 16] = rand::random();
    b64url_encode(&bytes)
}

/// Mint an ECT: compile the granted profiles, bind to the holder key, sign
/// under the issuer key. The token's validity must sit inside the issuer
/// key's registry validity, and the issuer key must be an active anchor.
pub fn mint_ect(
    policy: &PolicyArtifact,
    req: &MintRequest,
    keystore: &Keystore,
    anchors: &TrustAnchorSet,
    now: i64,
) -> Result<EnvelopeCapabilityToken, TokenError> {
    let issuer = keystore
        .load(&req.issuer_key_handle)
        .map_err(|e| TokenError::Keystore(e.to_string()))?;
    let kid = issuer.thumbprint();
    let record = anchors
        .active_anchor(&kid)
        .ok_or_else(|| TokenError::IssuerKeyInactive(kid.clone()))?;
    if req.not_before >= req.not_after {
        return Err(TokenError::ValidityOutOfRange);
    }
    if req.not_before < record.not_before || req.not_after > record.not_after || now > req.not_after
    {
        return Err(TokenError::ValidityOutOfRange);
    }
    let tuples = compile_tuples(policy, &req.profiles)?;
    if tuples.is_empty() {
        return Err(TokenError::EmptyGrant);
    }
    let jkt = req.holder_jwk.thumbprint()?;
    let header = EctHeader {
        alg: ALG_EDDSA.to_string(),
        typ: ECT_TYP.to_string(),
        kid,
    };
    let claims = EctClaims {
        iss: record.org_id.clone(),
        sub: req.subject.clone(),
        aud: req.audience.clone(),
        iat: now,
        nbf: req.not_before,
        exp: req.not_after,
        jti: req.jti.clone().unwrap_or_else(random_jti),
        cnf: Cnf { jkt },
        tuples,
        policy_id: policy.meta.policy_id.clone(),
        policy_digest: policy.digest().map_err(|e| TokenError::Malformed(e.to_string()))?,
        profiles: req.profiles.clone(),
        envelope_scope: req.envelope_scope.clone(),
    };
    let compact = jose::encode_signed(&header, &claims, issuer.signing_key())?;
    parse_ect(&compact)
}

/// Structural decode of a compact ECT. No signature or temporal checks.
pub fn parse_ect(compact: &str) -> Result<EnvelopeCapabilityToken, TokenError> {
    let (h, p, s) = jose::split_compact(compact)
        .ok_or_else(|| TokenError::Malformed("compact form must have exactly three segments".into()))?;
    let header_bytes =
        b64url_decode(h).map_err(|_| TokenError::Malformed("header segment is not base64url".into()))?;
    let payload_bytes =
        b64url_decode(p).map_err(|_| TokenError::Malformed("payload segment is not base64url".into()))?;
    let signature =
        b64url_decode(s).map_err(|_| TokenError::Malformed("signature segment is not base64url".into()))?;
    if signature.len() != 64 {
        return Err(TokenError::Malformed("Ed25519 signature must be 64 bytes".into()));
    }

    let header_value: Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| TokenError::Malformed(format!("header JSON: {e}")))?;
    // No JWS extensions are supported; any critical-header declaration is
    // by definition unknown.
    if header_value.get("crit").is_some() {
        return Err(TokenError::Malformed("unknown critical header".into()));
    }
    let header: EctHeader = serde_json::from_value(header_value)
        .map_err(|e| TokenError::Malformed(format!("header fields: {e}")))?;
    if header.alg != ALG_EDDSA {
        return Err(TokenError::Malformed(format!(
            "alg `{}` is not on the allowlist",
            header.alg
        )));
    }
    if header.typ != ECT_TYP {
        return Err(TokenError::Malformed(format!("typ `{}` is not `{ECT_TYP}`", header.typ)));
    }
    if header.kid.is_empty() {
        return Err(TokenError::Malformed("kid must be non-empty".into()));
    }

    let claims: EctClaims = serde_json::from_slice(&payload_bytes)
        .map_err(|e| TokenError::Malformed(format!("claims JSON: {e}")))?;
    if claims.nbf > claims.exp || claims.iat > claims.exp {
        return Err(TokenError::Malformed("temporal claims are inconsistent".into()));
    }
    if claims.cnf.jkt.is_empty() {
        return Err(TokenError::Malformed("cnf.jkt must be non-empty".into()));
    }
    if claims.tuples.is_empty() {
        return Err(TokenError::Malformed("tuples must be non-empty".into()));
    }
    for t in &claims.tuples {
        t.validate()
            .map_err(|e| TokenError::Malformed(e.to_string()))?;
    }

    Ok(EnvelopeCapabilityToken {
        header,
        claims,
        compact: compact.to_string(),
        signature,
    })
}

impl EnvelopeCapabilityToken {
    fn signing_input(&self) -> &str {
        let end = self.compact.rfind('.').expect("compact form has segments");
        &self.compact[..end]
    }

    /// Check the Ed25519 signature against an anchor snapshot. The kid
    /// must name an active anchor; returns that anchor's thumbprint.
    pub fn verify_signature(&self, anchors: &TrustAnchorSet) -> Result<String, TokenError> {
        let record = anchors
            .active_anchor(&self.header.kid)
            .ok_or_else(|| TokenError::AnchorUnknown(self.header.kid.clone()))?;
        if record.thumbprint != self.header.kid {
            return Err(TokenError::AnchorUnknown(self.header.kid.clone()));
        }
        let key = record
            .public_key
            .as_ed25519()
            .map_err(|_| TokenError::AnchorUnknown(self.header.kid.clone()))?;
        jose::verify_signature(self.signing_input().as_bytes(), &self.signature, &key)
            .map_err(|_| TokenError::SignatureInvalid)?;
        Ok(record.thumbprint.clone())
    }

    /// SHA-256 of the compact form; the value a possession proof must cite
    /// in `ath`.
    pub fn ath(&self) -> String {
        sha256_b64url(self.compact.as_bytes())
    }

    /// Canonical serialization of the tuple set, for non-expansion checks.
    pub fn tuples_digest(&self) -> String {
        sha256_b64url(
            canonical_json(&self.claims.tuples)
                .expect("tuples contain no floats")
                .as_bytes(),
        )
    }
}
