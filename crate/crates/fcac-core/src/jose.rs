//! JOSE primitives shared by the whole trust chain: base64url, canonical
//! JSON, JWK handling with RFC 7638 thumbprints, and compact JWS
//! signing/verification restricted to EdDSA (Ed25519).
//!
//! Canonical form everywhere: lexicographically sorted object keys, no
//! insignificant whitespace, UTF-8, no floating point values. Digests are
//! SHA-256 rendered as unpadded base64url.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{Signer, Verifier};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// The one signature algorithm accepted anywhere in the chain.
pub const ALG_EDDSA: &str = "EdDSA";

#[derive(Debug, Error)]
pub enum JoseError {
    #[error("malformed_key: {0}")]
    MalformedKey(String),
    #[error("malformed base64url segment")]
    Base64,
    #[error("canonicalization rejects non-integer numbers")]
    FloatValue,
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error("signature_invalid")]
    SignatureInvalid,
}

pub fn b64url_encode(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn b64url_decode(s: &str) -> Result<Vec<u8>, JoseError> {
    URL_SAFE_NO_PAD.decode(s).map_err(|_| JoseError::Base64)
}

/// SHA-256 of `bytes`, base64url without padding.
pub fn sha256_b64url(bytes: &[u8]) -> String {
    b64url_encode(&Sha256::digest(bytes))
}

/// Serialize `value` into canonical JSON: recursively sorted object keys,
/// compact separators, integers only. Independent of serde_json feature
/// flags such as `preserve_order`.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String, JoseError> {
    let v = serde_json::to_value(value).map_err(|e| JoseError::Serialize(e.to_string()))?;
    let mut out = String::new();
    write_canonical(&v, &mut out)?;
    Ok(out)
}

pub fn canonical_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, JoseError> {
    canonical_json(value).map(String::into_bytes)
}

fn write_canonical(v: &Value, out: &mut String) -> Result<(), JoseError> {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                return Err(JoseError::FloatValue);
            }
        }
        Value::String(s) => {
            let escaped =
                serde_json::to_string(s).map_err(|e| JoseError::Serialize(e.to_string()))?;
            out.push_str(&escaped);
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push('{');
            for (i, (k, item)) in sorted.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let key =
                    serde_json::to_string(k).map_err(|e| JoseError::Serialize(e.to_string()))?;
                out.push_str(&key);
                out.push(':');
                write_canonical(item, out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

/// A JSON Web Key held as its raw member map.
///
/// Thumbprints (RFC 7638) are computable for any of the registered key
/// types; actual signature operations are restricted to Ed25519 OKP keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Jwk(BTreeMap<String, Value>);

impl Jwk {
    pub fn from_value(v: Value) -> Result<Self, JoseError> {
        match v {
            Value::Object(map) => Ok(Jwk(map.into_iter().collect())),
            _ => Err(JoseError::MalformedKey("JWK must be a JSON object".into())),
        }
    }

    pub fn from_str(s: &str) -> Result<Self, JoseError> {
        let v: Value =
            serde_json::from_str(s).map_err(|e| JoseError::MalformedKey(e.to_string()))?;
        Self::from_value(v)
    }

    pub fn to_value(&self) -> Value {
        Value::Object(self.0.clone().into_iter().collect())
    }

    /// Public Ed25519 key as a JWK (`kty=OKP`, `crv=Ed25519`).
    pub fn from_ed25519(key: &ed25519_dalek::VerifyingKey) -> Self {
        let mut map = BTreeMap::new();
        map.insert("kty".into(), Value::String("OKP".into()));
        map.insert("crv".into(), Value::String("Ed25519".into()));
        map.insert("x".into(), Value::String(b64url_encode(key.as_bytes())));
        Jwk(map)
    }

    pub fn kty(&self) -> Option<&str> {
        self.0.get("kty").and_then(Value::as_str)
    }

    fn member(&self, name: &str) -> Result<&str, JoseError> {
        self.0
            .get(name)
            .and_then(Value::as_str)
            .ok_or_else(|| JoseError::MalformedKey(format!("missing required member `{name}`")))
    }

    /// True when the key carries private material (`d` member).
    pub fn has_private_material(&self) -> bool {
        self.0.contains_key("d")
    }

    /// Copy with the private member stripped.
    pub fn public_only(&self) -> Jwk {
        let mut map = self.0.clone();
        map.remove("d");
        Jwk(map)
    }

    /// RFC 7638 thumbprint: SHA-256 over the required-member subset in
    /// lexicographic order with no whitespace, base64url without padding.
    pub fn thumbprint(&self) -> Result<String, JoseError> {
        let kty = self
            .kty()
            .ok_or_else(|| JoseError::MalformedKey("missing required member `kty`".into()))?;
        let required: &[&str] = match kty {
            "RSA" => &["e", "kty", "n"],
            "EC" => &["crv", "kty", "x", "y"],
            "OKP" => &["crv", "kty", "x"],
            "oct" => &["k", "kty"],
            other => {
                return Err(JoseError::MalformedKey(format!("unsupported kty `{other}`")));
            }
        };
        let mut subset = BTreeMap::new();
        for name in required {
            subset.insert((*name).to_string(), Value::String(self.member(name)?.to_string()));
        }
        let canon = canonical_json(&subset)?;
        Ok(sha256_b64url(canon.as_bytes()))
    }

    /// Interpret as an Ed25519 verifying key. Any other key type is
    /// rejected; this is the v1 algorithm restriction.
    pub fn as_ed25519(&self) -> Result<ed25519_dalek::VerifyingKey, JoseError> {
        if self.kty() != Some("OKP") {
            return Err(JoseError::MalformedKey(
                "only OKP/Ed25519 keys are accepted".into(),
            ));
        }
        if self.member("crv")? != "Ed25519" {
            return Err(JoseError::MalformedKey(
                "only OKP/Ed25519 keys are accepted".into(),
            ));
        }
        let x = b64url_decode(self.member("x")?)
            .map_err(|_| JoseError::MalformedKey("member `x` is not base64url".into()))?;
        let arr: [u8; 32] = x
            .try_into()
            .map_err(|_| JoseError::MalformedKey("Ed25519 `x` must decode to 32 bytes".into()))?;
        ed25519_dalek::VerifyingKey::from_bytes(&arr)
            .map_err(|e| JoseError::MalformedKey(format!("invalid Ed25519 point: {e}")))
    }

    /// Private member `d` as an Ed25519 signing key.
    pub fn signing_key(&self) -> Result<ed25519_dalek::SigningKey, JoseError> {
        let d = b64url_decode(self.member("d")?)
            .map_err(|_| JoseError::MalformedKey("member `d` is not base64url".into()))?;
        let arr: [u8; 32] = d
            .try_into()
            .map_err(|_| JoseError::MalformedKey("Ed25519 `d` must decode to 32 bytes".into()))?;
        Ok(ed25519_dalek::SigningKey::from_bytes(&arr))
    }
}

/// Split a compact JWS into its exactly-three base64url segments.
pub fn split_compact(compact: &str) -> Option<(&str, &str, &str)> {
    let mut parts = compact.split('.');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(h), Some(p), Some(s), None) => Some((h, p, s)),
        _ => None,
    }
}

/// Assemble and sign a compact JWS over canonical header/claims JSON.
pub fn encode_signed<H: Serialize, C: Serialize>(
    header: &H,
    claims: &C,
    key: &ed25519_dalek::SigningKey,
) -> Result<String, JoseError> {
    let h = b64url_encode(canonical_json(header)?.as_bytes());
    let c = b64url_encode(canonical_json(claims)?.as_bytes());
    let signing_input = format!("{h}.{c}");
    let sig = key.sign(signing_input.as_bytes());
    Ok(format!("{signing_input}.{}", b64url_encode(&sig.to_bytes())))
}

/// Verify an Ed25519 signature over a JWS signing input.
pub fn verify_signature(
    signing_input: &[u8],
    signature: &[u8],
    key: &ed25519_dalek::VerifyingKey,
) -> Result<(), JoseError> {
    let sig_arr: [u8; 64] = signature
        .try_into()
        .map_err(|_| JoseError::SignatureInvalid)?;
    let sig = ed25519_dalek::Signature::from_bytes(&sig_arr);
    key.verify(signing_input, &sig)
        .map_err(|_| JoseError::SignatureInvalid)
}
