//! Versioned policy artifact and the deterministic tuple compiler.
//!
//! A policy artifact declares admissible operations, capability profiles
//! grouping them, global caveats (audience, prohibitions), and metadata.
//! Compilation turns granted profiles into canonical capability tuples at
//! issuance time; it consults no clock, no network, no mutable store.
//!
//! Canonical form: lexicographically sorted keys, lowercase actions, UTF-8,
//! integers and booleans only. The SHA-256 digest of the canonical bytes is
//! the policy digest cited in decision records.

use crate::jose::{canonical_json, sha256_b64url, JoseError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Registered scope qualifier vocabulary. Policy artifacts may only
/// constrain these; execution requests may carry extras, which simply
/// never satisfy a constraint.
pub const REGISTERED_QUALIFIERS: [&str; 5] = ["agg", "cohort", "contact", "pii", "purpose"];

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("schema_error: {0}")]
    Schema(String),
    #[error("dangling_ref: {0}")]
    DanglingRef(String),
    #[error("unknown_qualifier: `{0}`")]
    UnknownQualifier(String),
    #[error("unknown_profile: `{0}`")]
    UnknownProfile(String),
}

impl From<JoseError> for PolicyError {
    fn from(e: JoseError) -> Self {
        PolicyError::Schema(e.to_string())
    }
}

/// A single scope value. Untagged: JSON strings, booleans and integers map
/// directly; floats are rejected by construction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScopeValue {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl ScopeValue {
    pub fn s(v: &str) -> Self {
        ScopeValue::Str(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationSpec {
    pub op_id: String,
    pub resource: String,
    pub action: String,
    #[serde(default)]
    pub scope: BTreeMap<String, ScopeValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_class: Option<String>,
}

/// Prohibition pattern: absent resource/action match anything; qualifier
/// constraints use the same containment semantics as tuple coverage.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProhibitionPattern {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub qualifiers: BTreeMap<String, BTreeSet<ScopeValue>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalCaveats {
    pub audience: String,
    #[serde(default)]
    pub prohibitions: Vec<ProhibitionPattern>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyMeta {
    pub policy_id: String,
    pub manifest_id: String,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyArtifact {
    pub policy_version: String,
    pub ops: Vec<OperationSpec>,
    pub cap_profiles: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub cap_profiles_default: BTreeMap<String, Vec<String>>,
    pub caveats: GlobalCaveats,
    pub meta: PolicyMeta,
    /// Procedural clauses are opaque here: ignored by the compiler and the
    /// verifier, passed through for backend logic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub procedural: Option<Value>,
}

/// Tuple-level caveats inherited from the policy at compile time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleCaveats {
    pub audience: String,
    pub inherit_prohibitions: bool,
    /// Validity is referenced, not embedded: "token" means the enclosing
    /// token's [nbf, exp] window governs.
    pub validity: ValidityRef,
    pub delegation_limit: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityRef {
    Token,
}

/// One admissible operation as a structured predicate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityTuple {
    pub resource: String,
    pub action: String,
    pub scope: BTreeMap<String, BTreeSet<ScopeValue>>,
    pub caveats: TupleCaveats,
}

impl CapabilityTuple {
    /// Structural validity: empty value-set for a present qualifier is
    /// invalid (empty set is not "unconstrained"; absence is).
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.resource.is_empty() || self.action.is_empty() {
            return Err(PolicyError::Schema(
                "tuple resource and action must be non-empty".into(),
            ));
        }
        for (q, set) in &self.scope {
            if set.is_empty() {
                return Err(PolicyError::Schema(format!(
                    "tuple qualifier `{q}` has an empty value-set"
                )));
            }
        }
        Ok(())
    }
}

/// The concrete operation a caller asks the boundary to admit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTuple {
    pub resource: String,
    pub action: String,
    #[serde(default)]
    pub qualifiers: BTreeMap<String, ScopeValue>,
    pub audience: String,
    pub envelope_id: String,
}

impl ExecutionTuple {
    /// Lowercase the action; qualifier keys are already order-canonical in
    /// the map.
    pub fn canonicalize(mut self) -> Self {
        self.action = self.action.to_lowercase();
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.resource.is_empty() || self.action.is_empty() || self.audience.is_empty() {
            return Err(PolicyError::Schema(
                "execution tuple resource, action and audience must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

// ---- loading and canonical serialization ----

impl PolicyArtifact {
    /// Parse and validate a policy artifact from its file bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| PolicyError::Schema("policy file is not UTF-8".into()))?;
        let mut artifact: PolicyArtifact = serde_json::from_str(text)
            .map_err(|e| PolicyError::Schema(e.to_string()))?;
        artifact.normalize();
        artifact.validate()?;
        Ok(artifact)
    }

    fn normalize(&mut self) {
        for op in &mut self.ops {
            op.action = op.action.to_lowercase();
        }
        for p in &mut self.caveats.prohibitions {
            if let Some(a) = &p.action {
                p.action = Some(a.to_lowercase());
            }
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.policy_version.is_empty()
            || !self
                .policy_version
                .chars()
                .all(|c| c.is_ascii_digit() || c == '.')
        {
            return Err(PolicyError::Schema(format!(
                "policy_version `{}` is not a version string",
                self.policy_version
            )));
        }
        if self.caveats.audience.is_empty() {
            return Err(PolicyError::Schema("caveats.audience must be non-empty".into()));
        }
        if self.meta.policy_id.is_empty() {
            return Err(PolicyError::Schema("meta.policy_id must be non-empty".into()));
        }
        let mut op_ids = BTreeSet::new();
        for op in &self.ops {
            if op.resource.is_empty() || op.action.is_empty() {
                return Err(PolicyError::Schema(format!(
                    "op `{}` has empty resource or action",
                    op.op_id
                )));
            }
            if !op_ids.insert(op.op_id.as_str()) {
                return Err(PolicyError::Schema(format!(
                    "duplicate op_id `{}`",
                    op.op_id
                )));
            }
            for q in op.scope.keys() {
                check_qualifier(q)?;
            }
        }
        for (profile, ops) in &self.cap_profiles {
            for op_id in ops {
                if !op_ids.contains(op_id.as_str()) {
                    return Err(PolicyError::DanglingRef(format!(
                        "profile `{profile}` references unknown op `{op_id}`"
                    )));
                }
            }
        }
        for (role, profiles) in &self.cap_profiles_default {
            for profile in profiles {
                if !self.cap_profiles.contains_key(profile) {
                    return Err(PolicyError::DanglingRef(format!(
                        "default mapping for role `{role}` references unknown profile `{profile}`"
                    )));
                }
            }
        }
        for p in &self.caveats.prohibitions {
            for (q, set) in &p.qualifiers {
                check_qualifier(q)?;
                if set.is_empty() {
                    return Err(PolicyError::Schema(format!(
                        "prohibition qualifier `{q}` has an empty value-set"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn canonical_bytes(&self) -> Result<Vec<u8>, PolicyError> {
        Ok(canonical_json(self)?.into_bytes())
    }

    /// SHA-256 of the canonical bytes, base64url. Cited by tokens and
    /// decision records.
    pub fn digest(&self) -> Result<String, PolicyError> {
        Ok(sha256_b64url(&self.canonical_bytes()?))
    }

    /// Profiles granted by default for a role, if the policy declares any.
    pub fn default_profiles(&self, role: &str) -> Vec<String> {
        self.cap_profiles_default
            .get(role)
            .cloned()
            .unwrap_or_default()
    }
}

fn check_qualifier(name: &str) -> Result<(), PolicyError> {
    if REGISTERED_QUALIFIERS.contains(&name) {
        Ok(())
    } else {
        Err(PolicyError::UnknownQualifier(name.to_string()))
    }
}

// ---- compilation ----

/// Compile the granted profiles into the canonical, deduplicated union of
/// capability tuples. Pure: same inputs, byte-identical output.
pub fn compile_tuples(
    policy: &PolicyArtifact,
    profiles: &[String],
) -> Result<Vec<CapabilityTuple>, PolicyError> {
    let mut op_ids: BTreeSet<&str> = BTreeSet::new();
    for profile in profiles {
        let ops = policy
            .cap_profiles
            .get(profile)
            .ok_or_else(|| PolicyError::UnknownProfile(profile.clone()))?;
        for op_id in ops {
            op_ids.insert(op_id);
        }
    }
    let mut tuples: BTreeSet<CapabilityTuple> = BTreeSet::new();
    for op in &policy.ops {
        if !op_ids.contains(op.op_id.as_str()) {
            continue;
        }
        let scope: BTreeMap<String, BTreeSet<ScopeValue>> = op
            .scope
            .iter()
            .map(|(q, v)| (q.clone(), BTreeSet::from([v.clone()])))
            .collect();
        tuples.insert(CapabilityTuple {
            resource: op.resource.clone(),
            action: op.action.clone(),
            scope,
            caveats: TupleCaveats {
                audience: policy.caveats.audience.clone(),
                inherit_prohibitions: true,
                validity: ValidityRef::Token,
                delegation_limit: 0,
            },
        });
    }
    // BTreeSet iteration order is the canonical sort: resource, then
    // action, then scope, then caveats.
    Ok(tuples.into_iter().collect())
}

/// True iff the tuple admits the request: resource, action and audience
/// equal, and every qualifier the tuple constrains is supplied by the
/// request with a value inside the tuple's value-set. Qualifiers absent
/// from the tuple are unconstrained; extra request qualifiers do not block.
pub fn covers(tuple: &CapabilityTuple, request: &ExecutionTuple) -> bool {
    tuple.resource == request.resource
        && tuple.action == request.action
        && tuple.caveats.audience == request.audience
        && tuple.scope.iter().all(|(q, allowed)| {
            request
                .qualifiers
                .get(q)
                .is_some_and(|v| allowed.contains(v))
        })
}

/// True iff the request matches no prohibition pattern. Prohibitions take
/// precedence over any allow (deny wins).
pub fn check_prohibitions(caveats: &GlobalCaveats, request: &ExecutionTuple) -> bool {
    !caveats.prohibitions.iter().any(|p| prohibition_matches(p, request))
}

fn prohibition_matches(p: &ProhibitionPattern, request: &ExecutionTuple) -> bool {
    p.resource.as_deref().is_none_or(|r| r == request.resource)
        && p.action.as_deref().is_none_or(|a| a == request.action)
        && p.qualifiers.iter().all(|(q, set)| {
            request
                .qualifiers
                .get(q)
                .is_some_and(|v| set.contains(v))
        })
}
