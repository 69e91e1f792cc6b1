//! Organizational key onboarding and the federation trust registry.
//!
//! The registry is the only mutable source of trust anchors. Verifiers
//! never call it on the request path: they hold immutable `TrustAnchorSet`
//! snapshots and refresh them out of band. Every mutation bumps the
//! snapshot version, and each decision cites the version it used.
//!
//! Rotated and revoked keys are treated identically during verification:
//! not active means not an anchor.

use crate::jose::{canonical_json, sha256_b64url, Jwk, JoseError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("duplicate_active_key: org `{0}` already has an active {1} key")]
    DuplicateActiveKey(String, KeyRole),
    #[error("malformed_key: {0}")]
    MalformedKey(String),
    #[error("identity_mismatch: caller `{0}` cannot register for org `{1}`")]
    IdentityMismatch(String, String),
    #[error("unknown_org: no active {1} key for `{0}`")]
    UnknownOrg(String, KeyRole),
    #[error("invalid_validity: not_before must precede not_after")]
    InvalidValidity,
    #[error("snapshot digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("registry storage: {0}")]
    Storage(String),
}

impl From<JoseError> for RegistryError {
    fn from(e: JoseError) -> Self {
        RegistryError::MalformedKey(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyStatus {
    Active,
    Rotated,
    Revoked,
}

/// Role of a registered key. Org roots anchor organizational identity;
/// issuer keys sign capability tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyRole {
    OrgRoot,
    Issuer,
}

impl std::fmt::Display for KeyRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KeyRole::OrgRoot => write!(f, "org_root"),
            KeyRole::Issuer => write!(f, "issuer"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgKeyRecord {
    pub org_id: String,
    pub role: KeyRole,
    pub public_key: Jwk,
    pub thumbprint: String,
    pub status: KeyStatus,
    pub not_before: i64,
    pub not_after: i64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl OrgKeyRecord {
    pub fn is_active(&self) -> bool {
        self.status == KeyStatus::Active
    }
}

/// Immutable snapshot of the accepted trust anchors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustAnchorSet {
    pub version: u64,
    pub anchors: BTreeMap<String, OrgKeyRecord>,
    pub snapshot_digest: String,
}

/// Export-file image: anchors flattened to a thumbprint-sorted list.
#[derive(Serialize, Deserialize)]
struct AnchorExport {
    version: u64,
    anchors: Vec<OrgKeyRecord>,
    snapshot_digest: String,
}

impl TrustAnchorSet {
    fn build(version: u64, anchors: BTreeMap<String, OrgKeyRecord>) -> Self {
        let digest = Self::compute_digest(version, &anchors);
        TrustAnchorSet {
            version,
            anchors,
            snapshot_digest: digest,
        }
    }

    fn compute_digest(version: u64, anchors: &BTreeMap<String, OrgKeyRecord>) -> String {
        let records: Vec<&OrgKeyRecord> = anchors.values().collect();
        let body = serde_json::json!({ "version": version, "anchors": records });
        sha256_b64url(
            canonical_json(&body)
                .expect("anchor records contain no floats")
                .as_bytes(),
        )
    }

    /// Look up an anchor by thumbprint, yielding it only when active.
    pub fn active_anchor(&self, thumbprint: &str) -> Option<&OrgKeyRecord> {
        self.anchors.get(thumbprint).filter(|r| r.is_active())
    }

    /// Canonical export-file bytes (anchors as a sorted list).
    pub fn export_bytes(&self) -> Vec<u8> {
        let export = AnchorExport {
            version: self.version,
            anchors: self.anchors.values().cloned().collect(),
            snapshot_digest: self.snapshot_digest.clone(),
        };
        canonical_json(&export)
            .expect("anchor records contain no floats")
            .into_bytes()
    }

    /// Parse an export file, recomputing and checking the digest.
    pub fn from_export_bytes(bytes: &[u8]) -> Result<Self, RegistryError> {
        let export: AnchorExport = serde_json::from_slice(bytes)
            .map_err(|e| RegistryError::Storage(format!("anchor file parse: {e}")))?;
        let mut anchors = BTreeMap::new();
        for record in export.anchors {
            let recomputed = record.public_key.thumbprint()?;
            if recomputed != record.thumbprint {
                return Err(RegistryError::MalformedKey(format!(
                    "record thumbprint `{}` does not match its key",
                    record.thumbprint
                )));
            }
            anchors.insert(record.thumbprint.clone(), record);
        }
        let expected = Self::compute_digest(export.version, &anchors);
        if expected != export.snapshot_digest {
            return Err(RegistryError::DigestMismatch {
                expected,
                found: export.snapshot_digest,
            });
        }
        Ok(TrustAnchorSet {
            version: export.version,
            anchors,
            snapshot_digest: export.snapshot_digest,
        })
    }
}

// ---- registry ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum RegistryEvent {
    Registered { record: OrgKeyRecord },
    StatusChanged { thumbprint: String, status: KeyStatus },
}

/// Single-writer registry: append-only event log plus in-memory index.
pub struct TrustRegistry {
    records: Vec<OrgKeyRecord>,
    version: u64,
    log_path: Option<PathBuf>,
}

impl TrustRegistry {
    /// In-memory registry (tests, ephemeral hubs).
    pub fn new() -> Self {
        TrustRegistry {
            records: Vec::new(),
            version: 0,
            log_path: None,
        }
    }

    /// File-backed registry; replays the event log if present.
    pub fn open<P: AsRef<Path>>(path: P) -> Result<Self, RegistryError> {
        let path = path.as_ref().to_path_buf();
        let mut reg = TrustRegistry {
            records: Vec::new(),
            version: 0,
            log_path: None,
        };
        if path.exists() {
            let file = File::open(&path).map_err(|e| RegistryError::Storage(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| RegistryError::Storage(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: RegistryEvent = serde_json::from_str(&line)
                    .map_err(|e| RegistryError::Storage(format!("log replay: {e}")))?;
                reg.apply(event);
            }
        }
        reg.log_path = Some(path);
        Ok(reg)
    }

    fn apply(&mut self, event: RegistryEvent) {
        match event {
            RegistryEvent::Registered { record } => self.records.push(record),
            RegistryEvent::StatusChanged { thumbprint, status } => {
                for r in &mut self.records {
                    if r.thumbprint == thumbprint {
                        r.status = status;
                    }
                }
            }
        }
        self.version += 1;
    }

    fn append(&mut self, event: RegistryEvent) -> Result<(), RegistryError> {
        if let Some(path) = &self.log_path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| RegistryError::Storage(e.to_string()))?;
            let line = serde_json::to_string(&event)
                .map_err(|e| RegistryError::Storage(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| RegistryError::Storage(e.to_string()))?;
        }
        self.apply(event);
        Ok(())
    }

    fn active_record(&self, org_id: &str, role: KeyRole) -> Option<&OrgKeyRecord> {
        self.records
            .iter()
            .find(|r| r.org_id == org_id && r.role == role && r.is_active())
    }

    /// Register a new organizational key. `caller` is the authenticated
    /// edge identity when the call arrives over the federation boundary;
    /// operator-local invocations pass `None`.
    pub fn register_org(
        &mut self,
        caller: Option<&str>,
        org_id: &str,
        role: KeyRole,
        public_key: Jwk,
        not_before: i64,
        not_after: i64,
    ) -> Result<OrgKeyRecord, RegistryError> {
        if let Some(caller) = caller {
            if caller != org_id {
                return Err(RegistryError::IdentityMismatch(
                    caller.to_string(),
                    org_id.to_string(),
                ));
            }
        }
        if not_before >= not_after {
            return Err(RegistryError::InvalidValidity);
        }
        // Ed25519 only, public material only.
        public_key.as_ed25519()?;
        if public_key.has_private_material() {
            return Err(RegistryError::MalformedKey(
                "registry stores public keys only".into(),
            ));
        }
        if self.active_record(org_id, role).is_some() {
            return Err(RegistryError::DuplicateActiveKey(org_id.to_string(), role));
        }
        let record = OrgKeyRecord {
            org_id: org_id.to_string(),
            role,
            thumbprint: public_key.thumbprint()?,
            public_key,
            status: KeyStatus::Active,
            not_before,
            not_after,
            metadata: BTreeMap::new(),
        };
        self.append(RegistryEvent::Registered {
            record: record.clone(),
        })?;
        Ok(record)
    }

    /// Retire the active key for (org, role) and install `new_key`. The
    /// old record becomes `rotated` and is no longer a verification
    /// anchor; the new record inherits the old validity window unless a
    /// fresh one is given.
    pub fn rotate_key(
        &mut self,
        org_id: &str,
        role: KeyRole,
        new_key: Jwk,
        validity: Option<(i64, i64)>,
    ) -> Result<TrustAnchorSet, RegistryError> {
        new_key.as_ed25519()?;
        if new_key.has_private_material() {
            return Err(RegistryError::MalformedKey(
                "registry stores public keys only".into(),
            ));
        }
        let old = self
            .active_record(org_id, role)
            .ok_or_else(|| RegistryError::UnknownOrg(org_id.to_string(), role))?
            .clone();
        let (not_before, not_after) = validity.unwrap_or((old.not_before, old.not_after));
        if not_before >= not_after {
            return Err(RegistryError::InvalidValidity);
        }
        self.append(RegistryEvent::StatusChanged {
            thumbprint: old.thumbprint.clone(),
            status: KeyStatus::Rotated,
        })?;
        let record = OrgKeyRecord {
            org_id: org_id.to_string(),
            role,
            thumbprint: new_key.thumbprint()?,
            public_key: new_key,
            status: KeyStatus::Active,
            not_before,
            not_after,
            metadata: BTreeMap::new(),
        };
        self.append(RegistryEvent::Registered { record })?;
        Ok(self.snapshot_anchors())
    }

    /// Mark the active key for (org, role) revoked.
    pub fn revoke_key(&mut self, org_id: &str, role: KeyRole) -> Result<TrustAnchorSet, RegistryError> {
        let old = self
            .active_record(org_id, role)
            .ok_or_else(|| RegistryError::UnknownOrg(org_id.to_string(), role))?
            .clone();
        self.append(RegistryEvent::StatusChanged {
            thumbprint: old.thumbprint,
            status: KeyStatus::Revoked,
        })?;
        Ok(self.snapshot_anchors())
    }

    /// Immutable snapshot of all records keyed by thumbprint.
    pub fn snapshot_anchors(&self) -> TrustAnchorSet {
        let anchors: BTreeMap<String, OrgKeyRecord> = self
            .records
            .iter()
            .map(|r| (r.thumbprint.clone(), r.clone()))
            .collect();
        TrustAnchorSet::build(self.version, anchors)
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

impl Default for TrustRegistry {
    fn default() -> Self {
        Self::new()
    }
}
