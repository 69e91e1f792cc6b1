//! Sovereignty-envelope lifecycle: k-of-n bind initialization, out-of-band
//! verification codes, session claiming, approvals, and activation with a
//! validity window.
//!
//! The state machine is monotone: Draft → PendingApprovals → Active →
//! Expired. Active is reached at exactly the k-th distinct approval and
//! only reported inside [nbf, exp]. Verification codes are 6-digit,
//! single-use, TTL-bounded, and collision-checked among live sessions.
//!
//! All mutations funnel through `&mut self`; callers serialize access
//! (the gateway holds the store behind a lock). Persistence is an
//! append-only event log replayed on open.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;
use uuid::Uuid;

/// Verification codes live this long after issuance.
pub const CODE_TTL_SECS: i64 = 600;

/// Default envelope validity window when the hub supplies none.
pub const DEFAULT_VALIDITY_SECS: i64 = 30 * 86_400;

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("identity_not_hub")]
    IdentityNotHub,
    #[error("identity_not_admin")]
    IdentityNotAdmin,
    #[error("bad_quorum: {0}")]
    BadQuorum(String),
    #[error("no_pending_session")]
    NoPendingSession,
    #[error("invalid_code")]
    InvalidCode,
    #[error("already_claimed")]
    AlreadyClaimed,
    #[error("session_not_claimed")]
    SessionNotClaimed,
    #[error("duplicate_approval")]
    DuplicateApproval,
    #[error("unknown_envelope: {0}")]
    UnknownEnvelope(String),
    #[error("envelope storage: {0}")]
    Storage(String),
}

/// Authenticated identity at the federation edge, as the envelope
/// ceremony sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallerRole {
    Hub,
    OrgAdmin(String),
    Member(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeState {
    Draft,
    PendingApprovals,
    Active,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub envelope_id: Uuid,
    pub participants: Vec<String>,
    pub quorum_k: u32,
    pub quorum_n: u32,
    pub state: EnvelopeState,
    pub approvals: BTreeSet<String>,
    pub nbf: i64,
    pub exp: i64,
    pub created_by: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Issued,
    Claimed,
    Consumed,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationSession {
    pub session_id: Uuid,
    pub envelope_id: Uuid,
    pub participant: String,
    pub code: String,
    pub state: SessionState,
    pub issued_at: i64,
    pub ttl_secs: i64,
}

impl VerificationSession {
    fn expired(&self, now: i64) -> bool {
        now > self.issued_at + self.ttl_secs
    }
}

/// Entry in the envelope-status snapshot handed to the admission verifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeStatusEntry {
    pub state: EnvelopeState,
    pub nbf: i64,
    pub exp: i64,
}

impl EnvelopeStatusEntry {
    pub fn is_active(&self) -> bool {
        self.state == EnvelopeState::Active
    }
}

/// Immutable envelope-state snapshot keyed by envelope id.
pub type EnvelopeStatusView = BTreeMap<String, EnvelopeStatusEntry>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum EnvelopeEvent {
    BindInit {
        envelope: Envelope,
        sessions: Vec<VerificationSession>,
    },
    SessionClaimed {
        session_id: Uuid,
    },
    ApprovalRecorded {
        envelope_id: Uuid,
        participant: String,
        session_id: Uuid,
    },
}

pub struct EnvelopeStore {
    envelopes: BTreeMap<Uuid, Envelope>,
    sessions: BTreeMap<Uuid, VerificationSession>,
    rng: ChaCha20Rng,
    log_path: Option<PathBuf>,
}

impl EnvelopeStore {
    /// Ephemeral store with OS-seeded randomness.
    pub fn new() -> Self {
        Self::with_rng(ChaCha20Rng::from_entropy())
    }

    /// Deterministic store for tests and scripted ceremonies.
    pub fn with_seed(seed: u64) -> Self {
        Self::with_rng(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn with_rng(rng: ChaCha20Rng) -> Self {
        EnvelopeStore {
            envelopes: BTreeMap::new(),
            sessions: BTreeMap::new(),
            rng,
            log_path: None,
        }
    }

    /// File-backed store; replays the event log if present. Codes are
    /// secrets, so the log is owner-only.
    pub fn open<P: AsRef<Path>>(path: P, rng: ChaCha20Rng) -> Result<Self, EnvelopeError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self::with_rng(rng);
        if path.exists() {
            let file = File::open(&path).map_err(|e| EnvelopeError::Storage(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| EnvelopeError::Storage(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: EnvelopeEvent = serde_json::from_str(&line)
                    .map_err(|e| EnvelopeError::Storage(format!("log replay: {e}")))?;
                store.apply(event);
            }
        }
        store.log_path = Some(path);
        Ok(store)
    }

    fn apply(&mut self, event: EnvelopeEvent) {
        match event {
            EnvelopeEvent::BindInit { envelope, sessions } => {
                self.envelopes.insert(envelope.envelope_id, envelope);
                for s in sessions {
                    self.sessions.insert(s.session_id, s);
                }
            }
            EnvelopeEvent::SessionClaimed { session_id } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    s.state = SessionState::Claimed;
                }
            }
            EnvelopeEvent::ApprovalRecorded {
                envelope_id,
                participant,
                session_id,
            } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    s.state = SessionState::Consumed;
                }
                if let Some(env) = self.envelopes.get_mut(&envelope_id) {
                    env.approvals.insert(participant);
                    if env.state == EnvelopeState::PendingApprovals
                        && env.approvals.len() as u32 >= env.quorum_k
                    {
                        env.state = EnvelopeState::Active;
                    }
                }
            }
        }
    }

    fn append(&mut self, event: EnvelopeEvent) -> Result<(), EnvelopeError> {
        if let Some(path) = &self.log_path {
            let created = !path.exists();
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| EnvelopeError::Storage(e.to_string()))?;
            if created {
                restrict_permissions(path)?;
            }
            let line = serde_json::to_string(&event)
                .map_err(|e| EnvelopeError::Storage(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| EnvelopeError::Storage(e.to_string()))?;
        }
        self.apply(event);
        Ok(())
    }

    fn fresh_uuid(&mut self) -> Uuid {
        let mut bytes = [0u8; 16];
        self.rng.fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid()
    }

    /// Uniform 6-digit code, re-drawn while it collides with a live
    /// session.
    fn fresh_code(&mut self) -> String {
        loop {
            let n: u32 = self.rng.gen_range(0..1_000_000);
            let code = format!("{n:06}");
            let live = self.sessions.values().any(|s| {
                s.code == code
                    && matches!(s.state, SessionState::Issued | SessionState::Claimed)
            });
            if !live {
                return code;
            }
        }
    }

    // ---- operations ----

    /// Create an envelope in PendingApprovals and issue one verification
    /// session per participant. Hub only.
    pub fn bind_init(
        &mut self,
        caller: &CallerRole,
        participants: Vec<String>,
        k: u32,
        n: u32,
        validity: Option<(i64, i64)>,
        now: i64,
    ) -> Result<Envelope, EnvelopeError> {
        if *caller != CallerRole::Hub {
            return Err(EnvelopeError::IdentityNotHub);
        }
        if k < 1 || k > n {
            return Err(EnvelopeError::BadQuorum(format!("require 1 <= k <= n, got k={k}, n={n}")));
        }
        if n as usize != participants.len() {
            return Err(EnvelopeError::BadQuorum(format!(
                "n={n} does not match {} participants",
                participants.len()
            )));
        }
        let distinct: BTreeSet<&String> = participants.iter().collect();
        if distinct.len() != participants.len() {
            return Err(EnvelopeError::BadQuorum("participants must be distinct".into()));
        }
        let (nbf, exp) = validity.unwrap_or((now, now + DEFAULT_VALIDITY_SECS));
        if nbf >= exp {
            return Err(EnvelopeError::BadQuorum("validity window is empty".into()));
        }
        let envelope = Envelope {
            envelope_id: self.fresh_uuid(),
            participants: participants.clone(),
            quorum_k: k,
            quorum_n: n,
            state: EnvelopeState::PendingApprovals,
            approvals: BTreeSet::new(),
            nbf,
            exp,
            created_by: "hub".to_string(),
        };
        let sessions: Vec<VerificationSession> = participants
            .iter()
            .map(|p| {
                let session_id = self.fresh_uuid();
                let code = self.fresh_code();
                VerificationSession {
                    session_id,
                    envelope_id: envelope.envelope_id,
                    participant: p.clone(),
                    code,
                    state: SessionState::Issued,
                    issued_at: now,
                    ttl_secs: CODE_TTL_SECS,
                }
            })
            .collect();
        self.append(EnvelopeEvent::BindInit {
            envelope: envelope.clone(),
            sessions,
        })?;
        Ok(envelope)
    }

    /// Show the pending verification code for the calling org's admin.
    pub fn verify_start(
        &mut self,
        caller: &CallerRole,
        now: i64,
    ) -> Result<VerificationSession, EnvelopeError> {
        let org = match caller {
            CallerRole::OrgAdmin(org) => org.clone(),
            _ => return Err(EnvelopeError::IdentityNotAdmin),
        };
        let session = self
            .sessions
            .values()
            .find(|s| {
                s.participant == org && s.state == SessionState::Issued && !s.expired(now)
            })
            .cloned();
        session.ok_or(EnvelopeError::NoPendingSession)
    }

    /// Exchange a displayed code for a claimed session handle. Hub only.
    pub fn session_claim(
        &mut self,
        caller: &CallerRole,
        code: &str,
        now: i64,
    ) -> Result<VerificationSession, EnvelopeError> {
        if *caller != CallerRole::Hub {
            return Err(EnvelopeError::IdentityNotHub);
        }
        let found = self
            .sessions
            .values()
            .filter(|s| s.code == code)
            .max_by_key(|s| (s.issued_at, s.session_id));
        let session = match found {
            None => return Err(EnvelopeError::InvalidCode),
            Some(s) => s.clone(),
        };
        match session.state {
            SessionState::Claimed | SessionState::Consumed => Err(EnvelopeError::AlreadyClaimed),
            SessionState::Expired => Err(EnvelopeError::InvalidCode),
            SessionState::Issued if session.expired(now) => Err(EnvelopeError::InvalidCode),
            SessionState::Issued => {
                self.append(EnvelopeEvent::SessionClaimed {
                    session_id: session.session_id,
                })?;
                Ok(self.sessions[&session.session_id].clone())
            }
        }
    }

    /// Record the approval carried by a claimed session. Reaching the
    /// k-th distinct approval activates the envelope. Hub only.
    pub fn bind_approve(
        &mut self,
        caller: &CallerRole,
        session_id: Uuid,
        _now: i64,
    ) -> Result<Envelope, EnvelopeError> {
        if *caller != CallerRole::Hub {
            return Err(EnvelopeError::IdentityNotHub);
        }
        let session = self
            .sessions
            .get(&session_id)
            .cloned()
            .ok_or(EnvelopeError::SessionNotClaimed)?;
        match session.state {
            // Re-approving an already consumed session is the duplicate
            // path; an unclaimed or expired session was never claimed.
            SessionState::Consumed => return Err(EnvelopeError::DuplicateApproval),
            SessionState::Issued | SessionState::Expired => {
                return Err(EnvelopeError::SessionNotClaimed)
            }
            SessionState::Claimed => {}
        }
        let envelope = self
            .envelopes
            .get(&session.envelope_id)
            .ok_or_else(|| EnvelopeError::UnknownEnvelope(session.envelope_id.to_string()))?;
        if envelope.approvals.contains(&session.participant) {
            return Err(EnvelopeError::DuplicateApproval);
        }
        self.append(EnvelopeEvent::ApprovalRecorded {
            envelope_id: session.envelope_id,
            participant: session.participant.clone(),
            session_id,
        })?;
        Ok(self.envelopes[&session.envelope_id].clone())
    }

    /// Effective state at `now`: quorum and the validity window together
    /// decide Active; past exp always reads Expired.
    pub fn envelope_status(
        &self,
        envelope_id: &Uuid,
        now: i64,
    ) -> Result<EnvelopeStatusEntry, EnvelopeError> {
        let env = self
            .envelopes
            .get(envelope_id)
            .ok_or_else(|| EnvelopeError::UnknownEnvelope(envelope_id.to_string()))?;
        Ok(EnvelopeStatusEntry {
            state: effective_state(env, now),
            nbf: env.nbf,
            exp: env.exp,
        })
    }

    /// Immutable status snapshot over all envelopes, keyed by the
    /// lowercase hyphenated UUID form.
    pub fn status_view(&self, now: i64) -> EnvelopeStatusView {
        self.envelopes
            .values()
            .map(|env| {
                (
                    env.envelope_id.to_string(),
                    EnvelopeStatusEntry {
                        state: effective_state(env, now),
                        nbf: env.nbf,
                        exp: env.exp,
                    },
                )
            })
            .collect()
    }

    pub fn envelope(&self, envelope_id: &Uuid) -> Option<&Envelope> {
        self.envelopes.get(envelope_id)
    }

    pub fn sessions_for(&self, envelope_id: &Uuid) -> Vec<&VerificationSession> {
        self.sessions
            .values()
            .filter(|s| s.envelope_id == *envelope_id)
            .collect()
    }
}

impl Default for EnvelopeStore {
    fn default() -> Self {
        Self::new()
    }
}

fn effective_state(env: &Envelope, now: i64) -> EnvelopeState {
    if now > env.exp {
        return EnvelopeState::Expired;
    }
    let quorum_met = env.approvals.len() as u32 >= env.quorum_k;
    if quorum_met && now >= env.nbf {
        EnvelopeState::Active
    } else {
        EnvelopeState::PendingApprovals
    }
}

#[cfg(unix)]
fn restrict_permissions(path: &Path) -> Result<(), EnvelopeError> {
    use std::os::unix::fs::PermissionsExt;
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))
        .map_err(|e| EnvelopeError::Storage(e.to_string()))
}

#[cfg(not(unix))]
fn restrict_permissions(_path: &Path) -> Result<(), EnvelopeError> {
    Ok(())
}
