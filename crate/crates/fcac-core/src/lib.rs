//! Constitutional-governance trust chain for federated computation.
//!
//! The chain runs: organizational key onboarding into a trust registry
//! ([`registry`]), deterministic compilation of policy profiles into
//! capability tuples ([`policy`]), holder-bound capability tokens
//! ([`tokens`]), per-request possession proofs ([`proofs`]), quorum-
//! approved sovereignty envelopes ([`envelope`]), and a fail-closed
//! admission verifier emitting hash-chained decision records
//! ([`admission`], audited by [`audit`]).
//!
//! Every verification path is offline: verifiers consume immutable anchor
//! and envelope snapshots, never a live registry. All digests are SHA-256
//! over canonical JSON (sorted keys, no floats), base64url unpadded.

pub mod admission;
pub mod audit;
pub mod envelope;
pub mod jose;
pub mod keys;
pub mod policy;
pub mod proofs;
pub mod registry;
pub mod time;
pub mod tokens;

pub use admission::{
    AdmissionDecision, AdmissionRequest, DecisionLog, DecisionRecord, Outcome, ReasonCode,
    Verifier, VerifierConfigError,
};
pub use audit::{verify_decision_log, AuditFinding, AuditReport};
pub use envelope::{
    CallerRole, Envelope, EnvelopeState, EnvelopeStatusEntry, EnvelopeStatusView, EnvelopeStore,
    VerificationSession,
};
pub use jose::Jwk;
pub use keys::{KeyPair, Keystore};
pub use policy::{
    compile_tuples, covers, CapabilityTuple, ExecutionTuple, PolicyArtifact, ScopeValue,
};
pub use proofs::{build_proof, verify_proof, PossessionProof, ReplayCache};
pub use registry::{KeyRole, KeyStatus, OrgKeyRecord, TrustAnchorSet, TrustRegistry};
pub use time::{Clock, FixedClock, SystemClock};
pub use tokens::{mint_ect, parse_ect, EnvelopeCapabilityToken, MintRequest};
