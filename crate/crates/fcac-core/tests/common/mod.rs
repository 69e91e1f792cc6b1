//! Shared fixture for verifier-level integration tests: a compiled
//! policy, a registered issuer, a bound holder, an active envelope, and
//! helpers to assemble admission requests.

// Each test binary compiles this module separately and uses a different
// subset of it.
#![allow(dead_code)]

use fcac_core::admission::{AdmissionDecision, AdmissionRequest, Verifier};
use fcac_core::envelope::{EnvelopeState, EnvelopeStatusEntry, EnvelopeStatusView};
use fcac_core::keys::{KeyPair, Keystore};
use fcac_core::policy::{ExecutionTuple, PolicyArtifact, ScopeValue};
use fcac_core::proofs::{build_proof, ReplayCache};
use fcac_core::registry::{KeyRole, TrustAnchorSet, TrustRegistry};
use fcac_core::tokens::{mint_ect, EnvelopeCapabilityToken, MintRequest};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

pub const NOW: i64 = 1_750_000_000;
pub const URI: &str = "https://gateway.local/admission/check";
pub const AUD: &str = "svc:fl-gateway:eu";
pub const ENVELOPE_ID: &str = "0a1b2c3d-0000-4000-8000-000000000001";

pub const POLICY_JSON: &str = r#"{
  "policy_version": "1.1",
  "ops": [
    {"op_id": "train_petct_A", "resource": "PET-CT", "action": "train",
     "scope": {"cohort": "A", "purpose": "model_training"}},
    {"op_id": "predict_petct_even_only", "resource": "PET-CT", "action": "predict",
     "scope": {"cohort": "EVEN_ONLY", "purpose": "model_prediction"}},
    {"op_id": "export_model_params", "resource": "MODEL_PARAMS", "action": "export",
     "scope": {"agg": "aggregated", "pii": false, "contact": false},
     "output_class": "model_parameters"},
    {"op_id": "read_tumor_aggregates", "resource": "TUMOR_MEASUREMENTS", "action": "read",
     "scope": {"agg": "aggregated", "pii": false, "contact": false}}
  ],
  "cap_profiles": {
    "capset:trainer_A": ["train_petct_A"],
    "capset:predictor_even": ["predict_petct_even_only"],
    "capset:egress_safe": ["export_model_params"],
    "capset:data_scientist": ["read_tumor_aggregates", "export_model_params"]
  },
  "cap_profiles_default": {
    "member": ["capset:data_scientist"],
    "trainer": ["capset:trainer_A", "capset:egress_safe"]
  },
  "caveats": {
    "audience": "svc:fl-gateway:eu",
    "prohibitions": [{"resource": "PET-CT", "action": "export"}]
  },
  "meta": {"policy_id": "pol:petct-fl-demo", "manifest_id": "mft:2025-06-demo"}
}"#;

pub struct Fixture {
    pub policy: PolicyArtifact,
    pub verifier: Verifier,
    pub anchors: TrustAnchorSet,
    pub envelopes: EnvelopeStatusView,
    pub issuer: KeyPair,
    pub holder: KeyPair,
    pub intruder: KeyPair,
    pub ect: EnvelopeCapabilityToken,
    pub keystore: Keystore,
    _dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_profiles(&["capset:trainer_A", "capset:data_scientist"])
    }

    pub fn with_profiles(profiles: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let keystore = Keystore::open(dir.path()).unwrap();
        let issuer = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(100));
        keystore.store("issuer", &issuer, false).unwrap();
        let mut reg = TrustRegistry::new();
        reg.register_org(
            None,
            "org:hospital-a",
            KeyRole::Issuer,
            issuer.public_jwk(),
            NOW - 10_000,
            NOW + 1_000_000,
        )
        .unwrap();
        let anchors = reg.snapshot_anchors();
        let holder = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(101));
        let intruder = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(102));
        let policy = PolicyArtifact::from_bytes(POLICY_JSON.as_bytes()).unwrap();
        let ect = mint_ect(
            &policy,
            &MintRequest {
                issuer_key_handle: "issuer".into(),
                holder_jwk: holder.public_jwk(),
                profiles: profiles.iter().map(|s| s.to_string()).collect(),
                not_before: NOW - 600,
                not_after: NOW + 3_600,
                audience: AUD.into(),
                subject: "member:alice".into(),
                envelope_scope: Some(ENVELOPE_ID.into()),
                jti: Some("jti-fixture".into()),
            },
            &keystore,
            &anchors,
            NOW - 600,
        )
        .unwrap();
        let envelopes: EnvelopeStatusView = BTreeMap::from([(
            ENVELOPE_ID.to_string(),
            EnvelopeStatusEntry {
                state: EnvelopeState::Active,
                nbf: NOW - 1_000,
                exp: NOW + 100_000,
            },
        )]);
        Fixture {
            verifier: Verifier::from_policy(&policy, AUD).unwrap(),
            policy,
            anchors,
            envelopes,
            issuer,
            holder,
            intruder,
            ect,
            keystore,
            _dir: dir,
        }
    }

    /// The canonical ALLOW probe: aggregated tumor measurements, no PII,
    /// no contact.
    pub fn allow_execution(&self) -> ExecutionTuple {
        ExecutionTuple {
            resource: "TUMOR_MEASUREMENTS".into(),
            action: "read".into(),
            qualifiers: BTreeMap::from([
                ("agg".to_string(), ScopeValue::s("aggregated")),
                ("pii".to_string(), ScopeValue::Bool(false)),
                ("contact".to_string(), ScopeValue::Bool(false)),
            ]),
            audience: AUD.into(),
            envelope_id: ENVELOPE_ID.into(),
        }
    }

    pub fn request_for(&self, execution: ExecutionTuple, at: i64) -> AdmissionRequest {
        let proof = build_proof(&self.holder, "POST", URI, &self.ect.compact, at, None, None)
            .unwrap();
        AdmissionRequest {
            ect_compact: self.ect.compact.clone(),
            proof_compact: proof.compact,
            execution,
            method: "POST".into(),
            uri: URI.into(),
            received_at: at,
        }
    }

    pub fn allow_request(&self) -> AdmissionRequest {
        self.request_for(self.allow_execution(), NOW)
    }

    pub fn decide(&self, req: &AdmissionRequest) -> AdmissionDecision {
        self.decide_at(req, NOW)
    }

    pub fn decide_at(&self, req: &AdmissionRequest, at: i64) -> AdmissionDecision {
        self.verifier
            .decide(req, &self.anchors, &self.envelopes, &ReplayCache::default(), at)
    }
}
