//! Shared harness for gateway integration tests: a throwaway PKI, a
//! populated state bundle, a running gateway on an ephemeral port, and
//! per-identity HTTP clients.

// Each test binary compiles this module separately and uses a different
// subset of it.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rcgen::{BasicConstraints, CertificateParams, DnType, IsCa, KeyPair as RcKeyPair};
use tempfile::TempDir;
use uuid::Uuid;

use fcac_core::keys::{KeyPair, Keystore};
use fcac_core::registry::{KeyRole, TrustRegistry};
use fcac_core::time::{Clock, FixedClock, SystemClock};
use fcac_gateway::{GatewayConfig, GatewayError, RunningGateway};

pub const SERVER_NAME: &str = "verifier.local";
pub const AUDIENCE: &str = "svc:fl-gateway:eu";
pub const ORG_A: &str = "org:hospital-a";
pub const ORG_B: &str = "org:hospital-b";
pub const ISSUER_A_HANDLE: &str = "issuer-hospital-a";
pub const ISSUER_B_HANDLE: &str = "issuer-hospital-b";

/// Client certificate CNs issued by the test PKI.
pub const CLIENT_CNS: &[&str] = &[
    "hub",
    "admin:org:hospital-a",
    "admin:org:hospital-b",
    "member:alice",
];

pub fn samples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join("samples")
}

pub struct TestPki {
    pub ca_pem: String,
    pub server_cert_pem: String,
    pub server_key_pem: String,
    /// CN -> (certificate PEM, key PEM).
    pub clients: Vec<(String, String, String)>,
}

/// One CA signs the server certificate and every client certificate.
pub fn make_pki(server_sans: &[&str]) -> TestPki {
    let ca_key = RcKeyPair::generate().unwrap();
    let mut ca_params = CertificateParams::new(Vec::<String>::new()).unwrap();
    ca_params
        .distinguished_name
        .push(DnType::CommonName, "fcac test ca");
    ca_params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
    let ca_cert = ca_params.self_signed(&ca_key).unwrap();

    let server_key = RcKeyPair::generate().unwrap();
    let mut server_params =
        CertificateParams::new(server_sans.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            .unwrap();
    server_params
        .distinguished_name
        .push(DnType::CommonName, SERVER_NAME);
    let server_cert = server_params.signed_by(&server_key, &ca_cert, &ca_key).unwrap();

    let mut clients = Vec::new();
    for cn in CLIENT_CNS {
        let key = RcKeyPair::generate().unwrap();
        let mut params = CertificateParams::new(Vec::<String>::new()).unwrap();
        params.distinguished_name.push(DnType::CommonName, *cn);
        let cert = params.signed_by(&key, &ca_cert, &ca_key).unwrap();
        clients.push((cn.to_string(), cert.pem(), key.serialize_pem()));
    }

    TestPki {
        ca_pem: ca_cert.pem(),
        server_cert_pem: server_cert.pem(),
        server_key_pem: server_key.serialize_pem(),
        clients,
    }
}

pub struct TestGatewayBuilder {
    pub envelope_seed: Option<u64>,
    pub fixed_clock: Option<i64>,
    pub forwarded_trusted: Option<Vec<std::net::IpAddr>>,
    pub service_audience: String,
    pub server_sans: Vec<String>,
    pub expected_port: u16,
}

impl Default for TestGatewayBuilder {
    fn default() -> Self {
        TestGatewayBuilder {
            envelope_seed: Some(7),
            fixed_clock: None,
            forwarded_trusted: None,
            service_audience: AUDIENCE.to_string(),
            server_sans: vec![SERVER_NAME.to_string()],
            expected_port: 0,
        }
    }
}

impl TestGatewayBuilder {
    pub fn fixed_clock(mut self, now: i64) -> Self {
        self.fixed_clock = Some(now);
        self
    }

    pub fn forwarded(mut self, trusted: Vec<std::net::IpAddr>) -> Self {
        self.forwarded_trusted = Some(trusted);
        self
    }

    pub fn audience(mut self, audience: &str) -> Self {
        self.service_audience = audience.to_string();
        self
    }

    pub fn server_sans(mut self, sans: &[&str]) -> Self {
        self.server_sans = sans.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn try_spawn(self) -> Result<TestGateway, GatewayError> {
        let dir = tempfile::tempdir().unwrap();
        let pki = make_pki(&self.server_sans.iter().map(String::as_str).collect::<Vec<_>>());

        let pki_dir = dir.path().join("pki");
        std::fs::create_dir_all(&pki_dir).unwrap();
        let tls_cert = pki_dir.join("server.crt");
        // Serve the full chain: leaf first, then the CA.
        std::fs::write(&tls_cert, format!("{}{}", pki.server_cert_pem, pki.ca_pem)).unwrap();
        let tls_key = pki_dir.join("server.key");
        std::fs::write(&tls_key, &pki.server_key_pem).unwrap();
        let client_ca = pki_dir.join("clients-ca.crt");
        std::fs::write(&client_ca, &pki.ca_pem).unwrap();

        let policy_path = dir.path().join("policy.json");
        std::fs::copy(samples_dir().join("policy.json"), &policy_path).unwrap();

        let (clock, fixed): (Arc<dyn Clock>, Option<Arc<FixedClock>>) = match self.fixed_clock {
            Some(now) => {
                let fixed = Arc::new(FixedClock::new(now));
                (fixed.clone(), Some(fixed))
            }
            None => (Arc::new(SystemClock), None),
        };
        let base_now = clock.now();

        // Issuer keys live in the gateway keystore; their public halves
        // are registered anchors.
        let state_dir = dir.path().join("state");
        let keystore_dir = state_dir.join("keys");
        std::fs::create_dir_all(&keystore_dir).unwrap();
        let keystore = Keystore::open(&keystore_dir).unwrap();
        let issuer_a = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(100));
        let issuer_b = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(103));
        keystore.store(ISSUER_A_HANDLE, &issuer_a, false).unwrap();
        keystore.store(ISSUER_B_HANDLE, &issuer_b, false).unwrap();

        let mut registry = TrustRegistry::new();
        registry
            .register_org(
                None,
                ORG_A,
                KeyRole::Issuer,
                issuer_a.public_jwk(),
                base_now - 10_000,
                base_now + 10_000_000,
            )
            .unwrap();
        registry
            .register_org(
                None,
                ORG_B,
                KeyRole::Issuer,
                issuer_b.public_jwk(),
                base_now - 10_000,
                base_now + 10_000_000,
            )
            .unwrap();
        let anchors_path = state_dir.join("anchors.json");
        std::fs::write(&anchors_path, registry.snapshot_anchors().export_bytes()).unwrap();

        let config = GatewayConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], self.expected_port)),
            server_name: SERVER_NAME.to_string(),
            external_base_url: None,
            service_audience: self.service_audience.clone(),
            tls_cert,
            tls_key,
            client_ca,
            policy_path,
            anchors_path,
            keystore_dir,
            vault_root: state_dir.join("vault"),
            decision_log: state_dir.join("decisions.log"),
            envelope_log: state_dir.join("envelopes.log"),
            replay_window_secs: 600,
            skew_leeway_secs: 30,
            envelope_seed: self.envelope_seed,
            odd_plus_allowlist: vec![0],
            forwarded: self.forwarded_trusted.map(|trusted| fcac_gateway::ForwardedConfig {
                listen: SocketAddr::from(([127, 0, 0, 1], 0)),
                trusted_peers: trusted,
            }),
        };

        let rt = tokio::runtime::Runtime::new().unwrap();
        let clock_for_spawn = clock.clone();
        let gw = rt.block_on(RunningGateway::spawn_with_clock(config, clock_for_spawn))?;
        Ok(TestGateway {
            gw,
            clock,
            fixed,
            pki,
            issuer_a,
            issuer_b,
            holder: KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(201)),
            intruder: KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(202)),
            dir,
            rt,
        })
    }

    pub fn spawn(self) -> TestGateway {
        self.try_spawn().expect("gateway spawns")
    }
}

pub struct TestGateway {
    pub gw: RunningGateway,
    pub clock: Arc<dyn Clock>,
    /// Present when the gateway runs on a pinned clock; advance it to
    /// script expiry.
    pub fixed: Option<Arc<FixedClock>>,
    pub pki: TestPki,
    pub issuer_a: KeyPair,
    pub issuer_b: KeyPair,
    pub holder: KeyPair,
    pub intruder: KeyPair,
    pub dir: TempDir,
    // Dropped last: listener tasks live on this runtime.
    rt: tokio::runtime::Runtime,
}

impl TestGateway {
    pub fn spawn() -> Self {
        TestGatewayBuilder::default().spawn()
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.gw.base_url(), path)
    }

    fn client_pem(&self, cn: &str) -> (String, String) {
        let (_, cert, key) = self
            .pki
            .clients
            .iter()
            .find(|(name, _, _)| name == cn)
            .unwrap_or_else(|| panic!("no client certificate for CN {cn}"))
            .clone();
        (cert, key)
    }

    /// Blocking HTTPS client authenticated as the given CN.
    pub fn client(&self, cn: &str) -> reqwest::blocking::Client {
        let (cert, key) = self.client_pem(cn);
        let identity = reqwest::Identity::from_pem(format!("{key}{cert}").as_bytes())
            .expect("client identity parses");
        self.client_builder()
            .identity(identity)
            .build()
            .expect("client builds")
    }

    /// Blocking HTTPS client with no client certificate.
    pub fn anonymous_client(&self) -> reqwest::blocking::Client {
        self.client_builder().build().expect("client builds")
    }

    fn client_builder(&self) -> reqwest::blocking::ClientBuilder {
        let ca = reqwest::Certificate::from_pem(self.pki.ca_pem.as_bytes())
            .expect("ca certificate parses");
        reqwest::blocking::Client::builder()
            .use_rustls_tls()
            .add_root_certificate(ca)
            .resolve(SERVER_NAME, self.gw.addr)
            .timeout(std::time::Duration::from_secs(10))
    }

    /// Plain-HTTP client for the forwarded-identity listener.
    pub fn forwarded_url(&self, path: &str) -> String {
        let addr = self.gw.forwarded_addr.expect("forwarded listener configured");
        format!("http://{addr}{path}")
    }

    /// Drive the full envelope ceremony over HTTP: init as hub, fetch
    /// each participant's code as its admin, claim and approve as hub.
    /// Returns the envelope id and the state after the last approval.
    pub fn run_ceremony(&self, participants: &[&str], k: u32) -> (Uuid, String) {
        let hub = self.client("hub");
        let init: serde_json::Value = hub
            .post(self.url("/beta/bind/init"))
            .json(&serde_json::json!({
                "participants": participants,
                "quorum_k": k,
                "quorum_n": participants.len(),
            }))
            .send()
            .unwrap()
            .error_for_status()
            .unwrap()
            .json()
            .unwrap();
        let envelope_id = Uuid::parse_str(init["envelope_id"].as_str().unwrap()).unwrap();
        let mut last_state = init["state"].as_str().unwrap().to_string();
        for org in participants {
            let admin = self.client(&format!("admin:{org}"));
            let session: serde_json::Value = admin
                .get(self.url("/verify-start"))
                .send()
                .unwrap()
                .error_for_status()
                .unwrap()
                .json()
                .unwrap();
            let code = session["code"].as_str().unwrap();
            let claim: serde_json::Value = hub
                .get(self.url(&format!("/session/claim?code={code}")))
                .send()
                .unwrap()
                .error_for_status()
                .unwrap()
                .json()
                .unwrap();
            let approve: serde_json::Value = hub
                .post(self.url("/beta/bind/approve"))
                .json(&serde_json::json!({"session_id": claim["session_id"]}))
                .send()
                .unwrap()
                .error_for_status()
                .unwrap()
                .json()
                .unwrap();
            last_state = approve["state"].as_str().unwrap().to_string();
        }
        (envelope_id, last_state)
    }

    /// Mint an ECT over HTTP as the org admin, for the default holder.
    pub fn mint_ect_http(&self, profiles: &[&str], envelope_id: Option<&str>) -> String {
        let admin = self.client(&format!("admin:{ORG_A}"));
        let now = self.now();
        let response: serde_json::Value = admin
            .post(self.url("/mint_ect"))
            .json(&serde_json::json!({
                "issuer_key_handle": ISSUER_A_HANDLE,
                "holder_jwk": self.holder.public_jwk(),
                "profiles": profiles,
                "not_before": now - 60,
                "not_after": now + 3600,
                "audience": AUDIENCE,
                "subject": "member:alice",
                "envelope_scope": envelope_id,
            }))
            .send()
            .unwrap()
            .error_for_status()
            .unwrap()
            .json()
            .unwrap();
        response["ect"].as_str().unwrap().to_string()
    }

    /// Build a fresh possession proof over `ect` for `/admission/check`.
    pub fn fresh_proof(&self, ect: &str, signer: &KeyPair) -> String {
        fcac_core::proofs::build_proof(
            signer,
            "POST",
            &self.gw.admission_url(),
            ect,
            self.now(),
            None,
            None,
        )
        .unwrap()
        .compact
    }

    /// Post an admission request as the hub.
    pub fn admit(
        &self,
        ect: &str,
        proof: &str,
        body: &serde_json::Value,
    ) -> serde_json::Value {
        let hub = self.client("hub");
        hub.post(self.url("/admission/check"))
            .header("Authorization", format!("DPoP {ect}"))
            .header("DPoP", proof)
            .json(body)
            .send()
            .unwrap()
            .error_for_status()
            .unwrap()
            .json()
            .unwrap()
    }

    /// Execution tuple builder for admission bodies.
    pub fn execution(
        &self,
        resource: &str,
        action: &str,
        qualifiers: serde_json::Value,
        envelope_id: &str,
    ) -> serde_json::Value {
        serde_json::json!({
            "resource": resource,
            "action": action,
            "qualifiers": qualifiers,
            "audience": AUDIENCE,
            "envelope_id": envelope_id,
        })
    }
}
