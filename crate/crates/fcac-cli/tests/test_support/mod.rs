//! Harness for command-line end-to-end tests: a throwaway PKI written
//! to disk, a directory layout matching what the CLI and gateway expect,
//! an optional in-process gateway, and a subprocess runner for the
//! compiled `fcac` binary.

// Each test binary compiles this module separately and uses a different
// subset of it.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rcgen::{BasicConstraints, CertificateParams, DnType, IsCa, KeyPair as RcKeyPair};
use tempfile::TempDir;

use fcac_core::keys::{KeyPair, Keystore};
use fcac_core::registry::{KeyRole, TrustRegistry};
use fcac_core::time::{Clock, SystemClock};
use fcac_gateway::{GatewayConfig, RunningGateway};

pub const SERVER_NAME: &str = "verifier.local";
pub const AUDIENCE: &str = "svc:fl-gateway:eu";
pub const ORG_A: &str = "org:hospital-a";
pub const ORG_B: &str = "org:hospital-b";
pub const ISSUER_A_HANDLE: &str = "issuer-hospital-a";
pub const ISSUER_B_HANDLE: &str = "issuer-hospital-b";
pub const HUB_CN: &str = "hub";

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

fn cn_slug(cn: &str) -> String {
    cn.replace([':', '/'], "_")
}

/// On-disk paths for one client identity.
#[derive(Debug, Clone)]
pub struct ClientCred {
    pub cn: String,
    pub cert: PathBuf,
    pub key: PathBuf,
}

struct SpawnedGateway {
    gw: RunningGateway,
    // Dropped last: listener tasks live on this runtime.
    rt: tokio::runtime::Runtime,
}

/// Everything a CLI test needs on disk, plus an optional live gateway.
pub struct CliWorld {
    pub dir: TempDir,
    pub ca_cert: PathBuf,
    pub server_cert: PathBuf,
    pub server_key: PathBuf,
    pub clients: Vec<ClientCred>,
    /// Gateway-side state.
    pub keystore_dir: PathBuf,
    pub registry_path: PathBuf,
    pub anchors_path: PathBuf,
    pub policy_path: PathBuf,
    pub vault_root: PathBuf,
    pub decision_log: PathBuf,
    pub envelope_log: PathBuf,
    /// Keys held by callers, separate from the gateway keystore.
    pub client_keys_dir: PathBuf,
    gateway: Option<SpawnedGateway>,
}

impl CliWorld {
    /// Write the PKI and directory layout; no gateway yet.
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();

        let ca_key = RcKeyPair::generate().unwrap();
        let mut ca_params = CertificateParams::new(Vec::<String>::new()).unwrap();
        ca_params
            .distinguished_name
            .push(DnType::CommonName, "fcac test ca");
        ca_params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        let ca_cert_obj = ca_params.self_signed(&ca_key).unwrap();

        let server_key_obj = RcKeyPair::generate().unwrap();
        let mut server_params = CertificateParams::new(vec![SERVER_NAME.to_string()]).unwrap();
        server_params
            .distinguished_name
            .push(DnType::CommonName, SERVER_NAME);
        let server_cert_obj = server_params
            .signed_by(&server_key_obj, &ca_cert_obj, &ca_key)
            .unwrap();

        let pki_dir = root.join("pki");
        std::fs::create_dir_all(&pki_dir).unwrap();
        let ca_cert = pki_dir.join("ca.crt");
        std::fs::write(&ca_cert, ca_cert_obj.pem()).unwrap();
        let server_cert = pki_dir.join("server.crt");
        // Serve the full chain: leaf first, then the CA.
        std::fs::write(
            &server_cert,
            format!("{}{}", server_cert_obj.pem(), ca_cert_obj.pem()),
        )
        .unwrap();
        let server_key = pki_dir.join("server.key");
        std::fs::write(&server_key, server_key_obj.serialize_pem()).unwrap();

        let mut clients = Vec::new();
        for cn in CLIENT_CNS {
            let key = RcKeyPair::generate().unwrap();
            let mut params = CertificateParams::new(Vec::<String>::new()).unwrap();
            params.distinguished_name.push(DnType::CommonName, *cn);
            let cert = params.signed_by(&key, &ca_cert_obj, &ca_key).unwrap();
            let cert_path = pki_dir.join(format!("{}.crt", cn_slug(cn)));
            let key_path = pki_dir.join(format!("{}.key", cn_slug(cn)));
            std::fs::write(&cert_path, cert.pem()).unwrap();
            std::fs::write(&key_path, key.serialize_pem()).unwrap();
            clients.push(ClientCred {
                cn: cn.to_string(),
                cert: cert_path,
                key: key_path,
            });
        }

        let state_dir = root.join("state");
        let keystore_dir = state_dir.join("keys");
        let client_keys_dir = root.join("client-keys");
        std::fs::create_dir_all(&keystore_dir).unwrap();
        std::fs::create_dir_all(&client_keys_dir).unwrap();
        let policy_path = state_dir.join("policy.json");
        std::fs::copy(samples_dir().join("policy.json"), &policy_path).unwrap();

        CliWorld {
            ca_cert,
            server_cert,
            server_key,
            clients,
            keystore_dir,
            registry_path: state_dir.join("registry.log"),
            anchors_path: state_dir.join("anchors.json"),
            policy_path,
            vault_root: state_dir.join("vault"),
            decision_log: state_dir.join("decisions.log"),
            envelope_log: state_dir.join("envelopes.log"),
            client_keys_dir,
            dir,
            gateway: None,
        }
    }

    /// Issuer keys and anchors created directly, for tests that are not
    /// about the keygen/anchors commands themselves.
    pub fn seed_default_material(&self) {
        let keystore = Keystore::open(&self.keystore_dir).unwrap();
        let issuer_a = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(100));
        let issuer_b = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(103));
        keystore.store(ISSUER_A_HANDLE, &issuer_a, false).unwrap();
        keystore.store(ISSUER_B_HANDLE, &issuer_b, false).unwrap();
        let now = SystemClock.now();
        let mut registry = TrustRegistry::open(&self.registry_path).unwrap();
        registry
            .register_org(
                None,
                ORG_A,
                KeyRole::Issuer,
                issuer_a.public_jwk(),
                now - 10_000,
                now + 10_000_000,
            )
            .unwrap();
        registry
            .register_org(
                None,
                ORG_B,
                KeyRole::Issuer,
                issuer_b.public_jwk(),
                now - 10_000,
                now + 10_000_000,
            )
            .unwrap();
        std::fs::write(&self.anchors_path, registry.snapshot_anchors().export_bytes()).unwrap();
    }

    /// Persist a holder key into the caller-side keystore and write its
    /// public JWK next to it. Returns the public JWK path.
    pub fn seed_holder_key(&self, handle: &str, seed: u64) -> PathBuf {
        let pair = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(seed));
        Keystore::open(&self.client_keys_dir)
            .unwrap()
            .store(handle, &pair, false)
            .unwrap();
        let jwk_path = self.client_keys_dir.join(format!("{handle}.pub.jwk"));
        std::fs::write(&jwk_path, serde_json::to_string(&pair.public_jwk()).unwrap()).unwrap();
        jwk_path
    }

    /// Start the gateway against the current on-disk state. Anchors,
    /// policy, and the keystore must exist by now.
    pub fn spawn_gateway(&mut self) {
        let config = GatewayConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 0)),
            server_name: SERVER_NAME.to_string(),
            external_base_url: None,
            service_audience: AUDIENCE.to_string(),
            tls_cert: self.server_cert.clone(),
            tls_key: self.server_key.clone(),
            client_ca: self.ca_cert.clone(),
            policy_path: self.policy_path.clone(),
            anchors_path: self.anchors_path.clone(),
            keystore_dir: self.keystore_dir.clone(),
            vault_root: self.vault_root.clone(),
            decision_log: self.decision_log.clone(),
            envelope_log: self.envelope_log.clone(),
            replay_window_secs: 600,
            skew_leeway_secs: 30,
            envelope_seed: Some(7),
            odd_plus_allowlist: vec![0],
            forwarded: None,
        };
        let rt = tokio::runtime::Runtime::new().unwrap();
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let gw = rt
            .block_on(RunningGateway::spawn_with_clock(config, clock))
            .expect("gateway spawns");
        self.gateway = Some(SpawnedGateway { gw, rt });
    }

    pub fn gateway_state(&self) -> &Arc<fcac_gateway::AppState> {
        &self.gateway.as_ref().expect("gateway running").gw.state
    }

    pub fn addr(&self) -> SocketAddr {
        self.gateway.as_ref().expect("gateway running").gw.addr
    }

    pub fn base_url(&self) -> String {
        self.gateway
            .as_ref()
            .expect("gateway running")
            .gw
            .base_url()
    }

    pub fn client_cred(&self, cn: &str) -> &ClientCred {
        self.clients
            .iter()
            .find(|c| c.cn == cn)
            .unwrap_or_else(|| panic!("no client certificate for CN {cn}"))
    }

    /// `--gateway/--ca/--cert/--key/--connect-to` for the given CN.
    pub fn client_args(&self, cn: &str) -> Vec<String> {
        let cred = self.client_cred(cn);
        vec![
            "--gateway".into(),
            self.base_url(),
            "--ca".into(),
            self.ca_cert.display().to_string(),
            "--cert".into(),
            cred.cert.display().to_string(),
            "--key".into(),
            cred.key.display().to_string(),
            "--connect-to".into(),
            self.addr().to_string(),
        ]
    }

    /// Blocking HTTPS client authenticated as the given CN, for direct
    /// gateway calls the CLI does not cover.
    pub fn http_client(&self, cn: &str) -> reqwest::blocking::Client {
        let cred = self.client_cred(cn);
        let identity = reqwest::Identity::from_pem(
            &[
                std::fs::read(&cred.key).unwrap(),
                std::fs::read(&cred.cert).unwrap(),
            ]
            .concat(),
        )
        .unwrap();
        let ca = reqwest::Certificate::from_pem(&std::fs::read(&self.ca_cert).unwrap()).unwrap();
        reqwest::blocking::Client::builder()
            .use_rustls_tls()
            .add_root_certificate(ca)
            .identity(identity)
            .resolve(SERVER_NAME, self.addr())
            .timeout(std::time::Duration::from_secs(10))
            .build()
            .unwrap()
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url(), path)
    }

    /// Drive the full envelope ceremony over HTTP and return the active
    /// envelope id.
    pub fn ceremony_http(&self, participants: &[&str], k: u32) -> String {
        let hub = self.http_client(HUB_CN);
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
        let envelope_id = init["envelope_id"].as_str().unwrap().to_string();
        for org in participants {
            let admin = self.http_client(&format!("admin:{org}"));
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
            hub.post(self.url("/beta/bind/approve"))
                .json(&serde_json::json!({"session_id": claim["session_id"]}))
                .send()
                .unwrap()
                .error_for_status()
                .unwrap();
        }
        envelope_id
    }

    /// Mint an ECT over HTTP as org A's admin for the given holder.
    pub fn mint_http(
        &self,
        holder: &KeyPair,
        profiles: &[&str],
        envelope_id: Option<&str>,
    ) -> String {
        let admin = self.http_client(&format!("admin:{ORG_A}"));
        let now = SystemClock.now();
        let response: serde_json::Value = admin
            .post(self.url("/mint_ect"))
            .json(&serde_json::json!({
                "issuer_key_handle": ISSUER_A_HANDLE,
                "holder_jwk": holder.public_jwk(),
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

    /// Post one admission request with a fresh possession proof.
    pub fn admit_http(
        &self,
        ect: &str,
        signer: &KeyPair,
        body: &serde_json::Value,
    ) -> serde_json::Value {
        let admission_url = self.url("/admission/check");
        let proof = fcac_core::proofs::build_proof(
            signer,
            "POST",
            &admission_url,
            ect,
            SystemClock.now(),
            None,
            None,
        )
        .unwrap()
        .compact;
        self.http_client(HUB_CN)
            .post(&admission_url)
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

    /// Execution tuple JSON for an admission body.
    pub fn execution_json(
        &self,
        resource: &str,
        action: &str,
        qualifiers: &[(&str, &str)],
        envelope_id: &str,
    ) -> serde_json::Value {
        let quals: serde_json::Map<String, serde_json::Value> = qualifiers
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
            .collect();
        serde_json::json!({
            "resource": resource,
            "action": action,
            "qualifiers": quals,
            "audience": AUDIENCE,
            "envelope_id": envelope_id,
        })
    }

    /// Run the compiled `fcac` binary and capture the result.
    pub fn run(&self, args: &[&str]) -> CliRun {
        let output = Command::new(env!("CARGO_BIN_EXE_fcac"))
            .args(args)
            .output()
            .expect("fcac binary runs");
        CliRun {
            status: output.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
        }
    }

    /// Run with the given CN's connection arguments appended.
    pub fn run_as(&self, cn: &str, args: &[&str]) -> CliRun {
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        full.extend(self.client_args(cn));
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        self.run(&refs)
    }
}

/// Captured result of one CLI invocation.
#[derive(Debug)]
pub struct CliRun {
    pub status: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CliRun {
    /// The machine-readable object on the final stdout line.
    pub fn json(&self) -> serde_json::Value {
        let line = self
            .stdout
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .unwrap_or_else(|| panic!("no stdout from fcac; stderr: {}", self.stderr));
        serde_json::from_str(line).unwrap_or_else(|e| {
            panic!("final stdout line is not JSON ({e}): {line}\nstderr: {}", self.stderr)
        })
    }

    /// Assert exit 0 and return the final JSON object.
    pub fn expect_ok(&self) -> serde_json::Value {
        assert_eq!(
            self.status, 0,
            "fcac exited {}; stdout:\n{}\nstderr:\n{}",
            self.status, self.stdout, self.stderr
        );
        self.json()
    }

    /// Assert a specific nonzero exit and return the final JSON object.
    pub fn expect_exit(&self, code: i32) -> serde_json::Value {
        assert_eq!(
            self.status, code,
            "fcac exited {}; stdout:\n{}\nstderr:\n{}",
            self.status, self.stdout, self.stderr
        );
        self.json()
    }
}
