//! Gateway configuration: TOML format, loading, path resolution.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use fcac_core::admission::SKEW_LEEWAY_SECS;
use fcac_core::proofs::REPLAY_RETENTION_SECS;

use crate::GatewayError;

/// Environment variable that overrides the configuration file path.
pub const CONFIG_ENV: &str = "FCAC_CONFIG";

/// Optional plain-TCP listener that accepts an identity forwarded by a
/// trusted TLS-terminating edge in front of the gateway.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardedConfig {
    pub listen: SocketAddr,
    /// Peers allowed to assert forwarded identities. Connections from any
    /// other address carry no identity and fail every guard.
    pub trusted_peers: Vec<IpAddr>,
}

/// On-disk gateway configuration. Relative paths are resolved against the
/// directory containing the config file, so a state bundle relocates
/// wholesale.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    /// Mutual-TLS listener address. Port 0 binds an ephemeral port.
    pub listen: SocketAddr,
    /// Service identity; must appear among the server certificate's
    /// subjectAltName dNSName entries.
    pub server_name: String,
    /// Base URL clients bind possession proofs to. Defaults to
    /// `https://{server_name}:{bound port}`.
    #[serde(default)]
    pub external_base_url: Option<String>,
    /// Audience this verifier admits for; must equal the policy's caveat
    /// audience or startup fails.
    pub service_audience: String,
    /// PEM certificate chain presented to clients.
    pub tls_cert: PathBuf,
    /// PEM PKCS#8 private key for `tls_cert`.
    pub tls_key: PathBuf,
    /// PEM trust root(s) for client certificates.
    pub client_ca: PathBuf,
    /// Compiled policy artifact (JSON).
    pub policy_path: PathBuf,
    /// Exported trust-anchor snapshot consumed at startup.
    pub anchors_path: PathBuf,
    /// Issuer private keys, addressed by handle, for `/mint_ect`.
    pub keystore_dir: PathBuf,
    /// Model artifacts live at `{vault_root}/{envelope_id}/model.bin`.
    pub vault_root: PathBuf,
    /// Append-only admission decision log (JSONL).
    pub decision_log: PathBuf,
    /// Append-only envelope event log (JSONL).
    pub envelope_log: PathBuf,
    /// Seconds a possession-proof jti stays in the replay cache.
    #[serde(default = "default_replay_window")]
    pub replay_window_secs: i64,
    /// Temporal leeway for exp/nbf checks, seconds.
    #[serde(default = "default_skew_leeway")]
    pub skew_leeway_secs: i64,
    /// Seeds envelope ids and verification codes for scripted runs;
    /// omit in production for entropy-backed randomness.
    #[serde(default)]
    pub envelope_seed: Option<u64>,
    /// Labels the ODD_PLUS cohort admits in addition to the odd digits.
    #[serde(default = "default_odd_plus_allowlist")]
    pub odd_plus_allowlist: Vec<u8>,
    #[serde(default)]
    pub forwarded: Option<ForwardedConfig>,
}

fn default_replay_window() -> i64 {
    REPLAY_RETENTION_SECS
}

fn default_skew_leeway() -> i64 {
    SKEW_LEEWAY_SECS
}

fn default_odd_plus_allowlist() -> Vec<u8> {
    vec![0]
}

impl GatewayConfig {
    /// Parse a config file. `FCAC_CONFIG` in the environment overrides
    /// the supplied path.
    pub fn load(path: Option<&Path>) -> Result<Self, GatewayError> {
        let chosen: PathBuf = match std::env::var_os(CONFIG_ENV) {
            Some(p) => PathBuf::from(p),
            None => path
                .map(Path::to_path_buf)
                .ok_or_else(|| GatewayError::Config(format!(
                    "no config path given and {CONFIG_ENV} is unset"
                )))?,
        };
        Self::load_file(&chosen)
    }

    /// Parse a specific config file, ignoring the environment override.
    pub fn load_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("read {}: {e}", path.display())))?;
        let mut config: GatewayConfig = toml::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("parse {}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    /// Resolve every relative path against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.tls_cert,
            &mut self.tls_key,
            &mut self.client_ca,
            &mut self.policy_path,
            &mut self.anchors_path,
            &mut self.keystore_dir,
            &mut self.vault_root,
            &mut self.decision_log,
            &mut self.envelope_log,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.server_name.is_empty() {
            return Err(GatewayError::Config("server_name must be non-empty".into()));
        }
        if self.service_audience.is_empty() {
            return Err(GatewayError::Config("service_audience must be non-empty".into()));
        }
        if self.replay_window_secs <= 0 {
            return Err(GatewayError::Config("replay_window_secs must be positive".into()));
        }
        if self.skew_leeway_secs < 0 {
            return Err(GatewayError::Config("skew_leeway_secs must be non-negative".into()));
        }
        for (label, path) in [
            ("tls_cert", &self.tls_cert),
            ("tls_key", &self.tls_key),
            ("client_ca", &self.client_ca),
            ("policy_path", &self.policy_path),
            ("anchors_path", &self.anchors_path),
        ] {
            if !path.is_file() {
                return Err(GatewayError::Config(format!(
                    "{label} {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}
