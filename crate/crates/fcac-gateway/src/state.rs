//! Shared gateway state: the verifier and every snapshot it decides
//! against, plus persistence and the guarded backend.

use std::sync::{Arc, Mutex, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use fcac_core::admission::{DecisionLog, Verifier};
use fcac_core::envelope::EnvelopeStore;
use fcac_core::keys::Keystore;
use fcac_core::policy::PolicyArtifact;
use fcac_core::proofs::ReplayCache;
use fcac_core::registry::TrustAnchorSet;
use fcac_core::time::{Clock, SystemClock};

use crate::backend::Backend;
use crate::config::GatewayConfig;
use crate::GatewayError;

pub struct AppState {
    pub config: GatewayConfig,
    pub policy: PolicyArtifact,
    pub verifier: Verifier,
    /// Locally cached trust-anchor snapshot. Replaceable via
    /// [`AppState::reload_anchors`]; admission reads whatever is current.
    pub anchors: RwLock<TrustAnchorSet>,
    pub envelopes: Mutex<EnvelopeStore>,
    pub replay: ReplayCache,
    pub decision_log: DecisionLog,
    pub backend: Backend,
    pub keystore: Keystore,
    pub clock: Arc<dyn Clock>,
    /// `https://host:port` prefix clients bound their proofs to.
    pub external_base_url: String,
}

impl AppState {
    /// Assemble the state from configuration. `bound_port` is the actual
    /// TLS listener port (relevant when the config asked for port 0).
    pub fn from_config(
        config: GatewayConfig,
        bound_port: u16,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, GatewayError> {
        let policy_bytes = std::fs::read(&config.policy_path).map_err(|e| {
            GatewayError::Config(format!("read policy {}: {e}", config.policy_path.display()))
        })?;
        let policy = PolicyArtifact::from_bytes(&policy_bytes)
            .map_err(|e| GatewayError::Config(format!("policy: {e}")))?;
        let verifier = Verifier::from_policy(&policy, &config.service_audience)
            .map_err(|e| GatewayError::Config(e.to_string()))?
            .with_skew_leeway(config.skew_leeway_secs);

        let anchor_bytes = std::fs::read(&config.anchors_path).map_err(|e| {
            GatewayError::Config(format!(
                "read anchors {}: {e}",
                config.anchors_path.display()
            ))
        })?;
        let anchors = TrustAnchorSet::from_export_bytes(&anchor_bytes)
            .map_err(|e| GatewayError::Config(format!("anchors: {e}")))?;

        let rng = match config.envelope_seed {
            Some(seed) => ChaCha20Rng::seed_from_u64(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        if let Some(parent) = config.envelope_log.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let envelopes = EnvelopeStore::open(&config.envelope_log, rng)
            .map_err(|e| GatewayError::Config(format!("envelope log: {e}")))?;

        if let Some(parent) = config.decision_log.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let decision_log = DecisionLog::open(&config.decision_log)
            .map_err(|e| GatewayError::Config(format!("decision log: {e}")))?;

        std::fs::create_dir_all(&config.keystore_dir)?;
        let keystore = Keystore::open(&config.keystore_dir)
            .map_err(|e| GatewayError::Config(format!("keystore: {e}")))?;
        std::fs::create_dir_all(&config.vault_root)?;

        let backend = Backend::new(
            config.vault_root.clone(),
            config.odd_plus_allowlist.iter().copied(),
        );
        let external_base_url = match &config.external_base_url {
            Some(url) => url.trim_end_matches('/').to_string(),
            None => format!("https://{}:{}", config.server_name, bound_port),
        };

        Ok(AppState {
            replay: ReplayCache::new(config.replay_window_secs),
            config,
            policy,
            verifier,
            anchors: RwLock::new(anchors),
            envelopes: Mutex::new(envelopes),
            decision_log,
            backend,
            keystore,
            clock,
            external_base_url,
        })
    }

    /// Default state with the wall clock.
    pub fn from_config_system_clock(
        config: GatewayConfig,
        bound_port: u16,
    ) -> Result<Self, GatewayError> {
        Self::from_config(config, bound_port, Arc::new(SystemClock))
    }

    /// The URL possession proofs for admission must carry as `htu`.
    pub fn admission_url(&self) -> String {
        format!("{}/admission/check", self.external_base_url)
    }

    /// Re-read the anchor snapshot from its configured path.
    pub fn reload_anchors(&self) -> Result<u64, GatewayError> {
        let bytes = std::fs::read(&self.config.anchors_path).map_err(|e| {
            GatewayError::Config(format!(
                "read anchors {}: {e}",
                self.config.anchors_path.display()
            ))
        })?;
        let fresh = TrustAnchorSet::from_export_bytes(&bytes)
            .map_err(|e| GatewayError::Config(format!("anchors: {e}")))?;
        let version = fresh.version;
        *self.anchors.write().expect("anchor lock") = fresh;
        Ok(version)
    }
}
