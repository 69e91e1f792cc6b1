//! Admission probe fixtures: typed expectations checked against the
//! gateway's actual decisions.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fcac_core::admission::{Outcome, ReasonCode};
use fcac_core::policy::ExecutionTuple;

/// Which locally held key signs the possession proof for a probe.
pub const PROOF_KEY_HOLDER: &str = "holder";
pub const PROOF_KEY_INTRUDER: &str = "intruder";

fn default_proof_key() -> String {
    PROOF_KEY_HOLDER.to_string()
}

/// One scripted admission attempt with its expected decision. The
/// expected reason deserializes through the registered reason-code
/// enum, so fixtures cannot name codes that do not exist.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub name: String,
    pub execution: ExecutionTuple,
    #[serde(default = "default_proof_key")]
    pub proof_key: String,
    pub expect_outcome: Outcome,
    pub expect_reason: ReasonCode,
}

/// Load and validate a probe fixture file.
pub fn load_probes(path: &Path) -> Result<Vec<ProbeSpec>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("read probe fixture {}", path.display()))?;
    let probes: Vec<ProbeSpec> = serde_json::from_str(&text)
        .with_context(|| format!("parse probe fixture {}", path.display()))?;
    if probes.is_empty() {
        bail!("probe fixture {} is empty", path.display());
    }
    for probe in &probes {
        if probe.proof_key != PROOF_KEY_HOLDER && probe.proof_key != PROOF_KEY_INTRUDER {
            bail!(
                "probe `{}`: proof_key must be `{PROOF_KEY_HOLDER}` or `{PROOF_KEY_INTRUDER}`",
                probe.name
            );
        }
        probe
            .execution
            .clone()
            .canonicalize()
            .validate()
            .with_context(|| format!("probe `{}` execution tuple", probe.name))?;
    }
    Ok(probes)
}

/// Outcome of running one probe.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub name: String,
    pub expect_outcome: Outcome,
    pub expect_reason: ReasonCode,
    pub outcome: Outcome,
    pub reason: ReasonCode,
    pub pass: bool,
}
