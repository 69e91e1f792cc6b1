//! Guarded backend stub: deterministic digit classification with
//! cohort-based label masking, gated on a per-envelope model artifact.
//!
//! The stub is reachable only through the admission handler's internal
//! dispatch; every invocation increments a counter so tests can assert
//! the no-execution-on-DENY invariant (invocations == ALLOW count).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use fcac_core::policy::{ExecutionTuple, ScopeValue};

use crate::wire::{ExecuteParams, ExecutionResult};

/// Marker substituted for labels the cohort does not admit.
pub const MASKED_LABEL: &str = "masked";

/// File name of the per-envelope model artifact.
pub const MODEL_FILE: &str = "model.bin";

pub struct Backend {
    vault_root: PathBuf,
    /// Labels ODD_PLUS admits in addition to the odd digits.
    odd_plus_allowlist: BTreeSet<u8>,
    calls: AtomicU64,
}

impl Backend {
    pub fn new(vault_root: PathBuf, odd_plus_allowlist: impl IntoIterator<Item = u8>) -> Self {
        Backend {
            vault_root,
            odd_plus_allowlist: odd_plus_allowlist.into_iter().collect(),
            calls: AtomicU64::new(0),
        }
    }

    /// Number of times the backend has been invoked.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn model_path(&self, envelope_id: &str) -> PathBuf {
        self.vault_root.join(envelope_id).join(MODEL_FILE)
    }

    /// Readiness is the presence of the model artifact.
    pub fn model_ready(&self, envelope_id: &str) -> bool {
        self.model_path(envelope_id).is_file()
    }

    /// Execute an admitted operation. Must be called exactly once per
    /// ALLOW decision and never otherwise.
    pub fn execute(
        &self,
        execution: &ExecutionTuple,
        params: Option<&ExecuteParams>,
    ) -> ExecutionResult {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match execution.action.as_str() {
            "predict" => self.predict(execution, params),
            "train" => self.train(&execution.envelope_id),
            _ => ExecutionResult::Done,
        }
    }

    fn predict(
        &self,
        execution: &ExecutionTuple,
        params: Option<&ExecuteParams>,
    ) -> ExecutionResult {
        if !self.model_ready(&execution.envelope_id) {
            return ExecutionResult::ModelNotReady;
        }
        let digit = match params.and_then(|p| p.digit) {
            Some(d) if d <= 9 => d,
            // Nothing to classify: acknowledge without inventing output.
            _ => return ExecutionResult::Done,
        };
        let cohort = match execution.qualifiers.get("cohort") {
            Some(ScopeValue::Str(s)) => s.as_str(),
            _ => "",
        };
        if self.label_admitted(cohort, digit) {
            ExecutionResult::Label {
                digit,
                label: digit.to_string(),
            }
        } else {
            ExecutionResult::Masked {
                digit,
                label: MASKED_LABEL.to_string(),
            }
        }
    }

    /// Cohort mask table. Cohorts without defined masking semantics mask
    /// everything: the stub fails closed rather than leaking labels.
    fn label_admitted(&self, cohort: &str, digit: u8) -> bool {
        match cohort {
            "EVEN_ONLY" => digit % 2 == 0,
            "ODD_ONLY" => digit % 2 == 1,
            "ODD_PLUS" => digit % 2 == 1 || self.odd_plus_allowlist.contains(&digit),
            _ => false,
        }
    }

    fn train(&self, envelope_id: &str) -> ExecutionResult {
        let path = self.model_path(envelope_id);
        if let Err(e) = write_model(&path, envelope_id) {
            // Training failure leaves the envelope not ready; surface the
            // readiness state rather than a transport error.
            let _ = e;
            return ExecutionResult::ModelNotReady;
        }
        ExecutionResult::Trained {
            artifact: path.display().to_string(),
        }
    }
}

fn write_model(path: &Path, envelope_id: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, format!("fcac stub model for {envelope_id}\n"))
}
