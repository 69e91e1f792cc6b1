//! Offline verification of a decision log: every line must carry a
//! self-consistent decision digest, sequence numbers must be gapless and
//! strictly increasing, and the hash chain must recompute end to end.

use crate::admission::{chain_digest, DecisionRecord, Outcome, ReasonCode};
use serde::Serialize;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditFinding {
    /// Line did not parse as a decision record (truncation, tampering).
    ParseError { line: usize },
    /// Stored decision_digest does not recompute from the record fields.
    DigestMismatch { line: usize, seq: u64 },
    /// Sequence numbers must increase by exactly one.
    SequenceGap { line: usize, expected: u64, found: u64 },
    /// Hash chain does not recompute from the previous line.
    ChainMismatch { line: usize, seq: u64 },
    /// ALLOW must pair with reason ok and a matched tuple index; DENY
    /// must not.
    OutcomeInconsistent { line: usize, seq: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    /// Lines examined, including unparseable ones.
    pub total_lines: usize,
    pub allow_count: usize,
    pub deny_count: usize,
    pub findings: Vec<AuditFinding>,
    /// Chain value after the last verified line.
    pub chain_tip: String,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Replay a decision log file and verify it line by line. Findings are
/// collected rather than short-circuited so one report covers the whole
/// file.
pub fn verify_decision_log<P: AsRef<Path>>(path: P) -> Result<AuditReport, AuditError> {
    let file = File::open(path)?;
    let mut report = AuditReport {
        total_lines: 0,
        allow_count: 0,
        deny_count: 0,
        findings: Vec::new(),
        chain_tip: String::new(),
    };
    let mut expected_seq = 1u64;
    let mut chain = String::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        report.total_lines += 1;
        let record: DecisionRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(_) => {
                report.findings.push(AuditFinding::ParseError { line: line_no });
                // Cannot continue the chain past an unreadable line.
                continue;
            }
        };
        if record.seq != expected_seq {
            report.findings.push(AuditFinding::SequenceGap {
                line: line_no,
                expected: expected_seq,
                found: record.seq,
            });
        }
        expected_seq = record.seq + 1;
        if !record.decision.digest_valid() {
            report.findings.push(AuditFinding::DigestMismatch {
                line: line_no,
                seq: record.seq,
            });
        }
        let expected_chain = chain_digest(&chain, &record.decision.decision_digest);
        if record.chain != expected_chain {
            report.findings.push(AuditFinding::ChainMismatch {
                line: line_no,
                seq: record.seq,
            });
        }
        chain = record.chain.clone();
        let allow_consistent = record.decision.outcome == Outcome::Allow
            && record.decision.reason == ReasonCode::Ok
            && record.decision.matched_tuple_index.is_some();
        let deny_consistent = record.decision.outcome == Outcome::Deny
            && record.decision.reason != ReasonCode::Ok
            && record.decision.matched_tuple_index.is_none();
        if !allow_consistent && !deny_consistent {
            report.findings.push(AuditFinding::OutcomeInconsistent {
                line: line_no,
                seq: record.seq,
            });
        }
        match record.decision.outcome {
            Outcome::Allow => report.allow_count += 1,
            Outcome::Deny => report.deny_count += 1,
        }
    }
    report.chain_tip = chain;
    Ok(report)
}
