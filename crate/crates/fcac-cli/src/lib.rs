//! Operator command-line harness for the federation trust chain.
//!
//! Commands: `fcac keygen | anchors | envelope | mint | probe | predict |
//! audit`. Every command prints human-readable progress lines first; the
//! final stdout line is always a single JSON object describing the
//! result, so scripts parse the last line and ignore the rest.
//!
//! Networked commands (`envelope`, `mint`, `probe`, `predict`) talk to a
//! running gateway over mutual TLS and authenticate with the client
//! certificate given on the command line; everything else works on local
//! files.

pub mod client;
pub mod commands;
pub mod probe;

/// Exit status conventions: 0 success, 1 the command ran but found
/// mismatches (failed probes, audit findings, denied admission), 2 usage
/// or transport errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok,
    Findings,
    Error,
}

impl Exit {
    pub fn code(self) -> u8 {
        match self {
            Exit::Ok => 0,
            Exit::Findings => 1,
            Exit::Error => 2,
        }
    }
}

/// Result of one command: the machine-readable object and the exit
/// status.
pub struct CommandOutput {
    pub json: serde_json::Value,
    pub exit: Exit,
}

impl CommandOutput {
    pub fn ok(json: serde_json::Value) -> Self {
        CommandOutput {
            json,
            exit: Exit::Ok,
        }
    }

    pub fn findings(json: serde_json::Value) -> Self {
        CommandOutput {
            json,
            exit: Exit::Findings,
        }
    }
}
