use clap::{Parser, Subcommand};

use fcac_cli::commands::{
    self, AnchorsCmd, AuditArgs, EnvelopeArgs, KeygenArgs, MintArgs, PredictArgs, ProbeArgs,
};
use fcac_cli::{CommandOutput, Exit};

/// Operator console for the federation trust chain: key generation,
/// anchor registry maintenance, envelope ceremonies, token minting,
/// admission probes, and decision-log audits. The final stdout line of
/// every run is a single JSON object.
#[derive(Debug, Parser)]
#[command(name = "fcac", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an Ed25519 key pair into a keystore directory
    Keygen(KeygenArgs),
    /// Maintain the organization trust registry and anchor snapshots
    #[command(subcommand)]
    Anchors(AnchorsCmd),
    /// Run the quorum ceremony that creates a sovereignty envelope
    Envelope(EnvelopeArgs),
    /// Ask the gateway to mint a holder-bound capability token
    Mint(MintArgs),
    /// Replay a fixture of admission attempts and check each decision
    Probe(ProbeArgs),
    /// Request one prediction through the admission boundary
    Predict(PredictArgs),
    /// Verify a decision log's digests, sequence, and hash chain
    Audit(AuditArgs),
}

fn run(cli: &Cli) -> anyhow::Result<CommandOutput> {
    match &cli.command {
        Command::Keygen(args) => commands::keygen(args),
        Command::Anchors(cmd) => commands::anchors(cmd),
        Command::Envelope(args) => commands::envelope(args),
        Command::Mint(args) => commands::mint(args),
        Command::Probe(args) => commands::probe(args),
        Command::Predict(args) => commands::predict(args),
        Command::Audit(args) => commands::audit(args),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(output) => {
            println!("{}", output.json);
            std::process::exit(output.exit.code() as i32);
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            println!("{}", serde_json::json!({ "error": format!("{err:#}") }));
            std::process::exit(Exit::Error.code() as i32);
        }
    }
}
