//! Gateway entry point: load config, serve until interrupted.
//!
//! Usage: `fcac-gateway [CONFIG.toml]` — the `FCAC_CONFIG` environment
//! variable overrides the argument.

use std::path::PathBuf;
use std::process::ExitCode;

use fcac_gateway::{GatewayConfig, RunningGateway};

#[tokio::main]
async fn main() -> ExitCode {
    let arg = std::env::args().nth(1).map(PathBuf::from);
    let config = match GatewayConfig::load(arg.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    let gateway = match RunningGateway::spawn(config).await {
        Ok(g) => g,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    println!("listening on {} ({})", gateway.addr, gateway.base_url());
    if let Some(fw) = gateway.forwarded_addr {
        println!("forwarded-identity listener on {fw}");
    }
    let _ = tokio::signal::ctrl_c().await;
    gateway.shutdown();
    ExitCode::SUCCESS
}
