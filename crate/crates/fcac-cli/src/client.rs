//! Mutual-TLS HTTP client for talking to the gateway.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

/// Connection options shared by every networked command.
#[derive(Debug, Clone, Args)]
pub struct ClientOpts {
    /// Gateway base URL, e.g. https://verifier.local:8443
    #[arg(long)]
    pub gateway: String,
    /// CA certificate (PEM) that signed the gateway's server certificate
    #[arg(long)]
    pub ca: PathBuf,
    /// Client certificate (PEM) presented to the gateway
    #[arg(long)]
    pub cert: PathBuf,
    /// Private key (PEM) for the client certificate
    #[arg(long)]
    pub key: PathBuf,
    /// Resolve the gateway host name to this address instead of DNS
    #[arg(long)]
    pub connect_to: Option<SocketAddr>,
}

impl ClientOpts {
    /// Same connection, different client credentials.
    pub fn with_identity(&self, cert: &Path, key: &Path) -> Self {
        let mut opts = self.clone();
        opts.cert = cert.to_path_buf();
        opts.key = key.to_path_buf();
        opts
    }

    pub fn base_url(&self) -> String {
        self.gateway.trim_end_matches('/').to_string()
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url(), path)
    }

    pub fn build(&self) -> Result<reqwest::blocking::Client> {
        let ca_pem = std::fs::read(&self.ca)
            .with_context(|| format!("read CA certificate {}", self.ca.display()))?;
        let ca = reqwest::Certificate::from_pem(&ca_pem)
            .with_context(|| format!("parse CA certificate {}", self.ca.display()))?;
        let cert = std::fs::read(&self.cert)
            .with_context(|| format!("read client certificate {}", self.cert.display()))?;
        let key = std::fs::read(&self.key)
            .with_context(|| format!("read client key {}", self.key.display()))?;
        let identity = reqwest::Identity::from_pem(&[key, cert].concat())
            .context("assemble client identity")?;
        let mut builder = reqwest::blocking::Client::builder()
            .use_rustls_tls()
            .add_root_certificate(ca)
            .identity(identity)
            .timeout(std::time::Duration::from_secs(30));
        if let Some(addr) = self.connect_to {
            let host = url::Url::parse(&self.gateway)
                .context("parse gateway URL")?
                .host_str()
                .context("gateway URL has no host")?
                .to_string();
            builder = builder.resolve(&host, addr);
        }
        builder.build().context("build HTTP client")
    }
}

/// Decode a gateway response: 2xx yields the JSON body, anything else
/// becomes an error carrying the gateway's `error` code.
pub fn expect_json(response: reqwest::blocking::Response) -> Result<serde_json::Value> {
    let status = response.status();
    let body: serde_json::Value = response
        .json()
        .with_context(|| format!("decode response body (HTTP {status})"))?;
    if !status.is_success() {
        let code = body["error"].as_str().unwrap_or("unknown_error");
        bail!("gateway rejected the request: {code} (HTTP {status})");
    }
    Ok(body)
}
