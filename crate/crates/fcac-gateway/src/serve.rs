//! Listener plumbing: native mutual TLS, per-connection identity
//! derivation, and the optional trusted-forwarding listener.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use hyper::body::Incoming;
use hyper::Request;
use hyper_util::rt::{TokioExecutor, TokioIo};
use rustls::pki_types::{CertificateDer, PrivateKeyDer};
use rustls::server::WebPkiClientVerifier;
use rustls::{RootCertStore, ServerConfig};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio_rustls::TlsAcceptor;
use tower::ServiceExt;

use fcac_core::time::{Clock, SystemClock};

use crate::config::GatewayConfig;
use crate::identity::{cert_dns_names, EdgeIdentity, FORWARDED_CN_HEADER};
use crate::routes::build_router;
use crate::state::AppState;
use crate::GatewayError;

/// A spawned gateway: listeners are live, state is shared for
/// introspection, and dropping the shutdown sender stops the accept
/// loops.
pub struct RunningGateway {
    pub addr: SocketAddr,
    pub forwarded_addr: Option<SocketAddr>,
    pub state: Arc<AppState>,
    shutdown: watch::Sender<bool>,
}

impl RunningGateway {
    /// Spawn with the wall clock.
    pub async fn spawn(config: GatewayConfig) -> Result<Self, GatewayError> {
        Self::spawn_with_clock(config, Arc::new(SystemClock)).await
    }

    /// Spawn with an injected clock (scripted runs pin time).
    pub async fn spawn_with_clock(
        config: GatewayConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, GatewayError> {
        // With several rustls-linked crates in one process the default
        // provider must be pinned explicitly; first caller wins.
        let _ = rustls::crypto::ring::default_provider().install_default();

        let cert_chain = load_certs(&config.tls_cert)?;
        let key = load_key(&config.tls_key)?;
        let end_entity = cert_chain
            .first()
            .ok_or_else(|| GatewayError::Config("tls_cert contains no certificates".into()))?;
        check_server_identity(end_entity.as_ref(), &config.server_name)?;

        let mut roots = RootCertStore::empty();
        for cert in load_certs(&config.client_ca)? {
            roots
                .add(cert)
                .map_err(|e| GatewayError::Config(format!("client_ca: {e}")))?;
        }
        if roots.is_empty() {
            return Err(GatewayError::Config("client_ca contains no certificates".into()));
        }
        let client_verifier = WebPkiClientVerifier::builder(Arc::new(roots))
            .build()
            .map_err(|e| GatewayError::Config(format!("client verifier: {e}")))?;
        let tls_config = ServerConfig::builder()
            .with_client_cert_verifier(client_verifier)
            .with_single_cert(cert_chain, key)
            .map_err(|e| GatewayError::Config(format!("tls keypair: {e}")))?;
        let acceptor = TlsAcceptor::from(Arc::new(tls_config));

        let listener = TcpListener::bind(config.listen).await?;
        let addr = listener.local_addr()?;

        let forwarded = match &config.forwarded {
            Some(fw) => Some((TcpListener::bind(fw.listen).await?, fw.trusted_peers.clone())),
            None => None,
        };
        let forwarded_addr = match &forwarded {
            Some((l, _)) => Some(l.local_addr()?),
            None => None,
        };

        let state = Arc::new(AppState::from_config(config, addr.port(), clock)?);
        let router = build_router(state.clone());

        let (shutdown, shutdown_rx) = watch::channel(false);
        tokio::spawn(tls_accept_loop(
            listener,
            acceptor,
            router.clone(),
            shutdown_rx.clone(),
        ));
        if let Some((fw_listener, trusted)) = forwarded {
            tokio::spawn(forwarded_accept_loop(
                fw_listener,
                trusted,
                router,
                shutdown_rx,
            ));
        }

        Ok(RunningGateway {
            addr,
            forwarded_addr,
            state,
            shutdown,
        })
    }

    pub fn base_url(&self) -> String {
        self.state.external_base_url.clone()
    }

    pub fn admission_url(&self) -> String {
        self.state.admission_url()
    }

    pub fn shutdown(&self) {
        let _ = self.shutdown.send(true);
    }
}

fn load_certs(path: &std::path::Path) -> Result<Vec<CertificateDer<'static>>, GatewayError> {
    let file = std::fs::File::open(path)
        .map_err(|e| GatewayError::Config(format!("open {}: {e}", path.display())))?;
    let mut reader = std::io::BufReader::new(file);
    rustls_pemfile::certs(&mut reader)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| GatewayError::Config(format!("parse {}: {e}", path.display())))
}

fn load_key(path: &std::path::Path) -> Result<PrivateKeyDer<'static>, GatewayError> {
    let file = std::fs::File::open(path)
        .map_err(|e| GatewayError::Config(format!("open {}: {e}", path.display())))?;
    let mut reader = std::io::BufReader::new(file);
    rustls_pemfile::private_key(&mut reader)
        .map_err(|e| GatewayError::Config(format!("parse {}: {e}", path.display())))?
        .ok_or_else(|| GatewayError::Config(format!("{} contains no private key", path.display())))
}

/// The server certificate must carry the configured service identity as
/// a subjectAltName dNSName.
fn check_server_identity(cert_der: &[u8], server_name: &str) -> Result<(), GatewayError> {
    let names = cert_dns_names(cert_der)?;
    if names.is_empty() {
        return Err(GatewayError::Config(
            "server certificate lacks subjectAltName dNSName entries".into(),
        ));
    }
    if !names.iter().any(|n| n == server_name) {
        return Err(GatewayError::Config(format!(
            "server certificate SAN {names:?} does not include server_name `{server_name}`"
        )));
    }
    Ok(())
}

async fn tls_accept_loop(
    listener: TcpListener,
    acceptor: TlsAcceptor,
    router: Router,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            _ = shutdown.changed() => break,
            accepted = listener.accept() => {
                let (tcp, _) = match accepted {
                    Ok(pair) => pair,
                    Err(_) => continue,
                };
                tokio::spawn(serve_tls_connection(tcp, acceptor.clone(), router.clone()));
            }
        }
    }
}

async fn serve_tls_connection(tcp: TcpStream, acceptor: TlsAcceptor, router: Router) {
    // A failed handshake (no or untrusted client certificate) is the
    // TLS-level rejection: the connection never reaches routing.
    let tls = match acceptor.accept(tcp).await {
        Ok(stream) => stream,
        Err(_) => return,
    };
    let identity = {
        let (_, conn) = tls.get_ref();
        conn.peer_certificates()
            .and_then(|certs| certs.first())
            .and_then(|der| EdgeIdentity::from_client_cert(der.as_ref()).ok())
    };
    let service = hyper::service::service_fn(move |mut req: Request<Incoming>| {
        if let Some(id) = &identity {
            req.extensions_mut().insert(id.clone());
        }
        router.clone().oneshot(req)
    });
    let _ = hyper_util::server::conn::auto::Builder::new(TokioExecutor::new())
        .serve_connection(TokioIo::new(tls), service)
        .await;
}

async fn forwarded_accept_loop(
    listener: TcpListener,
    trusted_peers: Vec<std::net::IpAddr>,
    router: Router,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            _ = shutdown.changed() => break,
            accepted = listener.accept() => {
                let (tcp, peer) = match accepted {
                    Ok(pair) => pair,
                    Err(_) => continue,
                };
                let trusted = trusted_peers.contains(&peer.ip());
                tokio::spawn(serve_forwarded_connection(tcp, trusted, router.clone()));
            }
        }
    }
}

async fn serve_forwarded_connection(tcp: TcpStream, trusted: bool, router: Router) {
    let service = hyper::service::service_fn(move |mut req: Request<Incoming>| {
        // Identity headers are believed only from configured edge
        // addresses; from anyone else the request stays anonymous and
        // every guard rejects it.
        if trusted {
            let cn = req
                .headers()
                .get(FORWARDED_CN_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string);
            if let Some(cn) = cn {
                req.extensions_mut().insert(EdgeIdentity::from_forwarded_cn(&cn));
            }
        }
        router.clone().oneshot(req)
    });
    let _ = hyper_util::server::conn::auto::Builder::new(TokioExecutor::new())
        .serve_connection(TokioIo::new(tcp), service)
        .await;
}
