//! Implementations of the `fcac` subcommands.
//!
//! Local commands (`keygen`, `anchors`, `audit`) operate on files;
//! networked commands (`envelope`, `mint`, `probe`, `predict`) drive a
//! running gateway through its mutual-TLS API.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use ed25519_dalek::{Signature, Signer, Verifier as _};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::json;

use fcac_core::jose::{b64url_decode, b64url_encode, Jwk};
use fcac_core::keys::{KeyPair, Keystore};
use fcac_core::policy::{ExecutionTuple, ScopeValue};
use fcac_core::registry::{KeyRole, TrustAnchorSet, TrustRegistry};
use fcac_core::time::{Clock, SystemClock};
use fcac_core::{verify_decision_log, Outcome};

use crate::client::{expect_json, ClientOpts};
use crate::probe::{load_probes, ProbeResult, PROOF_KEY_HOLDER};
use crate::{CommandOutput, Exit};

/// Default validity ahead of `now` for registered anchor keys, seconds.
const DEFAULT_ANCHOR_LIFETIME: i64 = 365 * 24 * 3600;
/// Default token validity, seconds.
const DEFAULT_TOKEN_LIFETIME: i64 = 3600;
/// Backdating applied to default `not_before` values so freshly issued
/// material is immediately usable across small clock offsets.
const DEFAULT_BACKDATE: i64 = 60;

fn now() -> i64 {
    SystemClock.now()
}

/// Render a wire-format enum (outcome, reason, state) as its JSON string.
fn wire_str<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| "<unprintable>".to_string())
}

// ---- keygen ----

#[derive(Debug, Args)]
pub struct KeygenArgs {
    /// Directory that holds private keys
    #[arg(long)]
    pub keystore: PathBuf,
    /// Name to store the key under
    #[arg(long)]
    pub handle: String,
    /// Deterministic seed for reproducible keys (testing only)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite an existing key with the same handle
    #[arg(long)]
    pub force: bool,
}

pub fn keygen(args: &KeygenArgs) -> Result<CommandOutput> {
    let pair = match args.seed {
        Some(seed) => KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(seed)),
        None => KeyPair::generate(&mut rand::thread_rng()),
    };
    let store = Keystore::open(&args.keystore).context("open keystore")?;
    let private_path = store
        .store(&args.handle, &pair, args.force)
        .context("store private key")?;
    let public_path = args.keystore.join(format!("{}.pub.jwk", args.handle));
    fs::write(
        &public_path,
        serde_json::to_string_pretty(&pair.public_jwk())?,
    )
    .with_context(|| format!("write {}", public_path.display()))?;
    let thumbprint = pair.thumbprint();
    let thumb_path = args.keystore.join(format!("{}.thumb", args.handle));
    fs::write(&thumb_path, &thumbprint)
        .with_context(|| format!("write {}", thumb_path.display()))?;
    println!("Generated Ed25519 key `{}` ({thumbprint})", args.handle);
    Ok(CommandOutput::ok(json!({
        "handle": args.handle,
        "private_key": private_path,
        "public_jwk": public_path,
        "thumbprint": thumbprint,
    })))
}

// ---- anchors ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    #[value(name = "org_root")]
    OrgRoot,
    #[value(name = "issuer")]
    Issuer,
}

impl From<RoleArg> for KeyRole {
    fn from(role: RoleArg) -> KeyRole {
        match role {
            RoleArg::OrgRoot => KeyRole::OrgRoot,
            RoleArg::Issuer => KeyRole::Issuer,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum AnchorsCmd {
    /// Register a new organization key in the trust registry
    Register(AnchorsRegisterArgs),
    /// Replace an organization's active key; the old key stops verifying
    Rotate(AnchorsRotateArgs),
    /// Revoke an organization's active key without a replacement
    Revoke(AnchorsRevokeArgs),
    /// Write the canonical anchor snapshot consumed by verifiers
    Export(AnchorsExportArgs),
    /// Summarize and optionally signature-check an anchor snapshot
    Import(AnchorsImportArgs),
}

#[derive(Debug, Args)]
pub struct AnchorsRegisterArgs {
    /// Registry event-log file (created if absent)
    #[arg(long)]
    pub registry: PathBuf,
    /// Organization identifier, e.g. org:hospital-a
    #[arg(long)]
    pub org: String,
    #[arg(long, value_enum)]
    pub role: RoleArg,
    /// File containing the public JWK to register
    #[arg(long)]
    pub key: PathBuf,
    /// Validity start, epoch seconds (default: one minute ago)
    #[arg(long)]
    pub not_before: Option<i64>,
    /// Validity end, epoch seconds (default: one year from now)
    #[arg(long)]
    pub not_after: Option<i64>,
    /// Registering caller identity, if not the registry operator
    #[arg(long)]
    pub caller: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnchorsRotateArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub org: String,
    #[arg(long, value_enum)]
    pub role: RoleArg,
    /// File containing the replacement public JWK
    #[arg(long)]
    pub key: PathBuf,
    /// Validity start for the new key (default: inherit rotation policy)
    #[arg(long)]
    pub not_before: Option<i64>,
    /// Validity end for the new key
    #[arg(long)]
    pub not_after: Option<i64>,
}

#[derive(Debug, Args)]
pub struct AnchorsRevokeArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub org: String,
    #[arg(long, value_enum)]
    pub role: RoleArg,
}

#[derive(Debug, Args)]
pub struct AnchorsExportArgs {
    #[arg(long)]
    pub registry: PathBuf,
    /// Destination snapshot file
    #[arg(long)]
    pub out: PathBuf,
    /// Keystore directory holding the snapshot signing key
    #[arg(long, requires = "sign_handle")]
    pub sign_keystore: Option<PathBuf>,
    /// Handle of the signing key; writes `<out>.sig` with a detached
    /// Ed25519 signature over the snapshot bytes
    #[arg(long, requires = "sign_keystore")]
    pub sign_handle: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnchorsImportArgs {
    /// Snapshot file to inspect
    #[arg(long)]
    pub file: PathBuf,
    /// Public JWK file used to check the detached signature
    #[arg(long, requires = "sig")]
    pub verify_key: Option<PathBuf>,
    /// Detached signature file produced by `anchors export`
    #[arg(long, requires = "verify_key")]
    pub sig: Option<PathBuf>,
}

fn read_public_jwk(path: &Path) -> Result<Jwk> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("read public JWK {}", path.display()))?;
    let jwk: Jwk =
        serde_json::from_str(&text).with_context(|| format!("parse JWK {}", path.display()))?;
    Ok(jwk)
}

pub fn anchors(cmd: &AnchorsCmd) -> Result<CommandOutput> {
    match cmd {
        AnchorsCmd::Register(args) => {
            let mut registry = TrustRegistry::open(&args.registry).context("open registry")?;
            let key = read_public_jwk(&args.key)?;
            let nbf = args.not_before.unwrap_or_else(|| now() - DEFAULT_BACKDATE);
            let naf = args
                .not_after
                .unwrap_or_else(|| now() + DEFAULT_ANCHOR_LIFETIME);
            let record = registry.register_org(
                args.caller.as_deref(),
                &args.org,
                args.role.into(),
                key,
                nbf,
                naf,
            )?;
            println!(
                "Registered {} key for {} ({})",
                record.role, record.org_id, record.thumbprint
            );
            Ok(CommandOutput::ok(json!({
                "org_id": record.org_id,
                "role": record.role.to_string(),
                "thumbprint": record.thumbprint,
                "not_before": record.not_before,
                "not_after": record.not_after,
                "registry_version": registry.version(),
            })))
        }
        AnchorsCmd::Rotate(args) => {
            let mut registry = TrustRegistry::open(&args.registry).context("open registry")?;
            let key = read_public_jwk(&args.key)?;
            let validity = match (args.not_before, args.not_after) {
                (None, None) => None,
                (nbf, naf) => Some((
                    nbf.unwrap_or_else(|| now() - DEFAULT_BACKDATE),
                    naf.unwrap_or_else(|| now() + DEFAULT_ANCHOR_LIFETIME),
                )),
            };
            let anchors = registry.rotate_key(&args.org, args.role.into(), key, validity)?;
            println!(
                "Rotated {} key for {}; registry version {}",
                KeyRole::from(args.role),
                args.org,
                registry.version()
            );
            Ok(CommandOutput::ok(json!({
                "org_id": args.org,
                "role": KeyRole::from(args.role).to_string(),
                "registry_version": registry.version(),
                "active_anchors": anchors.anchors.values().filter(|r| r.is_active()).count(),
            })))
        }
        AnchorsCmd::Revoke(args) => {
            let mut registry = TrustRegistry::open(&args.registry).context("open registry")?;
            let anchors = registry.revoke_key(&args.org, args.role.into())?;
            println!(
                "Revoked {} key for {}; registry version {}",
                KeyRole::from(args.role),
                args.org,
                registry.version()
            );
            Ok(CommandOutput::ok(json!({
                "org_id": args.org,
                "role": KeyRole::from(args.role).to_string(),
                "registry_version": registry.version(),
                "active_anchors": anchors.anchors.values().filter(|r| r.is_active()).count(),
            })))
        }
        AnchorsCmd::Export(args) => anchors_export(args),
        AnchorsCmd::Import(args) => anchors_import(args),
    }
}

fn anchors_export(args: &AnchorsExportArgs) -> Result<CommandOutput> {
    let registry = TrustRegistry::open(&args.registry).context("open registry")?;
    let snapshot = registry.snapshot_anchors();
    let bytes = snapshot.export_bytes();
    fs::write(&args.out, &bytes).with_context(|| format!("write {}", args.out.display()))?;
    let mut output = json!({
        "out": args.out,
        "version": snapshot.version,
        "anchors": snapshot.anchors.len(),
        "snapshot_digest": snapshot.snapshot_digest,
    });
    if let (Some(dir), Some(handle)) = (&args.sign_keystore, &args.sign_handle) {
        let pair = Keystore::open(dir)?.load(handle).context("load signing key")?;
        let signature = pair.signing_key().sign(&bytes);
        let sig_path = PathBuf::from(format!("{}.sig", args.out.display()));
        fs::write(&sig_path, b64url_encode(&signature.to_bytes()))
            .with_context(|| format!("write {}", sig_path.display()))?;
        output["signature"] = json!(sig_path);
        output["signer_thumbprint"] = json!(pair.thumbprint());
        println!(
            "Exported {} anchor(s) to {} (signed by {})",
            snapshot.anchors.len(),
            args.out.display(),
            pair.thumbprint()
        );
    } else {
        println!(
            "Exported {} anchor(s) to {}",
            snapshot.anchors.len(),
            args.out.display()
        );
    }
    Ok(CommandOutput::ok(output))
}

fn anchors_import(args: &AnchorsImportArgs) -> Result<CommandOutput> {
    let bytes =
        fs::read(&args.file).with_context(|| format!("read {}", args.file.display()))?;
    let mut signature_valid = None;
    if let (Some(key_path), Some(sig_path)) = (&args.verify_key, &args.sig) {
        let jwk = read_public_jwk(key_path)?;
        let verifying = jwk.as_ed25519().context("signature key")?;
        let sig_text = fs::read_to_string(sig_path)
            .with_context(|| format!("read {}", sig_path.display()))?;
        let sig_bytes = b64url_decode(sig_text.trim()).context("decode signature")?;
        let sig_array: [u8; 64] = sig_bytes
            .as_slice()
            .try_into()
            .map_err(|_| anyhow::anyhow!("signature must be 64 bytes"))?;
        let ok = verifying
            .verify(&bytes, &Signature::from_bytes(&sig_array))
            .is_ok();
        signature_valid = Some(ok);
        if !ok {
            println!(
                "Snapshot {} FAILED signature verification; do not trust it",
                args.file.display()
            );
            return Ok(CommandOutput::findings(json!({
                "file": args.file,
                "signature_valid": false,
            })));
        }
    }
    let snapshot = TrustAnchorSet::from_export_bytes(&bytes)?;
    let active = snapshot.anchors.values().filter(|r| r.is_active()).count();
    println!(
        "Snapshot {}: version {}, {} anchor(s) ({} active), digest {}",
        args.file.display(),
        snapshot.version,
        snapshot.anchors.len(),
        active,
        snapshot.snapshot_digest
    );
    Ok(CommandOutput::ok(json!({
        "file": args.file,
        "version": snapshot.version,
        "anchors": snapshot.anchors.len(),
        "active_anchors": active,
        "snapshot_digest": snapshot.snapshot_digest,
        "signature_valid": signature_valid,
    })))
}

// ---- envelope ----

#[derive(Debug, Args)]
pub struct EnvelopeArgs {
    #[command(flatten)]
    pub client: ClientOpts,
    /// Participant organization ids (comma separated or repeated)
    #[arg(long, value_delimiter = ',', required = true)]
    pub participants: Vec<String>,
    /// Approvals required before the envelope activates
    #[arg(long)]
    pub quorum_k: u32,
    /// Approval group size (default: participant count)
    #[arg(long)]
    pub quorum_n: Option<u32>,
    /// Envelope validity start, epoch seconds
    #[arg(long)]
    pub nbf: Option<i64>,
    /// Envelope validity end, epoch seconds
    #[arg(long)]
    pub exp: Option<i64>,
    /// Fetch each organization's verification code with that
    /// organization's admin credentials: repeatable `org_id=cert.pem,key.pem`
    #[arg(long = "admin", value_name = "ORG=CERT,KEY")]
    pub admins: Vec<String>,
    /// Read verification codes from a file with `org_id code` lines
    /// instead of prompting
    #[arg(long)]
    pub codes_from_file: Option<PathBuf>,
    /// Stop the ceremony after this many approvals, leaving the envelope
    /// pending
    #[arg(long)]
    pub stop_after_approvals: Option<u32>,
}

fn parse_admin_spec(spec: &str) -> Result<(String, PathBuf, PathBuf)> {
    let (org, files) = spec
        .split_once('=')
        .with_context(|| format!("--admin `{spec}`: expected ORG=CERT,KEY"))?;
    let (cert, key) = files
        .split_once(',')
        .with_context(|| format!("--admin `{spec}`: expected ORG=CERT,KEY"))?;
    Ok((org.to_string(), PathBuf::from(cert), PathBuf::from(key)))
}

fn load_codes_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("read codes file {}", path.display()))?;
    let mut codes = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let org = parts.next();
        let code = parts.next();
        match (org, code) {
            (Some(org), Some(code)) => {
                codes.insert(org.to_string(), code.to_string());
            }
            _ => bail!(
                "codes file {} line {}: expected `org_id code`",
                path.display(),
                idx + 1
            ),
        }
    }
    Ok(codes)
}

fn prompt_code(org: &str) -> Result<String> {
    eprint!("Verification code for {org}: ");
    std::io::stderr().flush().ok();
    let mut line = String::new();
    std::io::stdin()
        .lock()
        .read_line(&mut line)
        .context("read verification code from stdin")?;
    let code = line.trim().to_string();
    if code.is_empty() {
        bail!("no verification code entered for {org}");
    }
    Ok(code)
}

pub fn envelope(args: &EnvelopeArgs) -> Result<CommandOutput> {
    let quorum_n = args.quorum_n.unwrap_or(args.participants.len() as u32);
    let mut admin_creds: BTreeMap<String, (PathBuf, PathBuf)> = BTreeMap::new();
    for spec in &args.admins {
        let (org, cert, key) = parse_admin_spec(spec)?;
        admin_creds.insert(org, (cert, key));
    }
    let codes = match &args.codes_from_file {
        Some(path) => Some(load_codes_file(path)?),
        None => None,
    };

    let hub = args.client.build()?;
    let init = expect_json(
        hub.post(args.client.url("/beta/bind/init"))
            .json(&json!({
                "participants": args.participants,
                "quorum_k": args.quorum_k,
                "quorum_n": quorum_n,
                "nbf": args.nbf,
                "exp": args.exp,
            }))
            .send()
            .context("send bind/init")?,
    )?;
    let envelope_id = init["envelope_id"]
        .as_str()
        .context("bind/init response lacks envelope_id")?
        .to_string();
    let mut state = init["state"]
        .as_str()
        .context("bind/init response lacks state")?
        .to_string();
    let mut approvals = 0u64;
    println!(
        "Envelope {envelope_id} initialized: quorum {}-of-{}, participants {}",
        args.quorum_k,
        quorum_n,
        args.participants.join(", ")
    );

    let approval_limit = args.stop_after_approvals.map(u64::from).unwrap_or(u64::MAX);
    for org in &args.participants {
        if approvals >= approval_limit || state == "Active" {
            break;
        }
        let code = if let Some((cert, key)) = admin_creds.get(org) {
            let admin = args.client.with_identity(cert, key).build()?;
            let session = expect_json(
                admin
                    .get(args.client.url("/verify-start"))
                    .send()
                    .with_context(|| format!("verify-start as {org}"))?,
            )?;
            let code = session["code"]
                .as_str()
                .context("verify-start response lacks code")?
                .to_string();
            println!("Obtained verification code for {org}");
            code
        } else if let Some(codes) = &codes {
            codes
                .get(org)
                .with_context(|| format!("codes file has no entry for {org}"))?
                .clone()
        } else {
            prompt_code(org)?
        };
        let claim = expect_json(
            hub.get(args.client.url(&format!("/session/claim?code={code}")))
                .send()
                .with_context(|| format!("claim session for {org}"))?,
        )?;
        let session_id = claim["session_id"]
            .as_str()
            .context("claim response lacks session_id")?
            .to_string();
        let approve = expect_json(
            hub.post(args.client.url("/beta/bind/approve"))
                .json(&json!({ "session_id": session_id }))
                .send()
                .with_context(|| format!("approve for {org}"))?,
        )?;
        state = approve["state"]
            .as_str()
            .context("approve response lacks state")?
            .to_string();
        approvals = approve["approvals"].as_u64().unwrap_or(approvals + 1);
        println!(
            "Approval {approvals}/{} recorded for {org} (state {state})",
            args.quorum_k
        );
    }

    if state == "Active" {
        println!("Envelope created: {envelope_id}");
    } else {
        println!("Envelope pending: {envelope_id} (state {state})");
    }
    Ok(CommandOutput::ok(json!({
        "envelope_id": envelope_id,
        "state": state,
        "approvals": approvals,
        "quorum_k": args.quorum_k,
        "quorum_n": quorum_n,
    })))
}

// ---- mint ----

#[derive(Debug, Args)]
pub struct MintArgs {
    #[command(flatten)]
    pub client: ClientOpts,
    /// Gateway-side keystore handle of the issuer signing key
    #[arg(long)]
    pub issuer_handle: String,
    /// File containing the holder's public JWK
    #[arg(long)]
    pub holder_jwk: PathBuf,
    /// Capability profiles to compile into the token (comma separated)
    #[arg(long, value_delimiter = ',', required = true)]
    pub profiles: Vec<String>,
    /// Service audience the token is scoped to
    #[arg(long)]
    pub audience: String,
    /// Subject identity named in the token
    #[arg(long)]
    pub subject: String,
    /// Bind the token to one sovereignty envelope id
    #[arg(long)]
    pub envelope: Option<String>,
    /// Token validity start, epoch seconds (default: one minute ago)
    #[arg(long)]
    pub not_before: Option<i64>,
    /// Token validity end, epoch seconds (default: one hour from now)
    #[arg(long)]
    pub not_after: Option<i64>,
    /// Write the compact token here
    #[arg(long)]
    pub out: PathBuf,
    /// Re-verify the minted token locally against this anchor snapshot
    #[arg(long)]
    pub verify_anchors: Option<PathBuf>,
}

pub fn mint(args: &MintArgs) -> Result<CommandOutput> {
    let holder_jwk = read_public_jwk(&args.holder_jwk)?;
    let client = args.client.build()?;
    let response = expect_json(
        client
            .post(args.client.url("/mint_ect"))
            .json(&json!({
                "issuer_key_handle": args.issuer_handle,
                "holder_jwk": holder_jwk,
                "profiles": args.profiles,
                "not_before": args.not_before.unwrap_or_else(|| now() - DEFAULT_BACKDATE),
                "not_after": args
                    .not_after
                    .unwrap_or_else(|| now() + DEFAULT_TOKEN_LIFETIME),
                "audience": args.audience,
                "subject": args.subject,
                "envelope_scope": args.envelope,
            }))
            .send()
            .context("send mint request")?,
    )?;
    let ect = response["ect"]
        .as_str()
        .context("mint response lacks ect")?
        .to_string();
    let jti = response["jti"].as_str().unwrap_or("").to_string();
    fs::write(&args.out, &ect).with_context(|| format!("write {}", args.out.display()))?;
    println!(
        "Minted capability token {jti} for {} -> {}",
        args.subject,
        args.out.display()
    );

    let mut output = json!({
        "jti": jti,
        "issuer_thumbprint": response["issuer_thumbprint"],
        "holder_thumbprint": response["holder_thumbprint"],
        "token_path": args.out,
    });
    if let Some(anchors_path) = &args.verify_anchors {
        let bytes = fs::read(anchors_path)
            .with_context(|| format!("read {}", anchors_path.display()))?;
        let anchors = TrustAnchorSet::from_export_bytes(&bytes)?;
        match fcac_gateway::routes::verify_minted_token(&ect, &anchors) {
            Ok(thumbprint) => {
                println!("Local signature check passed (issuer {thumbprint})");
                output["verified"] = json!(true);
            }
            Err(err) => {
                println!("Local signature check FAILED: {err}");
                output["verified"] = json!(false);
                return Ok(CommandOutput::findings(output));
            }
        }
    }
    Ok(CommandOutput::ok(output))
}

// ---- shared admission plumbing ----

fn load_compact_token(path: &Path) -> Result<String> {
    let text =
        fs::read_to_string(path).with_context(|| format!("read token {}", path.display()))?;
    Ok(text.trim().to_string())
}

fn load_proof_key(keystore: &Path, handle: &str) -> Result<KeyPair> {
    Keystore::open(keystore)?
        .load(handle)
        .with_context(|| format!("load key `{handle}` from {}", keystore.display()))
}

/// Sign a fresh possession proof and post one admission request.
fn post_admission(
    client_opts: &ClientOpts,
    client: &reqwest::blocking::Client,
    ect: &str,
    signer: &KeyPair,
    body: &serde_json::Value,
) -> Result<serde_json::Value> {
    let admission_url = client_opts.url("/admission/check");
    let proof = fcac_core::proofs::build_proof(
        signer,
        "POST",
        &admission_url,
        ect,
        now(),
        None,
        None,
    )
    .context("sign possession proof")?
    .compact;
    expect_json(
        client
            .post(&admission_url)
            .header("Authorization", format!("DPoP {ect}"))
            .header("DPoP", proof)
            .json(body)
            .send()
            .context("send admission request")?,
    )
}

// ---- probe ----

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub client: ClientOpts,
    /// Probe fixture: JSON list of executions with expected decisions
    #[arg(long)]
    pub fixture: PathBuf,
    /// File containing the compact capability token to present
    #[arg(long)]
    pub ect: PathBuf,
    /// Keystore directory holding proof signing keys
    #[arg(long)]
    pub keystore: PathBuf,
    /// Handle of the token holder's key
    #[arg(long, default_value = "holder")]
    pub holder_handle: String,
    /// Handle of the non-holder key used by negative probes; an
    /// ephemeral key is generated when the keystore has no such handle
    #[arg(long, default_value = "intruder")]
    pub intruder_handle: String,
    /// Substitute this live envelope id into every probe execution
    #[arg(long)]
    pub envelope_id: Option<String>,
}

pub fn probe(args: &ProbeArgs) -> Result<CommandOutput> {
    let probes = load_probes(&args.fixture)?;
    let ect = load_compact_token(&args.ect)?;
    let holder = load_proof_key(&args.keystore, &args.holder_handle)?;
    let store = Keystore::open(&args.keystore)?;
    let intruder = if store.contains(&args.intruder_handle) {
        store.load(&args.intruder_handle)?
    } else {
        KeyPair::generate(&mut rand::thread_rng())
    };
    let client = args.client.build()?;

    let mut results = Vec::new();
    let mut failed = 0usize;
    for spec in &probes {
        let mut execution = spec.execution.clone();
        if let Some(id) = &args.envelope_id {
            execution.envelope_id = id.clone();
        }
        let signer = if spec.proof_key == PROOF_KEY_HOLDER {
            &holder
        } else {
            &intruder
        };
        let response = post_admission(
            &args.client,
            &client,
            &ect,
            signer,
            &json!({ "execution": execution }),
        )?;
        let outcome: Outcome = serde_json::from_value(response["outcome"].clone())
            .context("decode admission outcome")?;
        let reason: fcac_core::ReasonCode = serde_json::from_value(response["reason"].clone())
            .context("decode admission reason")?;
        let pass = outcome == spec.expect_outcome && reason == spec.expect_reason;
        if pass {
            println!(
                "PASS {} ({}/{})",
                spec.name,
                wire_str(&outcome),
                wire_str(&reason)
            );
        } else {
            failed += 1;
            println!(
                "FAIL {}: expected {}/{}, got {}/{}",
                spec.name,
                wire_str(&spec.expect_outcome),
                wire_str(&spec.expect_reason),
                wire_str(&outcome),
                wire_str(&reason)
            );
        }
        results.push(ProbeResult {
            name: spec.name.clone(),
            expect_outcome: spec.expect_outcome,
            expect_reason: spec.expect_reason,
            outcome,
            reason,
            pass,
        });
    }
    println!(
        "Probes: {} passed, {} failed out of {}",
        results.len() - failed,
        failed,
        results.len()
    );
    let output = json!({
        "total": results.len(),
        "passed": results.len() - failed,
        "failed": failed,
        "results": results,
    });
    Ok(CommandOutput {
        json: output,
        exit: if failed == 0 { Exit::Ok } else { Exit::Findings },
    })
}

// ---- predict ----

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub client: ClientOpts,
    /// File containing the compact capability token to present
    #[arg(long)]
    pub ect: PathBuf,
    /// Keystore directory holding the holder's proof signing key
    #[arg(long)]
    pub keystore: PathBuf,
    #[arg(long, default_value = "holder")]
    pub holder_handle: String,
    /// Sovereignty envelope the prediction runs under
    #[arg(long)]
    pub envelope: String,
    /// Digit image to classify, 0 through 9
    #[arg(long)]
    pub digit: u8,
    /// Requesting analyst recorded with the call
    #[arg(long)]
    pub who: Option<String>,
    /// Cohort qualifier the caller claims
    #[arg(long, default_value = "EVEN_ONLY")]
    pub cohort: String,
    /// Service audience on the execution
    #[arg(long)]
    pub audience: String,
}

pub fn predict(args: &PredictArgs) -> Result<CommandOutput> {
    let ect = load_compact_token(&args.ect)?;
    let holder = load_proof_key(&args.keystore, &args.holder_handle)?;
    let client = args.client.build()?;

    let mut qualifiers = BTreeMap::new();
    qualifiers.insert("cohort".to_string(), ScopeValue::s(&args.cohort));
    qualifiers.insert("purpose".to_string(), ScopeValue::s("model_prediction"));
    let execution = ExecutionTuple {
        resource: "PET-CT".to_string(),
        action: "predict".to_string(),
        qualifiers,
        audience: args.audience.clone(),
        envelope_id: args.envelope.clone(),
    };
    let body = json!({
        "execution": execution,
        "params": { "digit": args.digit, "who": args.who },
    });
    let response = post_admission(&args.client, &client, &ect, &holder, &body)?;
    let outcome: Outcome = serde_json::from_value(response["outcome"].clone())
        .context("decode admission outcome")?;
    match outcome {
        Outcome::Allow => {
            let status = response["result"]["status"].as_str().unwrap_or("?");
            let label = response["result"]["label"].as_str();
            match label {
                Some(label) => println!("ALLOW: digit {} -> {label} ({status})", args.digit),
                None => println!("ALLOW: digit {} -> {status}", args.digit),
            }
            Ok(CommandOutput::ok(response))
        }
        Outcome::Deny => {
            println!(
                "DENY ({}): digit {} was not admitted",
                response["reason"].as_str().unwrap_or("?"),
                args.digit
            );
            Ok(CommandOutput::findings(response))
        }
    }
}

// ---- audit ----

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Decision log to verify
    #[arg(long)]
    pub log: PathBuf,
}

pub fn audit(args: &AuditArgs) -> Result<CommandOutput> {
    let report = verify_decision_log(&args.log)?;
    println!(
        "Audit of {}: {} record line(s), {} allow / {} deny, {} finding(s)",
        args.log.display(),
        report.total_lines,
        report.allow_count,
        report.deny_count,
        report.findings.len()
    );
    for finding in &report.findings {
        println!("FINDING {}", serde_json::to_string(finding)?);
    }
    let clean = report.is_clean();
    let output = json!({
        "log": args.log,
        "clean": clean,
        "report": report,
    });
    Ok(CommandOutput {
        json: output,
        exit: if clean { Exit::Ok } else { Exit::Findings },
    })
}
