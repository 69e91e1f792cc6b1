//! Ed25519 keypair generation and a file-backed keystore.
//!
//! Private keys are stored as JWKs carrying the `d` member, one file per
//! handle, owner-read/write only. Key generation draws from a caller
//! supplied RNG so tests can seed it deterministically.

use crate::jose::{b64url_encode, Jwk, JoseError};
use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::RngCore;
use serde_json::Value;
use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("key handle `{0}` not found")]
    NotFound(String),
    #[error("key handle `{0}` already exists")]
    AlreadyExists(String),
    #[error(transparent)]
    Malformed(#[from] JoseError),
    #[error("keystore I/O: {0}")]
    Io(#[from] io::Error),
}

/// An Ed25519 keypair with JWK views.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    /// Generate from 32 bytes of RNG output.
    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn signing_key(&self) -> &SigningKey {
        &self.signing
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    /// Public JWK (no private material).
    pub fn public_jwk(&self) -> Jwk {
        Jwk::from_ed25519(&self.signing.verifying_key())
    }

    /// Private JWK including the `d` member.
    pub fn private_jwk(&self) -> Jwk {
        let mut map = BTreeMap::new();
        map.insert("kty".into(), Value::String("OKP".into()));
        map.insert("crv".into(), Value::String("Ed25519".into()));
        map.insert(
            "x".into(),
            Value::String(b64url_encode(self.signing.verifying_key().as_bytes())),
        );
        map.insert(
            "d".into(),
            Value::String(b64url_encode(&self.signing.to_bytes())),
        );
        Jwk::from_value(Value::Object(map.into_iter().collect())).expect("object is a valid JWK")
    }

    /// RFC 7638 thumbprint of the public key.
    pub fn thumbprint(&self) -> String {
        self.public_jwk()
            .thumbprint()
            .expect("Ed25519 JWK always has required members")
    }

    pub fn from_private_jwk(jwk: &Jwk) -> Result<Self, KeyError> {
        Ok(KeyPair {
            signing: jwk.signing_key()?,
        })
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("thumbprint", &self.thumbprint())
            .finish_non_exhaustive()
    }
}

/// Directory of private-key JWK files addressed by handle.
#[derive(Debug, Clone)]
pub struct Keystore {
    dir: PathBuf,
}

impl Keystore {
    /// Open (creating the directory if needed).
    pub fn open<P: AsRef<Path>>(dir: P) -> Result<Self, KeyError> {
        fs::create_dir_all(&dir)?;
        Ok(Keystore {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    pub fn path(&self, handle: &str) -> PathBuf {
        self.dir.join(format!("{handle}.jwk"))
    }

    /// Persist a keypair under `handle`. Refuses to overwrite unless
    /// `force` is set; the file is owner-only.
    pub fn store(&self, handle: &str, pair: &KeyPair, force: bool) -> Result<PathBuf, KeyError> {
        let path = self.path(handle);
        if path.exists() && !force {
            return Err(KeyError::AlreadyExists(handle.to_string()));
        }
        let body = crate::jose::canonical_json(&pair.private_jwk())?;
        fs::write(&path, body)?;
        restrict_permissions(&path)?;
        Ok(path)
    }

    pub fn load(&self, handle: &str) -> Result<KeyPair, KeyError> {
        let path = self.path(handle);
        let body = fs::read_to_string(&path)
            .map_err(|_| KeyError::NotFound(handle.to_string()))?;
        let jwk = Jwk::from_str(&body)?;
        KeyPair::from_private_jwk(&jwk)
    }

    pub fn contains(&self, handle: &str) -> bool {
        self.path(handle).exists()
    }
}

#[cfg(unix)]
fn restrict_permissions(path: &Path) -> io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o600))
}

#[cfg(not(unix))]
fn restrict_permissions(_path: &Path) -> io::Result<()> {
    Ok(())
}
