//! Edge identity: who is on the other end of the connection.
//!
//! Handlers never parse certificates. The TLS accept loop (or the
//! trusted forwarding path) derives one [`EdgeIdentity`] per connection
//! and attaches it to every request; route guards and handlers consume
//! only that value.

use fcac_core::envelope::CallerRole;
use x509_parser::prelude::{FromDer, GeneralName, ParsedExtension, X509Certificate};

use crate::GatewayError;

/// Common-name prefix that marks an organization administrator
/// certificate, e.g. `admin:org:hospital-a`.
pub const ADMIN_CN_PREFIX: &str = "admin:";

/// Common name of the hub certificate.
pub const HUB_CN: &str = "hub";

/// Header carrying the client common name on the trusted forwarding path.
pub const FORWARDED_CN_HEADER: &str = "x-forwarded-client-cn";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Hub,
    OrgAdmin(String),
    Member(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentitySource {
    NativeMtls,
    ForwardedHeader,
}

/// Authenticated caller identity as the edge established it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeIdentity {
    /// Full subject DN of the validated certificate (or the forwarded CN
    /// rendered as a DN).
    pub subject_dn: String,
    pub role: Role,
    pub source: IdentitySource,
}

impl EdgeIdentity {
    /// Derive the identity from a validated end-entity client certificate.
    pub fn from_client_cert(der: &[u8]) -> Result<Self, GatewayError> {
        let (_, cert) = X509Certificate::from_der(der)
            .map_err(|e| GatewayError::Tls(format!("client certificate parse: {e}")))?;
        let cn = cert
            .subject()
            .iter_common_name()
            .next()
            .and_then(|a| a.as_str().ok())
            .ok_or_else(|| GatewayError::Tls("client certificate has no CN".into()))?;
        Ok(EdgeIdentity {
            subject_dn: cert.subject().to_string(),
            role: role_from_cn(cn),
            source: IdentitySource::NativeMtls,
        })
    }

    /// Build the identity asserted by a trusted forwarding edge.
    pub fn from_forwarded_cn(cn: &str) -> Self {
        EdgeIdentity {
            subject_dn: format!("CN={cn}"),
            role: role_from_cn(cn),
            source: IdentitySource::ForwardedHeader,
        }
    }

    /// Project onto the caller role the envelope ceremony understands.
    pub fn caller_role(&self) -> CallerRole {
        match &self.role {
            Role::Hub => CallerRole::Hub,
            Role::OrgAdmin(org) => CallerRole::OrgAdmin(org.clone()),
            Role::Member(id) => CallerRole::Member(id.clone()),
        }
    }
}

/// Certificate naming convention: `hub` is the hub, `admin:<org_id>` is
/// that organization's administrator, anything else is a plain member.
pub fn role_from_cn(cn: &str) -> Role {
    if cn == HUB_CN {
        Role::Hub
    } else if let Some(org) = cn.strip_prefix(ADMIN_CN_PREFIX) {
        Role::OrgAdmin(org.to_string())
    } else {
        Role::Member(cn.to_string())
    }
}

/// All subjectAltName dNSName entries of a certificate.
pub fn cert_dns_names(der: &[u8]) -> Result<Vec<String>, GatewayError> {
    let (_, cert) = X509Certificate::from_der(der)
        .map_err(|e| GatewayError::Tls(format!("server certificate parse: {e}")))?;
    let mut names = Vec::new();
    for ext in cert.extensions() {
        if let ParsedExtension::SubjectAlternativeName(san) = ext.parsed_extension() {
            for gn in &san.general_names {
                if let GeneralName::DNSName(name) = gn {
                    names.push((*name).to_string());
                }
            }
        }
    }
    Ok(names)
}
