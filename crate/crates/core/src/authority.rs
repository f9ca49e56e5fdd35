//! Peers, roles, groups and group-restricted CA chains.
//!
//! Lookups are by exact name only. `BankOfA` and `Bank0fA` are unrelated
//! peers; nothing in this module normalizes or fuzzily matches names.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, CipherSuite, CryptoError, KdfParams, KeyPair, PublicKey};
use crate::wire::{Reader, WireError, Writer};

/// Longest issuer path accepted, counted in hops from the certificate to a
/// trust anchor.
pub const MAX_CHAIN_DEPTH: usize = 4;

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    schemars::JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Contact,
    Signatory,
    #[serde(rename = "ca")]
    Ca,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Contact, Role::Signatory, Role::Ca];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Contact => "contact",
            Role::Signatory => "signatory",
            Role::Ca => "ca",
        }
    }

    fn parse(s: &str) -> Option<Role> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything a CA signs about a subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertRequest {
    pub name: String,
    pub public_key: PublicKey,
    pub role: Role,
    pub groups: BTreeSet<String>,
    pub doc_types: BTreeSet<String>,
    pub authorized_groups: BTreeSet<String>,
}

impl CertRequest {
    pub fn new(name: impl Into<String>, public_key: PublicKey, role: Role) -> Self {
        Self {
            name: name.into(),
            public_key,
            role,
            groups: BTreeSet::new(),
            doc_types: BTreeSet::new(),
            authorized_groups: BTreeSet::new(),
        }
    }

    pub fn groups<I: IntoIterator<Item = S>, S: Into<String>>(mut self, groups: I) -> Self {
        self.groups = groups.into_iter().map(Into::into).collect();
        self
    }

    pub fn doc_types<I: IntoIterator<Item = S>, S: Into<String>>(mut self, types: I) -> Self {
        self.doc_types = types.into_iter().map(Into::into).collect();
        self
    }

    pub fn authorized_groups<I: IntoIterator<Item = S>, S: Into<String>>(
        mut self,
        groups: I,
    ) -> Self {
        self.authorized_groups = groups.into_iter().map(Into::into).collect();
        self
    }

    pub fn sign(self, issuer_name: &str, issuer_keys: &KeyPair) -> PeerCertificate {
        let mut cert = PeerCertificate {
            name: self.name,
            public_key: self.public_key,
            role: self.role,
            groups: self.groups,
            doc_types: self.doc_types,
            issuer_name: issuer_name.to_string(),
            issuer_signature: Vec::new(),
            authorized_groups: self.authorized_groups,
        };
        cert.issuer_signature = issuer_keys.sign(&cert.signed_message());
        cert
    }

    pub fn self_sign(self, keys: &KeyPair) -> PeerCertificate {
        let name = self.name.clone();
        self.sign(&name, keys)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerCertificate {
    pub name: String,
    pub public_key: PublicKey,
    pub role: Role,
    pub groups: BTreeSet<String>,
    pub doc_types: BTreeSet<String>,
    pub issuer_name: String,
    pub issuer_signature: Vec<u8>,
    pub authorized_groups: BTreeSet<String>,
}

impl PeerCertificate {
    fn encode_body(&self, w: &mut Writer) {
        w.str(&self.name)
            .bytes(&self.public_key.to_bytes())
            .str(self.role.as_str())
            .str_list(self.groups.iter().map(String::as_str))
            .str_list(self.doc_types.iter().map(String::as_str))
            .str(&self.issuer_name);
    }

    fn signed_message(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str("utcb-peer-cert");
        self.encode_body(&mut w);
        w.str_list(self.authorized_groups.iter().map(String::as_str));
        w.finish()
    }

    pub fn is_self_signed(&self) -> bool {
        self.issuer_name == self.name
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_body(&mut w);
        w.bytes(&self.issuer_signature)
            .str_list(self.authorized_groups.iter().map(String::as_str));
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let cert = Self::read(&mut r)?;
        r.finish()?;
        Ok(cert)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, CryptoError> {
        let name = r.string("name")?;
        let public_key = PublicKey::from_bytes(r.bytes()?)?;
        let role = Role::parse(&r.string("role")?).ok_or(WireError::Invalid { field: "role" })?;
        let groups = r.str_list("groups")?.into_iter().collect();
        let doc_types = r.str_list("doc_types")?.into_iter().collect();
        let issuer_name = r.string("issuer_name")?;
        let issuer_signature = r.vec()?;
        let authorized_groups = r.str_list("authorized_groups")?.into_iter().collect();
        Ok(PeerCertificate {
            name,
            public_key,
            role,
            groups,
            doc_types,
            issuer_name,
            issuer_signature,
            authorized_groups,
        })
    }

    fn structural_problem(&self) -> Option<&'static str> {
        match self.role {
            Role::Ca if self.authorized_groups.is_empty() => Some("CA without authorized groups"),
            Role::Contact | Role::Signatory if !self.authorized_groups.is_empty() => {
                Some("authorized groups on a non-CA certificate")
            }
            Role::Contact | Role::Ca if !self.doc_types.is_empty() => {
                Some("doc types on a non-signatory")
            }
            _ => None,
        }
    }
}

const ROOTS_MAGIC: &str = "utcb-roots-v1";

/// Serializes the pre-installed root CA fixture.
pub fn encode_roots(roots: &[PeerCertificate]) -> Vec<u8> {
    let mut w = Writer::new();
    w.str(ROOTS_MAGIC).u32(roots.len() as u32);
    for cert in roots {
        w.bytes(&cert.to_bytes());
    }
    w.finish()
}

pub fn decode_roots(bytes: &[u8]) -> Result<Vec<PeerCertificate>, CryptoError> {
    let mut r = Reader::new(bytes);
    if r.string("magic")? != ROOTS_MAGIC {
        return Err(WireError::Invalid { field: "magic" }.into());
    }
    let count = r.u32("count")? as usize;
    if count > r.remaining() / 4 {
        return Err(WireError::Invalid { field: "count" }.into());
    }
    let roots = (0..count)
        .map(|_| PeerCertificate::from_bytes(r.bytes()?))
        .collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(roots)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    UnknownIssuer {
        cert: String,
        issuer: String,
    },
    BadSignature {
        cert: String,
    },
    GroupEscalation {
        cert: String,
        groups: Vec<String>,
    },
    #[serde(rename = "not_a_ca")]
    NotACA {
        cert: String,
        issuer: String,
    },
    ChainTooDeep {
        depth: usize,
    },
    Malformed {
        cert: String,
        problem: String,
    },
    NameConflict {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Names from the certificate up to the anchor that accepted it.
    pub chain: Vec<String>,
    pub rejections: Vec<Rejection>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.rejections.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdminError {
    #[error("administrative password rejected")]
    BadAdminPassword,
    #[error("peer authorization is not available to applications")]
    CalledFromApplicationContext,
    #[error("a different certificate named `{0}` is already registered")]
    DuplicateName(String),
    #[error("certificate is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Proof that the caller is the secure-mode user interface. Only the kernel
/// constructs it.
#[derive(Debug)]
pub struct AdminAccess(());

impl AdminAccess {
    pub(crate) fn from_secure_ui() -> Self {
        AdminAccess(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct AdminPassword {
    suite: CipherSuite,
    salt: Vec<u8>,
    params: KdfParams,
    hash: [u8; 32],
}

/// Trusted roots, administrator-installed peers, and certificates learned
/// from applications after chain validation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PeerRegistry {
    roots: BTreeMap<String, PeerCertificate>,
    installed: BTreeMap<String, PeerCertificate>,
    learned: BTreeMap<String, PeerCertificate>,
    admin_password: Option<AdminPassword>,
    /// Reserved document type → group a presenter must belong to.
    reserved_doc_types: BTreeMap<String, String>,
    verified: VerifiedSignatures,
}

/// Issuer signatures that already verified. Verification is a pure function
/// of key, message and signature, so clones of a registry share one cache.
#[derive(Debug, Clone, Default)]
struct VerifiedSignatures(Arc<Mutex<HashSet<[u8; 32]>>>);

impl PartialEq for VerifiedSignatures {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for VerifiedSignatures {}

impl VerifiedSignatures {
    fn verify(&self, key: &PublicKey, message: &[u8], signature: &[u8]) -> bool {
        let digest = hash(
            "utcb-verified-signature",
            &[&key.to_bytes(), message, signature],
        );
        if self.0.lock().expect("cache lock").contains(&digest) {
            return true;
        }
        let ok = key.verify(message, signature);
        if ok {
            self.0.lock().expect("cache lock").insert(digest);
        }
        ok
    }
}

impl PeerRegistry {
    /// Builds a registry from the factory root set. Roots must be
    /// self-signed CAs with unique names.
    pub fn with_roots(roots: Vec<PeerCertificate>) -> Result<Self, AdminError> {
        let mut reg = PeerRegistry::default();
        for root in roots {
            if !root.is_self_signed() || root.role != Role::Ca {
                return Err(AdminError::Malformed(format!(
                    "root `{}` is not a self-signed CA",
                    root.name
                )));
            }
            if let Some(p) = root.structural_problem() {
                return Err(AdminError::Malformed(p.to_string()));
            }
            if !root
                .public_key
                .verify(&root.signed_message(), &root.issuer_signature)
            {
                return Err(CryptoError::SignatureFailure.into());
            }
            if reg.roots.contains_key(&root.name) {
                return Err(AdminError::DuplicateName(root.name));
            }
            reg.roots.insert(root.name.clone(), root);
        }
        Ok(reg)
    }

    pub fn set_admin_password<R: RngCore + CryptoRng>(
        &mut self,
        suite: CipherSuite,
        password: &str,
        rng: &mut R,
    ) -> Result<(), CryptoError> {
        let mut salt = vec![0u8; 16];
        rng.fill_bytes(&mut salt);
        let params = suite.default_kdf_params();
        let derived = suite.derive_key(password.as_bytes(), &salt, params)?;
        let mut hash = [0u8; 32];
        hash.copy_from_slice(&derived[..32]);
        self.admin_password = Some(AdminPassword {
            suite,
            salt,
            params,
            hash,
        });
        Ok(())
    }

    pub fn reserve_doc_type(&mut self, doc_type: impl Into<String>, group: impl Into<String>) {
        self.reserved_doc_types
            .insert(doc_type.into(), group.into());
    }

    pub fn roots(&self) -> impl Iterator<Item = &PeerCertificate> {
        self.roots.values()
    }

    /// The trust-relevant part of the registry: roots and installed peers.
    /// Learning certificates from applications never changes it.
    pub fn anchors(&self) -> Vec<&PeerCertificate> {
        self.roots.values().chain(self.installed.values()).collect()
    }

    pub fn lookup(&self, name: &str) -> Option<&PeerCertificate> {
        self.roots
            .get(name)
            .or_else(|| self.installed.get(name))
            .or_else(|| self.learned.get(name))
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerCertificate> {
        self.roots
            .values()
            .chain(self.installed.values())
            .chain(self.learned.values())
    }

    fn is_anchor(&self, cert: &PeerCertificate) -> bool {
        self.roots.get(&cert.name) == Some(cert) || self.installed.get(&cert.name) == Some(cert)
    }

    pub fn validate_chain(&self, cert: &PeerCertificate) -> ValidationReport {
        let mut report = ValidationReport {
            chain: vec![cert.name.clone()],
            rejections: Vec::new(),
        };
        let mut current = cert;
        let mut depth = 0;
        loop {
            if let Some(problem) = current.structural_problem() {
                report.rejections.push(Rejection::Malformed {
                    cert: current.name.clone(),
                    problem: problem.to_string(),
                });
                return report;
            }
            if self.is_anchor(current) {
                return report;
            }
            if depth == MAX_CHAIN_DEPTH {
                report
                    .rejections
                    .push(Rejection::ChainTooDeep { depth: depth + 1 });
                return report;
            }
            let issuer = match self.lookup(&current.issuer_name) {
                Some(issuer) if !current.is_self_signed() => issuer,
                _ => {
                    report.rejections.push(Rejection::UnknownIssuer {
                        cert: current.name.clone(),
                        issuer: current.issuer_name.clone(),
                    });
                    return report;
                }
            };
            if issuer.role != Role::Ca {
                report.rejections.push(Rejection::NotACA {
                    cert: current.name.clone(),
                    issuer: issuer.name.clone(),
                });
            }
            if !self.verified.verify(
                &issuer.public_key,
                &current.signed_message(),
                &current.issuer_signature,
            ) {
                report.rejections.push(Rejection::BadSignature {
                    cert: current.name.clone(),
                });
            }
            let escalated: Vec<String> = current
                .groups
                .iter()
                .chain(&current.authorized_groups)
                .filter(|g| !issuer.authorized_groups.contains(*g))
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if !escalated.is_empty() {
                report.rejections.push(Rejection::GroupEscalation {
                    cert: current.name.clone(),
                    groups: escalated,
                });
            }
            if !report.rejections.is_empty() {
                return report;
            }
            report.chain.push(issuer.name.clone());
            current = issuer;
            depth += 1;
        }
    }

    /// Records a certificate presented by an application if its chain
    /// validates. A name already bound to a different certificate is
    /// rejected, never shadowed.
    pub fn learn(&mut self, cert: &PeerCertificate) -> ValidationReport {
        if let Some(existing) = self.lookup(&cert.name) {
            let mut report = self.validate_chain(cert);
            if existing != cert {
                report.rejections.push(Rejection::NameConflict {
                    name: cert.name.clone(),
                });
            }
            return report;
        }
        let report = self.validate_chain(cert);
        if report.is_accepted() {
            self.learned.insert(cert.name.clone(), cert.clone());
        }
        report
    }

    fn password_matches(&self, password: &str) -> Result<bool, CryptoError> {
        let Some(admin) = &self.admin_password else {
            return Ok(true);
        };
        let derived = admin
            .suite
            .derive_key(password.as_bytes(), &admin.salt, admin.params)?;
        Ok(derived[..32] == admin.hash)
    }

    /// Installs a certificate as a trust anchor: a self-signed CA becomes a
    /// local root, anything else a directly trusted peer.
    pub fn admin_authorize(
        &mut self,
        _access: &AdminAccess,
        password: &str,
        cert: PeerCertificate,
    ) -> Result<(), AdminError> {
        if !self.password_matches(password)? {
            return Err(AdminError::BadAdminPassword);
        }
        if let Some(problem) = cert.structural_problem() {
            return Err(AdminError::Malformed(problem.to_string()));
        }
        if let Some(existing) = self.lookup(&cert.name) {
            if *existing != cert {
                return Err(AdminError::DuplicateName(cert.name));
            }
        }
        self.learned.remove(&cert.name);
        if cert.is_self_signed() && cert.role == Role::Ca {
            if !cert
                .public_key
                .verify(&cert.signed_message(), &cert.issuer_signature)
            {
                return Err(CryptoError::SignatureFailure.into());
            }
            self.roots.insert(cert.name.clone(), cert);
        } else {
            self.installed.insert(cert.name.clone(), cert);
        }
        Ok(())
    }

    pub fn check_permission(
        &self,
        peer_name: &str,
        required_role: Role,
        doc_type: Option<&str>,
        group: Option<&str>,
    ) -> bool {
        let Some(cert) = self.lookup(peer_name) else {
            return false;
        };
        if cert.role != required_role || !self.validate_chain(cert).is_accepted() {
            return false;
        }
        if let Some(doc_type) = doc_type {
            if !cert.doc_types.contains(doc_type) {
                return false;
            }
            if let Some(required) = self.reserved_doc_types.get(doc_type) {
                if !cert.groups.contains(required) {
                    return false;
                }
            }
        }
        group.is_none_or(|g| cert.groups.contains(g))
    }
}
