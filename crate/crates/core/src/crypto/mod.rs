//! Cryptographic constructions: sealed envelopes, typed signed documents with
//! counter-signatures, and credential-sealed key files.
//!
//! All randomness is injected by the caller. Every operation that touches the
//! symmetric layer records the primitives it invokes in a per-call
//! [`CallLog`], which is how verify-before-decrypt is made observable.

mod document;
mod envelope;
pub mod kat;
mod keyfile;
mod keys;
mod suite;

use thiserror::Error;

pub use document::{verify_countersigned, DocumentField, FieldKind, SignedDocument};
pub use envelope::{open, open_traced, seal, seal_traced, Envelope};
pub use keyfile::{open_keyfile, seal_keyfile, SealedKeyFile};
pub use keys::{KeyPair, PublicKey};
pub use suite::{CipherSuite, KdfParams};

pub(crate) use suite::hash;

use crate::wire::WireError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("cipher suite mismatch: expected {expected}, found {found}")]
    SuiteMismatch { expected: String, found: String },
    #[error("unknown cipher suite `{0}`")]
    UnknownSuite(String),
    #[error("MAC verification failed")]
    MacFailure,
    #[error("signature verification failed")]
    SignatureFailure,
    #[error("credential rejected")]
    CredentialFailure,
    #[error("originator signature does not verify")]
    OriginatorInvalid,
    #[error("document is already counter-signed")]
    AlreadyCountersigned,
    #[error("field `{0}` is not declared by the document or has the wrong format")]
    FieldRejected(String),
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("credential must not be empty")]
    EmptyCredential,
    #[error("malformed key material")]
    MalformedKey,
    #[error("invalid KDF parameters")]
    BadKdfParams,
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// One invocation of an underlying primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Wrap,
    Unwrap,
    Sign,
    VerifySignature,
    Encrypt,
    Decrypt,
    Mac,
    MacVerify,
    Kdf,
}

/// Ordered record of primitive invocations made by a single operation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallLog(Vec<Primitive>);

impl CallLog {
    pub(crate) fn push(&mut self, p: Primitive) {
        self.0.push(p);
    }

    pub fn calls(&self) -> &[Primitive] {
        &self.0
    }

    pub fn count(&self, p: Primitive) -> usize {
        self.0.iter().filter(|&&c| c == p).count()
    }

    pub fn position(&self, p: Primitive) -> Option<usize> {
        self.0.iter().position(|&c| c == p)
    }
}

pub(crate) fn check_suite(expected: CipherSuite, found: CipherSuite) -> Result<(), CryptoError> {
    if expected == found {
        Ok(())
    } else {
        Err(CryptoError::SuiteMismatch {
            expected: expected.id().to_string(),
            found: found.id().to_string(),
        })
    }
}
