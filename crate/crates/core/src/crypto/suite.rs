use std::fmt;

use chacha20::cipher::{KeyIvInit, StreamCipher};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CryptoError;

type HmacSha256 = Hmac<Sha256>;

/// Selects the five primitives used by every construction in this crate.
///
/// Both suites share X25519 key wrapping and Ed25519 signatures (which are
/// deterministic once key material and the injected RNG are fixed). They
/// differ in the symmetric layer and the password KDF:
///
/// | suite     | enc                    | mac                       | kdf                 |
/// |-----------|------------------------|---------------------------|---------------------|
/// | Test      | SHA-256 counter XOR    | HMAC-SHA256, 16-byte tag  | PBKDF2-HMAC-SHA256  |
/// | Reference | ChaCha20               | HMAC-SHA256, 32-byte tag  | Argon2id            |
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
pub enum CipherSuite {
    Test,
    Reference,
}

/// Password KDF cost parameters, persisted next to the salt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KdfParams {
    pub iterations: u32,
    pub memory_kib: u32,
}

impl CipherSuite {
    pub const ALL: [CipherSuite; 2] = [CipherSuite::Test, CipherSuite::Reference];

    pub fn id(self) -> &'static str {
        match self {
            CipherSuite::Test => "utcb-test-v1",
            CipherSuite::Reference => "utcb-ref-v1",
        }
    }

    pub fn from_id(id: &str) -> Result<Self, CryptoError> {
        Self::ALL
            .into_iter()
            .find(|s| s.id() == id)
            .ok_or_else(|| CryptoError::UnknownSuite(id.to_string()))
    }

    pub fn mac_len(self) -> usize {
        match self {
            CipherSuite::Test => 16,
            CipherSuite::Reference => 32,
        }
    }

    pub fn default_kdf_params(self) -> KdfParams {
        match self {
            CipherSuite::Test => KdfParams {
                iterations: 64,
                memory_kib: 0,
            },
            CipherSuite::Reference => KdfParams {
                iterations: 2,
                memory_kib: 4096,
            },
        }
    }

    /// Stream encryption. Every key is used for exactly one message, so the
    /// nonce is fixed at zero.
    pub fn encrypt(self, key: &[u8; 32], data: &[u8]) -> Vec<u8> {
        let mut out = data.to_vec();
        match self {
            CipherSuite::Test => xor_stream(key, &mut out),
            CipherSuite::Reference => {
                let mut cipher = chacha20::ChaCha20::new(key.into(), &[0u8; 12].into());
                cipher.apply_keystream(&mut out);
            }
        }
        out
    }

    pub fn decrypt(self, key: &[u8; 32], data: &[u8]) -> Vec<u8> {
        self.encrypt(key, data)
    }

    /// MAC over a sequence of fields. Each part is length-prefixed so field
    /// boundaries cannot be shifted.
    pub fn mac(self, key: &[u8; 32], parts: &[&[u8]]) -> Vec<u8> {
        let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("hmac accepts any key");
        for part in parts {
            mac.update(&(part.len() as u32).to_be_bytes());
            mac.update(part);
        }
        let mut tag = mac.finalize().into_bytes().to_vec();
        tag.truncate(self.mac_len());
        tag
    }

    pub fn mac_verify(self, key: &[u8; 32], parts: &[&[u8]], tag: &[u8]) -> bool {
        let expected = self.mac(key, parts);
        // Length check first; the fold below is not meant to be constant time.
        expected.len() == tag.len()
            && expected
                .iter()
                .zip(tag)
                .fold(0u8, |acc, (a, b)| acc | (a ^ b))
                == 0
    }

    /// Derives 64 bytes of key material from a credential: the first half
    /// encrypts, the second half authenticates.
    pub fn derive_key(
        self,
        credential: &[u8],
        salt: &[u8],
        params: KdfParams,
    ) -> Result<[u8; 64], CryptoError> {
        let mut out = [0u8; 64];
        match self {
            CipherSuite::Test => {
                pbkdf2::pbkdf2_hmac::<Sha256>(credential, salt, params.iterations.max(1), &mut out);
            }
            CipherSuite::Reference => {
                let argon_params =
                    argon2::Params::new(params.memory_kib, params.iterations, 1, Some(64))
                        .map_err(|_| CryptoError::BadKdfParams)?;
                argon2::Argon2::new(
                    argon2::Algorithm::Argon2id,
                    argon2::Version::V0x13,
                    argon_params,
                )
                .hash_password_into(credential, salt, &mut out)
                .map_err(|_| CryptoError::BadKdfParams)?;
            }
        }
        Ok(out)
    }
}

impl fmt::Display for CipherSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

fn xor_stream(key: &[u8; 32], data: &mut [u8]) {
    for (counter, chunk) in data.chunks_mut(32).enumerate() {
        let block = Sha256::new()
            .chain_update(b"utcb-xor-stream")
            .chain_update(key)
            .chain_update((counter as u64).to_be_bytes())
            .finalize();
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}

/// Domain-separated SHA-256, used for key-encryption keys and digests.
pub(crate) fn hash(domain: &str, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((domain.len() as u32).to_be_bytes());
    h.update(domain.as_bytes());
    for part in parts {
        h.update((part.len() as u32).to_be_bytes());
        h.update(part);
    }
    h.finalize().into()
}
