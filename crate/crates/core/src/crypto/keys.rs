use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use x25519_dalek::StaticSecret;
use zeroize::Zeroizing;

use super::suite::hash;
use super::{CipherSuite, CryptoError};
use crate::wire::{Reader, Writer};

/// A peer's private key material: an Ed25519 signing key and an X25519
/// key-agreement secret, both bound to one cipher suite.
#[derive(Clone)]
pub struct KeyPair {
    suite: CipherSuite,
    signing: SigningKey,
    exchange: StaticSecret,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("suite", &self.suite)
            .field("public", &self.public())
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(suite: CipherSuite, rng: &mut R) -> Self {
        let mut seed = Zeroizing::new([0u8; 32]);
        rng.fill_bytes(seed.as_mut());
        Self::from_seed(suite, *seed)
    }

    pub fn from_seed(suite: CipherSuite, seed: [u8; 32]) -> Self {
        let sign_seed = Zeroizing::new(hash("utcb-keygen-sign", &[&seed]));
        let exch_seed = Zeroizing::new(hash("utcb-keygen-exchange", &[&seed]));
        Self {
            suite,
            signing: SigningKey::from_bytes(&sign_seed),
            exchange: StaticSecret::from(*exch_seed),
        }
    }

    pub fn suite(&self) -> CipherSuite {
        self.suite
    }

    pub fn public(&self) -> PublicKey {
        PublicKey {
            suite: self.suite,
            verifying: self.signing.verifying_key().to_bytes(),
            exchange: x25519_dalek::PublicKey::from(&self.exchange).to_bytes(),
        }
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }

    pub(crate) fn exchange_secret(&self) -> &StaticSecret {
        &self.exchange
    }

    /// Private key serialization, used only as key-file plaintext.
    pub fn to_secret_bytes(&self) -> Zeroizing<Vec<u8>> {
        Zeroizing::new(
            Writer::new()
                .str(self.suite.id())
                .bytes(self.signing.as_bytes())
                .bytes(self.exchange.as_bytes())
                .finish(),
        )
    }

    pub fn from_secret_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let suite = CipherSuite::from_id(&r.string("suite_id")?)?;
        let sign: [u8; 32] = r
            .bytes()?
            .try_into()
            .map_err(|_| CryptoError::MalformedKey)?;
        let exch: [u8; 32] = r
            .bytes()?
            .try_into()
            .map_err(|_| CryptoError::MalformedKey)?;
        r.finish()?;
        Ok(Self {
            suite,
            signing: SigningKey::from_bytes(&sign),
            exchange: StaticSecret::from(exch),
        })
    }
}

/// The public half of a [`KeyPair`], as carried in certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey {
    suite: CipherSuite,
    verifying: [u8; 32],
    exchange: [u8; 32],
}

impl PublicKey {
    pub fn suite(&self) -> CipherSuite {
        self.suite
    }

    pub fn exchange_bytes(&self) -> [u8; 32] {
        self.exchange
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(&self.verifying) else {
            return false;
        };
        vk.verify(message, &sig).is_ok()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .str(self.suite.id())
            .bytes(&self.verifying)
            .bytes(&self.exchange)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let suite = CipherSuite::from_id(&r.string("suite_id")?)?;
        let verifying = r
            .bytes()?
            .try_into()
            .map_err(|_| CryptoError::MalformedKey)?;
        let exchange = r
            .bytes()?
            .try_into()
            .map_err(|_| CryptoError::MalformedKey)?;
        r.finish()?;
        Ok(Self {
            suite,
            verifying,
            exchange,
        })
    }

    /// Short hex fingerprint for traces and menus.
    pub fn fingerprint(&self) -> String {
        hex::encode(&hash("utcb-fingerprint", &[&self.to_bytes()])[..8])
    }
}

const WRAP_LEN: usize = 64;

/// Ephemeral-static X25519 key wrap: `ephemeral_pub || key XOR kek`.
///
/// The wrap itself carries no integrity; envelopes sign the wrapped keys.
pub(crate) fn wrap_key<R: RngCore + CryptoRng>(
    recipient: &PublicKey,
    key: &[u8; 32],
    rng: &mut R,
) -> Vec<u8> {
    let mut eph_bytes = Zeroizing::new([0u8; 32]);
    rng.fill_bytes(eph_bytes.as_mut());
    let eph = StaticSecret::from(*eph_bytes);
    let eph_pub = x25519_dalek::PublicKey::from(&eph);
    let shared = eph.diffie_hellman(&x25519_dalek::PublicKey::from(recipient.exchange));
    let kek = Zeroizing::new(hash(
        "utcb-keywrap",
        &[
            recipient.suite.id().as_bytes(),
            shared.as_bytes(),
            eph_pub.as_bytes(),
            &recipient.exchange,
        ],
    ));
    let mut out = Vec::with_capacity(WRAP_LEN);
    out.extend_from_slice(eph_pub.as_bytes());
    out.extend(key.iter().zip(kek.iter()).map(|(k, w)| k ^ w));
    out
}

pub(crate) fn unwrap_key(
    keys: &KeyPair,
    wrapped: &[u8],
) -> Result<Zeroizing<[u8; 32]>, CryptoError> {
    if wrapped.len() != WRAP_LEN {
        return Err(CryptoError::MalformedKey);
    }
    let eph_pub: [u8; 32] = wrapped[..32].try_into().expect("32 bytes");
    let shared = keys
        .exchange_secret()
        .diffie_hellman(&x25519_dalek::PublicKey::from(eph_pub));
    let own_pub = keys.public().exchange;
    let kek = Zeroizing::new(hash(
        "utcb-keywrap",
        &[
            keys.suite().id().as_bytes(),
            shared.as_bytes(),
            &eph_pub,
            &own_pub,
        ],
    ));
    let mut key = Zeroizing::new([0u8; 32]);
    for (i, (c, w)) in wrapped[32..].iter().zip(kek.iter()).enumerate() {
        key[i] = c ^ w;
    }
    Ok(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn wrap_unwrap_recovers_key_only_for_recipient() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let bob = KeyPair::generate(CipherSuite::Test, &mut rng);
        let eve = KeyPair::generate(CipherSuite::Test, &mut rng);
        let key = [42u8; 32];
        let wrapped = wrap_key(&bob.public(), &key, &mut rng);
        assert_eq!(*unwrap_key(&bob, &wrapped).unwrap(), key);
        assert_ne!(*unwrap_key(&eve, &wrapped).unwrap(), key);
    }

    #[test]
    fn key_serializations_roundtrip() {
        let kp = KeyPair::from_seed(CipherSuite::Reference, [3u8; 32]);
        let back = KeyPair::from_secret_bytes(&kp.to_secret_bytes()).unwrap();
        assert_eq!(back.public(), kp.public());
        assert_eq!(
            PublicKey::from_bytes(&kp.public().to_bytes()).unwrap(),
            kp.public()
        );
    }

    #[test]
    fn signatures_verify_only_under_signer() {
        let a = KeyPair::from_seed(CipherSuite::Test, [1u8; 32]);
        let b = KeyPair::from_seed(CipherSuite::Test, [2u8; 32]);
        let sig = a.sign(b"msg");
        assert!(a.public().verify(b"msg", &sig));
        assert!(!b.public().verify(b"msg", &sig));
        assert!(!a.public().verify(b"msG", &sig));
        assert!(!a.public().verify(b"msg", &sig[..63]));
    }
}
