use rand::{CryptoRng, RngCore};
use zeroize::Zeroizing;

use super::{CallLog, CipherSuite, CryptoError, KdfParams, Primitive};
use crate::wire::{Reader, Writer};

const SALT_LEN: usize = 16;

/// A private key encrypted under a key derived from the user's credential.
/// The credential itself is not stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedKeyFile {
    pub suite_id: String,
    pub kdf_salt: Vec<u8>,
    pub kdf_params: KdfParams,
    pub ciphertext: Vec<u8>,
    pub integrity_tag: Vec<u8>,
}

impl SealedKeyFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .str(&self.suite_id)
            .bytes(&self.kdf_salt)
            .u32(self.kdf_params.iterations)
            .u32(self.kdf_params.memory_kib)
            .bytes(&self.ciphertext)
            .bytes(&self.integrity_tag)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let file = SealedKeyFile {
            suite_id: r.string("suite_id")?,
            kdf_salt: r.vec()?,
            kdf_params: KdfParams {
                iterations: r.u32("kdf_iterations")?,
                memory_kib: r.u32("kdf_memory")?,
            },
            ciphertext: r.vec()?,
            integrity_tag: r.vec()?,
        };
        r.finish()?;
        Ok(file)
    }

    fn mac_parts<'a>(&'a self, params: &'a [u8; 8]) -> [&'a [u8]; 4] {
        [
            self.suite_id.as_bytes(),
            &self.kdf_salt,
            params,
            &self.ciphertext,
        ]
    }
}

fn params_bytes(p: KdfParams) -> [u8; 8] {
    let mut out = [0u8; 8];
    out[..4].copy_from_slice(&p.iterations.to_be_bytes());
    out[4..].copy_from_slice(&p.memory_kib.to_be_bytes());
    out
}

pub fn seal_keyfile<R: RngCore + CryptoRng>(
    suite: CipherSuite,
    credential: &str,
    private_key: &[u8],
    rng: &mut R,
) -> Result<SealedKeyFile, CryptoError> {
    if credential.is_empty() {
        return Err(CryptoError::EmptyCredential);
    }
    let mut salt = vec![0u8; SALT_LEN];
    rng.fill_bytes(&mut salt);
    let params = suite.default_kdf_params();
    let derived = Zeroizing::new(suite.derive_key(credential.as_bytes(), &salt, params)?);
    let (enc_key, mac_key) = split(&derived);

    let mut file = SealedKeyFile {
        suite_id: suite.id().to_string(),
        kdf_salt: salt,
        kdf_params: params,
        ciphertext: suite.encrypt(&enc_key, private_key),
        integrity_tag: Vec::new(),
    };
    let pb = params_bytes(params);
    file.integrity_tag = suite.mac(&mac_key, &file.mac_parts(&pb));
    Ok(file)
}

pub fn open_keyfile(
    credential: &str,
    file: &SealedKeyFile,
) -> Result<Zeroizing<Vec<u8>>, CryptoError> {
    open_keyfile_traced(credential, file).0
}

pub(crate) fn open_keyfile_traced(
    credential: &str,
    file: &SealedKeyFile,
) -> (Result<Zeroizing<Vec<u8>>, CryptoError>, CallLog) {
    let mut log = CallLog::default();
    let res = (|| {
        if credential.is_empty() {
            return Err(CryptoError::EmptyCredential);
        }
        let suite = CipherSuite::from_id(&file.suite_id)?;
        log.push(Primitive::Kdf);
        let derived = Zeroizing::new(suite.derive_key(
            credential.as_bytes(),
            &file.kdf_salt,
            file.kdf_params,
        )?);
        let (enc_key, mac_key) = split(&derived);
        log.push(Primitive::MacVerify);
        let pb = params_bytes(file.kdf_params);
        if !suite.mac_verify(&mac_key, &file.mac_parts(&pb), &file.integrity_tag) {
            return Err(CryptoError::CredentialFailure);
        }
        log.push(Primitive::Decrypt);
        Ok(Zeroizing::new(suite.decrypt(&enc_key, &file.ciphertext)))
    })();
    (res, log)
}

fn split(derived: &[u8; 64]) -> (Zeroizing<[u8; 32]>, Zeroizing<[u8; 32]>) {
    let mut a = Zeroizing::new([0u8; 32]);
    let mut b = Zeroizing::new([0u8; 32]);
    a.copy_from_slice(&derived[..32]);
    b.copy_from_slice(&derived[32..]);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn contains(haystack: &[u8], needle: &[u8]) -> bool {
        !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
    }

    #[test]
    fn roundtrip_and_wrong_credential() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for suite in CipherSuite::ALL {
            let file = seal_keyfile(suite, "pw", b"private key bytes", &mut rng).unwrap();
            assert_eq!(
                &open_keyfile("pw", &file).unwrap()[..],
                b"private key bytes"
            );
            let (res, log) = open_keyfile_traced("pW", &file);
            assert_eq!(res.map(|_| ()), Err(CryptoError::CredentialFailure));
            assert_eq!(log.count(Primitive::Decrypt), 0);
        }
    }

    #[test]
    fn empty_credential_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        assert_eq!(
            seal_keyfile(CipherSuite::Test, "", b"k", &mut rng),
            Err(CryptoError::EmptyCredential)
        );
    }

    #[test]
    fn persisted_bytes_hold_no_credential_or_key_substring() {
        // Substring scan: no 4-byte window of the key and no occurrence of the
        // credential may appear in the serialized file.
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let keys = KeyPair::generate(CipherSuite::Test, &mut rng);
        let secret = keys.to_secret_bytes();
        let credential = "hunter2-long-credential";
        let bytes = seal_keyfile(CipherSuite::Test, credential, &secret, &mut rng)
            .unwrap()
            .to_bytes();
        assert!(!contains(&bytes, credential.as_bytes()));
        // Skip the suite-id prefix of the key serialization, which is public.
        for window in secret[4 + CipherSuite::Test.id().len()..].windows(4) {
            assert!(!contains(&bytes, window), "key window {window:?} leaked");
        }
    }

    #[test]
    fn wire_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let file = seal_keyfile(CipherSuite::Test, "pw", b"abc", &mut rng).unwrap();
        assert_eq!(SealedKeyFile::from_bytes(&file.to_bytes()).unwrap(), file);
    }
}
