use rand::{CryptoRng, RngCore};
use zeroize::Zeroizing;

use super::keys::{unwrap_key, wrap_key};
use super::{check_suite, CallLog, CipherSuite, CryptoError, KeyPair, Primitive, PublicKey};
use crate::wire::{Reader, Writer};

/// Encrypt-then-MAC hybrid ciphertext.
///
/// Two fresh symmetric keys are wrapped under the recipient's public key and
/// the wrapped pair is signed by the sender. The tag covers the suite id, the
/// sender name and the ciphertext; it never covers plaintext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub suite_id: String,
    pub sender_name: String,
    pub wrapped_enc_key: Vec<u8>,
    pub wrapped_mac_key: Vec<u8>,
    pub keys_signature: Vec<u8>,
    pub ciphertext: Vec<u8>,
    pub mac_tag: Vec<u8>,
}

impl Envelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .str(&self.suite_id)
            .str(&self.sender_name)
            .bytes(&self.wrapped_enc_key)
            .bytes(&self.wrapped_mac_key)
            .bytes(&self.keys_signature)
            .bytes(&self.ciphertext)
            .bytes(&self.mac_tag)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let env = Envelope {
            suite_id: r.string("suite_id")?,
            sender_name: r.string("sender_name")?,
            wrapped_enc_key: r.vec()?,
            wrapped_mac_key: r.vec()?,
            keys_signature: r.vec()?,
            ciphertext: r.vec()?,
            mac_tag: r.vec()?,
        };
        r.finish()?;
        Ok(env)
    }

    fn signed_keys_message(suite_id: &str, sender: &str, enc: &[u8], mac: &[u8]) -> Vec<u8> {
        Writer::new()
            .str("utcb-envelope-keys")
            .str(suite_id)
            .str(sender)
            .bytes(enc)
            .bytes(mac)
            .finish()
    }
}

pub fn seal<R: RngCore + CryptoRng>(
    suite: CipherSuite,
    sender_name: &str,
    sender_keys: &KeyPair,
    recipient: &PublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<Envelope, CryptoError> {
    seal_traced(suite, sender_name, sender_keys, recipient, plaintext, rng).0
}

pub fn seal_traced<R: RngCore + CryptoRng>(
    suite: CipherSuite,
    sender_name: &str,
    sender_keys: &KeyPair,
    recipient: &PublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> (Result<Envelope, CryptoError>, CallLog) {
    let mut log = CallLog::default();
    let result = seal_inner(
        suite,
        sender_name,
        sender_keys,
        recipient,
        plaintext,
        rng,
        &mut log,
    );
    (result, log)
}

fn seal_inner<R: RngCore + CryptoRng>(
    suite: CipherSuite,
    sender_name: &str,
    sender_keys: &KeyPair,
    recipient: &PublicKey,
    plaintext: &[u8],
    rng: &mut R,
    log: &mut CallLog,
) -> Result<Envelope, CryptoError> {
    check_suite(suite, sender_keys.suite())?;
    check_suite(suite, recipient.suite())?;
    if plaintext.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }

    let mut enc_key = Zeroizing::new([0u8; 32]);
    let mut mac_key = Zeroizing::new([0u8; 32]);
    rng.fill_bytes(enc_key.as_mut());
    loop {
        rng.fill_bytes(mac_key.as_mut());
        if *mac_key != *enc_key {
            break;
        }
    }

    log.push(Primitive::Wrap);
    let wrapped_enc_key = wrap_key(recipient, &enc_key, rng);
    log.push(Primitive::Wrap);
    let wrapped_mac_key = wrap_key(recipient, &mac_key, rng);

    let suite_id = suite.id().to_string();
    log.push(Primitive::Sign);
    let keys_signature = sender_keys.sign(&Envelope::signed_keys_message(
        &suite_id,
        sender_name,
        &wrapped_enc_key,
        &wrapped_mac_key,
    ));

    log.push(Primitive::Encrypt);
    let ciphertext = suite.encrypt(&enc_key, plaintext);
    log.push(Primitive::Mac);
    let mac_tag = suite.mac(
        &mac_key,
        &[suite_id.as_bytes(), sender_name.as_bytes(), &ciphertext],
    );

    Ok(Envelope {
        suite_id,
        sender_name: sender_name.to_string(),
        wrapped_enc_key,
        wrapped_mac_key,
        keys_signature,
        ciphertext,
        mac_tag,
    })
}

/// Verifies and decrypts an envelope from a known sender.
pub fn open(
    suite: CipherSuite,
    recipient_keys: &KeyPair,
    sender_name: &str,
    sender_key: &PublicKey,
    env: &Envelope,
) -> Result<Vec<u8>, CryptoError> {
    open_traced(suite, recipient_keys, sender_name, sender_key, env).0
}

pub fn open_traced(
    suite: CipherSuite,
    recipient_keys: &KeyPair,
    sender_name: &str,
    sender_key: &PublicKey,
    env: &Envelope,
) -> (Result<Vec<u8>, CryptoError>, CallLog) {
    let mut log = CallLog::default();
    let result = open_inner(
        suite,
        recipient_keys,
        sender_name,
        sender_key,
        env,
        &mut log,
    );
    (result, log)
}

fn open_inner(
    suite: CipherSuite,
    recipient_keys: &KeyPair,
    sender_name: &str,
    sender_key: &PublicKey,
    env: &Envelope,
    log: &mut CallLog,
) -> Result<Vec<u8>, CryptoError> {
    check_suite(suite, CipherSuite::from_id(&env.suite_id)?)?;
    check_suite(suite, recipient_keys.suite())?;
    check_suite(suite, sender_key.suite())?;

    if env.sender_name != sender_name {
        return Err(CryptoError::SignatureFailure);
    }
    log.push(Primitive::VerifySignature);
    let signed = Envelope::signed_keys_message(
        &env.suite_id,
        &env.sender_name,
        &env.wrapped_enc_key,
        &env.wrapped_mac_key,
    );
    if !sender_key.verify(&signed, &env.keys_signature) {
        return Err(CryptoError::SignatureFailure);
    }

    log.push(Primitive::Unwrap);
    let mac_key =
        unwrap_key(recipient_keys, &env.wrapped_mac_key).map_err(|_| CryptoError::MacFailure)?;
    log.push(Primitive::MacVerify);
    let parts: [&[u8]; 3] = [
        env.suite_id.as_bytes(),
        env.sender_name.as_bytes(),
        &env.ciphertext,
    ];
    if !suite.mac_verify(&mac_key, &parts, &env.mac_tag) {
        return Err(CryptoError::MacFailure);
    }

    log.push(Primitive::Unwrap);
    let enc_key =
        unwrap_key(recipient_keys, &env.wrapped_enc_key).map_err(|_| CryptoError::MacFailure)?;
    log.push(Primitive::Decrypt);
    Ok(suite.decrypt(&enc_key, &env.ciphertext))
}
