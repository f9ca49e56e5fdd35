//! Known-answer vectors for envelopes under the test suite.
//!
//! One vector per line, hex fields separated by single spaces:
//!
//! ```text
//! <rng_seed> <sender_name> <sender_key_seed> <recipient_key_seed> <plaintext> => <envelope>
//! ```
//!
//! `rng_seed` and the key seeds are 32 bytes. Blank lines and lines starting
//! with `#` are ignored.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::{seal, CipherSuite, CryptoError, KeyPair};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownAnswer {
    pub rng_seed: [u8; 32],
    pub sender_name: String,
    pub sender_seed: [u8; 32],
    pub recipient_seed: [u8; 32],
    pub plaintext: Vec<u8>,
    pub envelope: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum KatError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl KnownAnswer {
    /// Builds a vector by sealing under the test suite.
    pub fn generate(
        rng_seed: [u8; 32],
        sender_name: &str,
        sender_seed: [u8; 32],
        recipient_seed: [u8; 32],
        plaintext: &[u8],
    ) -> Result<Self, CryptoError> {
        let envelope = compute(
            rng_seed,
            sender_name,
            sender_seed,
            recipient_seed,
            plaintext,
        )?;
        Ok(Self {
            rng_seed,
            sender_name: sender_name.to_string(),
            sender_seed,
            recipient_seed,
            plaintext: plaintext.to_vec(),
            envelope,
        })
    }

    /// Recomputes the envelope from the inputs and compares.
    pub fn check(&self) -> Result<bool, CryptoError> {
        let actual = compute(
            self.rng_seed,
            &self.sender_name,
            self.sender_seed,
            self.recipient_seed,
            &self.plaintext,
        )?;
        Ok(actual == self.envelope)
    }

    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} => {}",
            hex::encode(self.rng_seed),
            hex::encode(self.sender_name.as_bytes()),
            hex::encode(self.sender_seed),
            hex::encode(self.recipient_seed),
            hex::encode(&self.plaintext),
            hex::encode(&self.envelope)
        )
    }
}

fn compute(
    rng_seed: [u8; 32],
    sender_name: &str,
    sender_seed: [u8; 32],
    recipient_seed: [u8; 32],
    plaintext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let suite = CipherSuite::Test;
    let mut rng = ChaCha20Rng::from_seed(rng_seed);
    let sender = KeyPair::from_seed(suite, sender_seed);
    let recipient = KeyPair::from_seed(suite, recipient_seed);
    Ok(seal(
        suite,
        sender_name,
        &sender,
        &recipient.public(),
        plaintext,
        &mut rng,
    )?
    .to_bytes())
}

pub fn parse_vectors(text: &str) -> Result<Vec<KnownAnswer>, KatError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |reason: &str| KatError::Parse {
            line,
            reason: reason.to_string(),
        };
        let (inputs, expected) = trimmed
            .split_once(" => ")
            .ok_or_else(|| err("missing `=>`"))?;
        let fields: Vec<&str> = inputs.split(' ').collect();
        if fields.len() != 5 {
            return Err(err("expected 5 input fields"));
        }
        let decode = |s: &str| hex::decode(s).map_err(|e| err(&e.to_string()));
        let seed32 = |s: &str| -> Result<[u8; 32], KatError> {
            decode(s)?
                .try_into()
                .map_err(|_| err("seed must be 32 bytes"))
        };
        out.push(KnownAnswer {
            rng_seed: seed32(fields[0])?,
            sender_name: String::from_utf8(decode(fields[1])?)
                .map_err(|_| err("sender name not UTF-8"))?,
            sender_seed: seed32(fields[2])?,
            recipient_seed: seed32(fields[3])?,
            plaintext: decode(fields[4])?,
            envelope: decode(expected)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_roundtrip() {
        let v = KnownAnswer::generate([1; 32], "alice", [2; 32], [3; 32], b"hi").unwrap();
        let parsed = parse_vectors(&format!("# header\n\n{}\n", v.to_line())).unwrap();
        assert_eq!(parsed, vec![v.clone()]);
        assert!(parsed[0].check().unwrap());
    }

    #[test]
    fn malformed_lines_are_reported_with_line_numbers() {
        let err = parse_vectors("\nzz 00 => 00").unwrap_err();
        assert!(matches!(err, KatError::Parse { line: 2, .. }));
    }
}
