//! The private repository: ACL-tagged files, the credential-sealed private
//! key and the archive of counter-signed documents.
//!
//! # Blob format
//!
//! The repository persists as one blob in the device's secure storage. All
//! fields use the length-prefixed framing from [`crate::wire`]:
//!
//! ```text
//! blob    = "utcb-repo-v1" suite_id salt(16) ciphertext tag
//! records = record*                      (plaintext of `ciphertext`)
//! record  = "owner"   name
//!         | "file"    path content acl_count acl_entry*
//!         | "keyfile" sealed_key_file_bytes
//!         | "signed"  signed_document_bytes
//! ```
//!
//! The blob key pair is derived from the device key and the per-save salt.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::authority::PeerCertificate;
use crate::crypto::{hash, open_keyfile, CipherSuite, CryptoError, SealedKeyFile, SignedDocument};
use crate::taint::LabeledBytes;
use crate::wire::{Reader, WireError, Writer};

const BLOB_MAGIC: &str = "utcb-repo-v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepoError {
    #[error("operation requires secure-mode")]
    NotInSecureMode,
    #[error("no such file `{0}`")]
    PathMissing(String),
    #[error("invalid path `{0}`")]
    InvalidPath(String),
    #[error("credential rejected")]
    CredentialFailure,
    #[error("key handle belongs to a secure-mode session that has ended")]
    HandleExpired,
    #[error("no private key file is installed")]
    NoKeyFile,
    #[error("too many credential failures in this session")]
    LockedOut,
    #[error("repository blob is corrupt: {0}")]
    CorruptBlob(String),
}

/// Issued by the kernel only while it is in secure-mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecureAccess {
    session_id: u64,
}

impl SecureAccess {
    pub(crate) fn new(session_id: u64) -> Self {
        Self { session_id }
    }

    pub fn session_id(&self) -> u64 {
        self.session_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoFile {
    pub path: String,
    pub content: LabeledBytes,
    /// Peer names and group names permitted as recipients.
    pub acl: Vec<String>,
}

impl RepoFile {
    pub fn acl_allows(&self, recipient: &PeerCertificate) -> bool {
        self.acl
            .iter()
            .any(|entry| *entry == recipient.name || recipient.groups.contains(entry))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repository {
    owner: String,
    files: BTreeMap<String, RepoFile>,
    keyfile: Option<SealedKeyFile>,
    signed_archive: Vec<SignedDocument>,
}

fn check_path(path: &str) -> Result<(), RepoError> {
    let ok = !path.is_empty()
        && path
            .split('/')
            .all(|seg| !seg.is_empty() && seg != "." && seg != "..");
    if ok {
        Ok(())
    } else {
        Err(RepoError::InvalidPath(path.to_string()))
    }
}

impl Repository {
    pub fn new(owner: impl Into<String>) -> Self {
        Self {
            owner: owner.into(),
            files: BTreeMap::new(),
            keyfile: None,
            signed_archive: Vec::new(),
        }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn install_keyfile(&mut self, keyfile: SealedKeyFile) {
        self.keyfile = Some(keyfile);
    }

    pub fn keyfile(&self) -> Option<&SealedKeyFile> {
        self.keyfile.as_ref()
    }

    pub fn list(&self, _access: &SecureAccess) -> Vec<String> {
        self.files.keys().cloned().collect()
    }

    pub fn read(&self, _access: &SecureAccess, path: &str) -> Result<&RepoFile, RepoError> {
        self.files
            .get(path)
            .ok_or_else(|| RepoError::PathMissing(path.to_string()))
    }

    pub fn write(
        &mut self,
        _access: &SecureAccess,
        path: &str,
        content: &[u8],
        acl: Vec<String>,
    ) -> Result<(), RepoError> {
        check_path(path)?;
        self.files.insert(
            path.to_string(),
            RepoFile {
                path: path.to_string(),
                content: LabeledBytes::secret(self.owner.clone(), content.to_vec()),
                acl,
            },
        );
        Ok(())
    }

    pub fn delete(&mut self, _access: &SecureAccess, path: &str) -> Result<(), RepoError> {
        self.files
            .remove(path)
            .map(|_| ())
            .ok_or_else(|| RepoError::PathMissing(path.to_string()))
    }

    /// Files a given recipient may receive, in path order.
    pub fn files_for(&self, _access: &SecureAccess, recipient: &PeerCertificate) -> Vec<&RepoFile> {
        self.files
            .values()
            .filter(|f| f.acl_allows(recipient))
            .collect()
    }

    pub fn files(&self) -> impl Iterator<Item = &RepoFile> {
        self.files.values()
    }

    pub(crate) fn open_private_key(
        &self,
        _access: &SecureAccess,
        credential: &str,
    ) -> Result<Zeroizing<Vec<u8>>, RepoError> {
        let keyfile = self.keyfile.as_ref().ok_or(RepoError::NoKeyFile)?;
        open_keyfile(credential, keyfile).map_err(|_| RepoError::CredentialFailure)
    }

    pub fn archive_signed(&mut self, _access: &SecureAccess, doc: SignedDocument) {
        self.signed_archive.push(doc);
    }

    pub fn list_signed(&self, _access: &SecureAccess) -> &[SignedDocument] {
        &self.signed_archive
    }

    pub fn record_stream(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str("owner").str(&self.owner);
        for f in self.files.values() {
            w.str("file")
                .str(&f.path)
                .bytes(f.content.bytes())
                .str_list(f.acl.iter().map(String::as_str));
        }
        if let Some(kf) = &self.keyfile {
            w.str("keyfile").bytes(&kf.to_bytes());
        }
        for doc in &self.signed_archive {
            w.str("signed").bytes(&doc.to_bytes());
        }
        w.finish()
    }

    pub fn from_record_stream(bytes: &[u8]) -> Result<Self, RepoError> {
        let corrupt = |e: &dyn std::fmt::Display| RepoError::CorruptBlob(e.to_string());
        let mut r = Reader::new(bytes);
        let mut repo: Option<Repository> = None;
        while !r.is_empty() {
            let kind = r.string("record").map_err(|e| corrupt(&e))?;
            if kind == "owner" {
                repo = Some(Repository::new(r.string("owner").map_err(|e| corrupt(&e))?));
                continue;
            }
            let repo = repo
                .as_mut()
                .ok_or_else(|| RepoError::CorruptBlob("record before owner".into()))?;
            match kind.as_str() {
                "file" => {
                    let path = r.string("path").map_err(|e| corrupt(&e))?;
                    let content = r.vec().map_err(|e| corrupt(&e))?;
                    let acl = r.str_list("acl").map_err(|e| corrupt(&e))?;
                    check_path(&path)?;
                    repo.files.insert(
                        path.clone(),
                        RepoFile {
                            path,
                            content: LabeledBytes::secret(repo.owner.clone(), content),
                            acl,
                        },
                    );
                }
                "keyfile" => {
                    let raw = r.bytes().map_err(|e| corrupt(&e))?;
                    repo.keyfile = Some(SealedKeyFile::from_bytes(raw).map_err(|e| corrupt(&e))?);
                }
                "signed" => {
                    let raw = r.bytes().map_err(|e| corrupt(&e))?;
                    repo.signed_archive
                        .push(SignedDocument::from_bytes(raw).map_err(|e| corrupt(&e))?);
                }
                other => return Err(RepoError::CorruptBlob(format!("unknown record `{other}`"))),
            }
        }
        repo.ok_or_else(|| RepoError::CorruptBlob("missing owner record".into()))
    }

    pub fn seal_blob<R: RngCore + CryptoRng>(
        &self,
        suite: CipherSuite,
        device_key: &[u8; 32],
        rng: &mut R,
    ) -> Vec<u8> {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let (enc, mac) = blob_keys(suite, device_key, &salt);
        let plaintext = Zeroizing::new(self.record_stream());
        let ciphertext = suite.encrypt(&enc, &plaintext);
        let tag = suite.mac(
            &mac,
            &[
                BLOB_MAGIC.as_bytes(),
                suite.id().as_bytes(),
                &salt,
                &ciphertext,
            ],
        );
        Writer::new()
            .str(BLOB_MAGIC)
            .str(suite.id())
            .bytes(&salt)
            .bytes(&ciphertext)
            .bytes(&tag)
            .finish()
    }

    pub fn open_blob(device_key: &[u8; 32], blob: &[u8]) -> Result<Self, RepoError> {
        let corrupt = |e: &dyn std::fmt::Display| RepoError::CorruptBlob(e.to_string());
        let mut r = Reader::new(blob);
        if r.string("magic").map_err(|e| corrupt(&e))? != BLOB_MAGIC {
            return Err(RepoError::CorruptBlob("bad magic".into()));
        }
        let suite = CipherSuite::from_id(&r.string("suite_id").map_err(|e| corrupt(&e))?)
            .map_err(|e: CryptoError| corrupt(&e))?;
        let salt = r.vec().map_err(|e| corrupt(&e))?;
        let ciphertext = r.vec().map_err(|e| corrupt(&e))?;
        let tag = r.vec().map_err(|e| corrupt(&e))?;
        r.finish().map_err(|e: WireError| corrupt(&e))?;
        let (enc, mac) = blob_keys(suite, device_key, &salt);
        if !suite.mac_verify(
            &mac,
            &[
                BLOB_MAGIC.as_bytes(),
                suite.id().as_bytes(),
                &salt,
                &ciphertext,
            ],
            &tag,
        ) {
            return Err(RepoError::CorruptBlob("integrity tag mismatch".into()));
        }
        let plaintext = Zeroizing::new(suite.decrypt(&enc, &ciphertext));
        Self::from_record_stream(&plaintext)
    }
}

fn blob_keys(
    suite: CipherSuite,
    device_key: &[u8; 32],
    salt: &[u8],
) -> (Zeroizing<[u8; 32]>, Zeroizing<[u8; 32]>) {
    (
        Zeroizing::new(hash(
            "utcb-repo-enc",
            &[suite.id().as_bytes(), device_key, salt],
        )),
        Zeroizing::new(hash(
            "utcb-repo-mac",
            &[suite.id().as_bytes(), device_key, salt],
        )),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authority::{CertRequest, Role};
    use crate::crypto::{seal_keyfile, KeyPair};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const ACCESS: SecureAccess = SecureAccess { session_id: 1 };

    fn cert(name: &str, groups: &[&str]) -> PeerCertificate {
        let kp = KeyPair::from_seed(CipherSuite::Test, [7; 32]);
        CertRequest::new(name, kp.public(), Role::Contact)
            .groups(groups.iter().copied())
            .sign("ca", &kp)
    }

    #[test]
    fn write_read_delete() {
        let mut repo = Repository::new("alice");
        repo.write(&ACCESS, "notes/a", b"content", vec![]).unwrap();
        let f = repo.read(&ACCESS, "notes/a").unwrap();
        assert_eq!(f.content.bytes(), b"content");
        assert!(f.content.label().is_secret());
        repo.delete(&ACCESS, "notes/a").unwrap();
        assert_eq!(
            repo.read(&ACCESS, "notes/a").unwrap_err(),
            RepoError::PathMissing("notes/a".into())
        );
        assert!(repo.delete(&ACCESS, "notes/a").is_err());
    }

    #[test]
    fn paths_are_flat_and_validated() {
        let mut repo = Repository::new("alice");
        for bad in ["", "/abs", "a//b", "a/../b", "a/./b", "trailing/"] {
            assert!(matches!(
                repo.write(&ACCESS, bad, b"x", vec![]),
                Err(RepoError::InvalidPath(_))
            ));
        }
    }

    #[test]
    fn acl_by_name_and_group() {
        let mut repo = Repository::new("alice");
        repo.write(&ACCESS, "a", b"1", vec!["alice".into()])
            .unwrap();
        repo.write(&ACCESS, "b", b"2", vec!["acme-employees".into()])
            .unwrap();
        repo.write(&ACCESS, "c", b"3", vec![]).unwrap();
        let by_name = cert("alice", &[]);
        let by_group = cert("carol", &["acme-employees"]);
        let nobody = cert("mallory", &["gov"]);
        assert!(repo.read(&ACCESS, "a").unwrap().acl_allows(&by_name));
        assert!(repo.read(&ACCESS, "b").unwrap().acl_allows(&by_group));
        for c in [&by_name, &by_group, &nobody] {
            assert!(!repo.read(&ACCESS, "c").unwrap().acl_allows(c));
        }
        let paths: Vec<_> = repo
            .files_for(&ACCESS, &by_group)
            .iter()
            .map(|f| f.path.clone())
            .collect();
        assert_eq!(paths, vec!["b"]);
    }

    #[test]
    fn archive_is_append_only_and_survives_reboot() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let kp = KeyPair::generate(CipherSuite::Test, &mut rng);
        let mut repo = Repository::new("alice");
        let d1 = SignedDocument::issue("receipt", b"one".to_vec(), vec![], "broker", &kp);
        let d2 = SignedDocument::issue("receipt", b"two".to_vec(), vec![], "broker", &kp);
        repo.archive_signed(&ACCESS, d1.clone());
        repo.archive_signed(&ACCESS, d2.clone());
        assert_eq!(repo.list_signed(&ACCESS), &[d1, d2]);

        repo.install_keyfile(seal_keyfile(CipherSuite::Test, "pw", b"sk", &mut rng).unwrap());
        repo.write(&ACCESS, "x/y", b"file", vec!["g".into()])
            .unwrap();

        // Reboot replay: persist, drop, reload from the blob alone.
        let device_key = [9u8; 32];
        let blob = repo.seal_blob(CipherSuite::Test, &device_key, &mut rng);
        let restored = Repository::open_blob(&device_key, &blob).unwrap();
        assert_eq!(restored, repo);
    }

    #[test]
    fn corrupt_blob_detected() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let repo = Repository::new("alice");
        let key = [1u8; 32];
        let mut blob = repo.seal_blob(CipherSuite::Test, &key, &mut rng);
        assert!(Repository::open_blob(&[2u8; 32], &blob).is_err());
        let last = blob.len() - 1;
        blob[last] ^= 1;
        assert!(matches!(
            Repository::open_blob(&key, &blob),
            Err(RepoError::CorruptBlob(_))
        ));
    }

    #[test]
    fn private_key_requires_credential() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut repo = Repository::new("alice");
        assert_eq!(
            repo.open_private_key(&ACCESS, "pw").unwrap_err(),
            RepoError::NoKeyFile
        );
        repo.install_keyfile(seal_keyfile(CipherSuite::Test, "pw", b"sk-bytes", &mut rng).unwrap());
        assert_eq!(
            &repo.open_private_key(&ACCESS, "pw").unwrap()[..],
            b"sk-bytes"
        );
        assert_eq!(
            repo.open_private_key(&ACCESS, "PW").unwrap_err(),
            RepoError::CredentialFailure
        );
    }
}
