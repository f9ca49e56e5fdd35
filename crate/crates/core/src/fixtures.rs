//! Deterministic key material and factory provisioning for simulations and
//! tests. Every key is derived from a seed and a name, so two runs with the
//! same seed produce byte-identical certificates.

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::authority::{encode_roots, CertRequest, PeerCertificate, PeerRegistry, Role};
use crate::crypto::{hash, seal_keyfile, CipherSuite, KeyPair};
use crate::device::BootFixtures;
use crate::kernel::{Identity, Kernel, KernelConfig};
use crate::repository::{Repository, SecureAccess};

pub const ROOT_NAME: &str = "utcb-root";
pub const BROKER_GROUP: &str = "brokers";
pub const BANK_GROUP: &str = "banks";
pub const COMMERCE: &str = "commerce";
pub const BANKING: &str = "banking";

/// Groups the fixture root may hand out.
pub const ROOT_GROUPS: [&str; 4] = ["friends", "work", BROKER_GROUP, BANK_GROUP];

#[derive(Debug, Clone)]
pub struct Pki {
    suite: CipherSuite,
    seed: u64,
    root_keys: KeyPair,
    root: PeerCertificate,
}

impl Pki {
    pub fn new(suite: CipherSuite, seed: u64) -> Self {
        let root_keys = derive_keys(suite, seed, ROOT_NAME);
        let root = CertRequest::new(ROOT_NAME, root_keys.public(), Role::Ca)
            .authorized_groups(ROOT_GROUPS)
            .self_sign(&root_keys);
        Self {
            suite,
            seed,
            root_keys,
            root,
        }
    }

    pub fn suite(&self) -> CipherSuite {
        self.suite
    }

    pub fn root(&self) -> &PeerCertificate {
        &self.root
    }

    pub fn roots_bytes(&self) -> Vec<u8> {
        encode_roots(std::slice::from_ref(&self.root))
    }

    pub fn keys_for(&self, name: &str) -> KeyPair {
        derive_keys(self.suite, self.seed, name)
    }

    pub fn issue(
        &self,
        name: &str,
        role: Role,
        groups: &[&str],
        doc_types: &[&str],
    ) -> (PeerCertificate, KeyPair) {
        let keys = self.keys_for(name);
        let cert = CertRequest::new(name, keys.public(), role)
            .groups(groups.iter().copied())
            .doc_types(doc_types.iter().copied())
            .sign(ROOT_NAME, &self.root_keys);
        (cert, keys)
    }

    pub fn contact(&self, name: &str, groups: &[&str]) -> (PeerCertificate, KeyPair) {
        self.issue(name, Role::Contact, groups, &[])
    }

    pub fn broker(&self, name: &str) -> (PeerCertificate, KeyPair) {
        self.issue(name, Role::Signatory, &[BROKER_GROUP], &[COMMERCE])
    }

    pub fn bank(&self, name: &str) -> (PeerCertificate, KeyPair) {
        self.issue(name, Role::Signatory, &[BANK_GROUP], &[BANKING])
    }

    /// 32-byte device storage key for `device`.
    pub fn device_key(&self, device: &str) -> [u8; 32] {
        hash(
            "utcb-fixture-device-key",
            &[&self.seed.to_be_bytes(), device.as_bytes()],
        )
    }
}

fn derive_keys(suite: CipherSuite, seed: u64, name: &str) -> KeyPair {
    KeyPair::from_seed(
        suite,
        hash("utcb-fixture-key", &[&seed.to_be_bytes(), name.as_bytes()]),
    )
}

/// A file placed in a user's repository at the factory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactoryFile {
    pub path: String,
    pub content: Vec<u8>,
    pub acl: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct UserSpec {
    pub name: String,
    pub groups: Vec<String>,
    pub credential: String,
    pub files: Vec<FactoryFile>,
    pub admin_password: Option<String>,
}

impl UserSpec {
    pub fn new(name: impl Into<String>, credential: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            groups: Vec::new(),
            credential: credential.into(),
            files: Vec::new(),
            admin_password: None,
        }
    }

    pub fn file(mut self, path: &str, content: &[u8], acl: &[&str]) -> Self {
        self.files.push(FactoryFile {
            path: path.to_string(),
            content: content.to_vec(),
            acl: acl.iter().map(|s| s.to_string()).collect(),
        });
        self
    }
}

/// Builds the sealed repository blob and the rest of what a device needs at
/// power-on. Runs before the device exists, so it writes the repository
/// directly.
pub fn provision<R: RngCore + CryptoRng>(pki: &Pki, user: &UserSpec, rng: &mut R) -> BootFixtures {
    let groups: Vec<&str> = user.groups.iter().map(String::as_str).collect();
    let (cert, keys) = pki.contact(&user.name, &groups);
    let device_key = pki.device_key(&user.name);
    let mut repo = Repository::new(user.name.clone());
    let factory = SecureAccess::new(0);
    for f in &user.files {
        repo.write(&factory, &f.path, &f.content, f.acl.clone())
            .expect("factory paths are valid");
    }
    let keyfile = seal_keyfile(pki.suite(), &user.credential, &keys.to_secret_bytes(), rng)
        .expect("credential is not empty");
    repo.install_keyfile(keyfile);
    let blob = repo.seal_blob(pki.suite(), &device_key, rng);
    BootFixtures {
        roots: pki.roots_bytes(),
        identity: Identity::new(cert, keys),
        device_key,
        repository_blob: Some(blob),
        admin_password: user.admin_password.clone(),
        reserved_doc_types: vec![(BANKING.to_string(), BANK_GROUP.to_string())],
    }
}

/// A kernel for `alice` outside any device. Used by the model checker and
/// the benchmarks.
pub fn standalone_kernel(config: KernelConfig, seed: u64) -> (Pki, Kernel) {
    let pki = Pki::new(config.suite, seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let user = UserSpec::new("alice", "0000").file("notes/plan.txt", b"the plan", &["bob"]);
    let f = provision(&pki, &user, &mut rng);
    let mut registry =
        PeerRegistry::with_roots(vec![pki.root().clone()]).expect("fixture root is a CA");
    for (t, g) in &f.reserved_doc_types {
        registry.reserve_doc_type(t.clone(), g.clone());
    }
    let repo = Repository::open_blob(
        &f.device_key,
        f.repository_blob.as_ref().expect("provisioned"),
    )
    .expect("fresh blob opens");
    let kernel = Kernel::new(config, f.identity, registry, repo, seed);
    (pki, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_certificates() {
        let a = Pki::new(CipherSuite::Test, 7);
        let b = Pki::new(CipherSuite::Test, 7);
        assert_eq!(a.contact("bob", &[]).0, b.contact("bob", &[]).0);
        assert_ne!(
            a.contact("bob", &[]).0,
            Pki::new(CipherSuite::Test, 8).contact("bob", &[]).0
        );
    }

    #[test]
    fn issued_certificates_validate() {
        let pki = Pki::new(CipherSuite::Test, 1);
        let reg = PeerRegistry::with_roots(vec![pki.root().clone()]).unwrap();
        for cert in [
            pki.contact("bob", &["friends"]).0,
            pki.broker("b1").0,
            pki.bank("BankOfA").0,
        ] {
            assert!(reg.validate_chain(&cert).is_accepted(), "{}", cert.name);
        }
    }

    #[test]
    fn provisioned_blob_opens() {
        let pki = Pki::new(CipherSuite::Test, 1);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let f = provision(
            &pki,
            &UserSpec::new("alice", "1234").file("notes/a.txt", b"hello", &["bob"]),
            &mut rng,
        );
        let repo =
            Repository::open_blob(&f.device_key, f.repository_blob.as_ref().unwrap()).unwrap();
        assert_eq!(repo.files().count(), 1);
        assert!(repo.keyfile().is_some());
    }
}
