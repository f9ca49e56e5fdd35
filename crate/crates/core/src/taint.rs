//! Buffer-granularity confidentiality labels and the leak auditor.
//!
//! Secret buffers keep their label through every copy and concatenation.
//! The only way back to `Public` is [`LabeledBytes::declassify_sealed`],
//! which takes a sealed envelope or key file as proof.

use serde::{Deserialize, Serialize};

use crate::crypto::{Envelope, SealedKeyFile};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "label", content = "owner", rename_all = "snake_case")]
pub enum Label {
    Public,
    Secret(String),
}

impl Label {
    pub fn is_secret(&self) -> bool {
        matches!(self, Label::Secret(_))
    }

    /// Least upper bound: anything joined with a secret is secret.
    pub fn join(&self, other: &Label) -> Label {
        match (self, other) {
            (Label::Secret(o), _) | (_, Label::Secret(o)) => Label::Secret(o.clone()),
            _ => Label::Public,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledBytes {
    bytes: Vec<u8>,
    label: Label,
}

impl LabeledBytes {
    pub fn public(bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            bytes: bytes.into(),
            label: Label::Public,
        }
    }

    pub fn secret(owner: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            bytes: bytes.into(),
            label: Label::Secret(owner.into()),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn concat(&self, other: &LabeledBytes) -> LabeledBytes {
        let mut bytes = self.bytes.clone();
        bytes.extend_from_slice(&other.bytes);
        LabeledBytes {
            bytes,
            label: self.label.join(&other.label),
        }
    }

    /// Derivation through an arbitrary function keeps the label.
    pub fn map(&self, f: impl FnOnce(&[u8]) -> Vec<u8>) -> LabeledBytes {
        LabeledBytes {
            bytes: f(&self.bytes),
            label: self.label.clone(),
        }
    }

    pub fn declassify_sealed(sealed: Sealed<'_>) -> LabeledBytes {
        let bytes = match sealed {
            Sealed::Envelope(env) => env.to_bytes(),
            Sealed::KeyFile(kf) => kf.to_bytes(),
        };
        LabeledBytes::public(bytes)
    }
}

/// The two declassification points.
#[derive(Debug, Clone, Copy)]
pub enum Sealed<'a> {
    Envelope(&'a Envelope),
    KeyFile(&'a SealedKeyFile),
}

/// How bytes reached a normal-world observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    ApiResult,
    Touch,
    Sensor,
    Network,
    Storage,
    Screen,
}

/// One delivery of bytes into the normal world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub time: SimTime,
    pub device: String,
    pub observer: String,
    pub channel: Channel,
    pub data: LabeledBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakKind {
    /// A secret-labeled buffer was delivered.
    Label,
    /// A public-labeled buffer contained a registered secret.
    Content,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakEvent {
    pub time: SimTime,
    pub device: String,
    pub observer: String,
    pub channel: Channel,
    pub kind: LeakKind,
    pub owner: String,
    /// Short digest of the registered secret found in the observed bytes,
    /// or of the bytes themselves. Sightings of the same secret by several
    /// observers share it.
    pub fingerprint: String,
}

/// Number of distinct leaked secrets: the same secret seen by the app, the
/// network and the receiving app is one leak.
pub fn distinct_leaks(leaks: &[LeakEvent]) -> usize {
    leaks
        .iter()
        .map(|l| l.fingerprint.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len()
}

/// Secrets shorter than this are not content-scanned; short strings match
/// unrelated bytes by chance.
pub const MIN_SCANNED_SECRET: usize = 4;

/// Every secret byte string created during a run, for the content scan.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SecretRegistry {
    secrets: Vec<(String, Vec<u8>)>,
}

impl SecretRegistry {
    pub fn register(&mut self, data: &LabeledBytes) {
        if let Label::Secret(owner) = &data.label {
            if data.len() >= MIN_SCANNED_SECRET
                && !self.secrets.iter().any(|(_, s)| s == &data.bytes)
            {
                self.secrets.push((owner.clone(), data.bytes.clone()));
            }
        }
    }

    pub fn merge(&mut self, other: &SecretRegistry) {
        for (owner, bytes) in &other.secrets {
            if !self.secrets.iter().any(|(_, s)| s == bytes) {
                self.secrets.push((owner.clone(), bytes.clone()));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }

    fn find_in(&self, haystack: &[u8]) -> Option<(&str, &[u8])> {
        self.secrets
            .iter()
            .find(|(_, s)| haystack.windows(s.len()).any(|w| w == s.as_slice()))
            .map(|(o, s)| (o.as_str(), s.as_slice()))
    }
}

/// Reports one leak per observation that carries a secret label or contains
/// a registered secret.
pub fn audit_taint<'a>(
    observations: impl IntoIterator<Item = &'a Observation>,
    secrets: &SecretRegistry,
) -> Vec<LeakEvent> {
    observations
        .into_iter()
        .filter_map(|obs| {
            let found = secrets.find_in(obs.data.bytes());
            let (kind, owner) = match obs.data.label() {
                Label::Secret(owner) => (LeakKind::Label, owner.clone()),
                Label::Public => (LeakKind::Content, found?.0.to_string()),
            };
            let leaked = found.map_or(obs.data.bytes(), |(_, s)| s);
            Some(LeakEvent {
                time: obs.time,
                device: obs.device.clone(),
                observer: obs.observer.clone(),
                channel: obs.channel,
                kind,
                owner,
                fingerprint: hex::encode(&crate::crypto::hash("utcb-leak", &[leaked])[..8]),
            })
        })
        .collect()
}
