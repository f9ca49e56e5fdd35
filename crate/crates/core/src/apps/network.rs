use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::taint::LabeledBytes;
use crate::time::SimTime;

/// A network address: a device and an app on it, or an in-process service.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Address {
    pub node: String,
    pub app: Option<String>,
}

impl Address {
    pub fn app(node: impl Into<String>, app: impl Into<String>) -> Self {
        Self {
            node: node.into(),
            app: Some(app.into()),
        }
    }

    pub fn service(name: impl Into<String>) -> Self {
        Self {
            node: name.into(),
            app: None,
        }
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.app {
            Some(app) => write!(f, "{}/{app}", self.node),
            None => f.write_str(&self.node),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetMessage {
    pub from: Address,
    pub to: Address,
    pub kind: String,
    pub payload: LabeledBytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Delivery delay in milliseconds.
    #[serde(default = "default_delay")]
    pub delay_ms: u64,
    /// Message kinds silently dropped in transit.
    #[serde(default)]
    pub drop_kinds: BTreeSet<String>,
}

fn default_delay() -> u64 {
    50
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            delay_ms: default_delay(),
            drop_kinds: BTreeSet::new(),
        }
    }
}

/// Everything the network carried, for the audit. The network sees only
/// what the endpoints hand it.
#[derive(Debug, Clone, Default)]
pub struct SimNetwork {
    config: NetworkConfig,
    log: Vec<(SimTime, NetMessage)>,
}

impl SimNetwork {
    pub fn new(config: NetworkConfig) -> Self {
        Self {
            config,
            log: Vec::new(),
        }
    }

    /// Accepts a message and returns its delivery time, or `None` if the
    /// network drops it.
    pub fn send(&mut self, now: SimTime, msg: NetMessage) -> Option<SimTime> {
        let dropped = self.config.drop_kinds.contains(&msg.kind);
        self.log.push((now, msg));
        (!dropped).then_some(now + self.config.delay_ms.max(1))
    }

    pub fn log(&self) -> &[(SimTime, NetMessage)] {
        &self.log
    }
}

/// Public certificate directory. Lookups are unauthenticated; certificates
/// are validated inside the secure world.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Directory {
    certs: BTreeMap<String, Vec<u8>>,
}

impl Directory {
    pub fn publish(&mut self, name: impl Into<String>, cert: Vec<u8>) {
        self.certs.insert(name.into(), cert);
    }

    pub fn fetch(&self, name: &str) -> Option<&[u8]> {
        self.certs.get(name).map(Vec::as_slice)
    }
}
