//! A user-centric trusted computing base for phones, as a deterministic
//! simulation: a secure-world kernel entered only through a secure attention
//! key, the narrow API normal-world apps use to reach it, the apps and peers
//! around it, and the accounting and audits that check it.

pub mod apps;
pub mod authority;
pub mod bridge;
pub mod crypto;
pub mod device;
pub mod fixtures;
pub mod gateway;
pub mod invariants;
pub mod kernel;
pub mod repository;
pub mod scenario;
pub mod sim;
pub mod taint;
pub mod time;
pub mod trace;
pub mod wire;

pub use authority::{PeerCertificate, PeerRegistry, Role};
pub use crypto::{open, seal, CipherSuite, Envelope, KeyPair, PublicKey, SignedDocument};
pub use device::{CostCategory, CostTable, CycleLedger, Device, DeviceConfig, Sensor};
pub use gateway::{ApiCall, ApiKind, ApiResult, ApiStatus};
pub use kernel::{Kernel, KernelConfig, Mode, UiAction};
pub use scenario::{Outcome, ScenarioError, ScenarioScript};
pub use sim::{Sim, SimEvent, UserStep};
pub use taint::{Label, LabeledBytes};
pub use time::SimTime;
pub use trace::{TraceEvent, TraceLog, TraceRecord};
