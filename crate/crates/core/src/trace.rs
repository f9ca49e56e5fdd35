//! Structured trace log.
//!
//! One JSON object per line, keys in fixed order:
//!
//! ```text
//! {"seq":17,"t":65000,"device":"alice-phone","component":"kernel","event":"mode_change","from":"normal","to":"secure","cause":"sak_press"}
//! ```
//!
//! `seq` is a global total order across devices, `t` is virtual time in
//! milliseconds, and the remaining keys are the fields of the event named by
//! `event`. The schema of every event is the [`TraceEvent`] enum. All
//! trace-level invariant checks consume this log.

use serde::{Deserialize, Serialize};

use crate::apps::PaymentPhase;
use crate::authority::Role;
use crate::device::{CostCategory, Peripheral, RouteTarget, Sensor};
use crate::gateway::ApiKind;
use crate::kernel::{GateDecision, Mode, ModeCause};
use crate::taint::Channel;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum World {
    #[serde(rename = "sworld")]
    Secure,
    #[serde(rename = "nworld")]
    Normal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Boot {
        roots: usize,
        repository: String,
    },
    Cycles {
        category: CostCategory,
        cycles: u64,
        total: u64,
    },
    WorldSwitch {
        to: World,
        cause: String,
    },
    InterruptRaised {
        irq: u64,
        source: Peripheral,
    },
    InterruptDelivered {
        irq: u64,
        source: Peripheral,
        target: RouteTarget,
    },
    InterruptDropped {
        irq: u64,
        source: Peripheral,
    },
    SakPress {
        entry: u64,
        suppressed: bool,
        repress: bool,
    },
    ModeChange {
        from: Mode,
        to: Mode,
        cause: ModeCause,
    },
    Led {
        on: bool,
    },
    LedBlink,
    NegativeFeedback {
        action: String,
    },
    UserNotice {
        text: String,
    },
    UserAction {
        action: String,
        request_id: Option<u64>,
    },
    MenuShown {
        pending: Vec<u64>,
    },
    ApiCall {
        request_id: u64,
        app: String,
        kind: ApiKind,
        peer: Option<String>,
    },
    PermissionCheck {
        request_id: u64,
        peer: Option<String>,
        role: Option<Role>,
        doc_type: Option<String>,
        ok: bool,
        reason: Option<String>,
    },
    RequestQueued {
        request_id: u64,
    },
    ApiResult {
        request_id: u64,
        app: String,
        status: String,
    },
    Display {
        request_id: u64,
        peer: String,
        groups: Vec<String>,
        content: String,
    },
    KeyUnlocked,
    CredentialRejected {
        attempts: u32,
    },
    SessionLockout,
    Countersigned {
        request_id: u64,
        doc_type: String,
    },
    SensorPolicy {
        sensor: Sensor,
        policy: String,
    },
    SensorGate {
        sensor: Sensor,
        reading: u64,
        decision: GateDecision,
    },
    Observation {
        observer: String,
        channel: Channel,
        len: usize,
        secret: bool,
    },
    Repository {
        op: String,
        path: Option<String>,
        ok: bool,
    },
    AdminAuthorize {
        name: String,
        ok: bool,
    },
    Persisted {
        bytes: usize,
    },
    NetworkSend {
        from: String,
        to: String,
        kind: String,
        len: usize,
    },
    NetworkDeliver {
        from: String,
        to: String,
        kind: String,
    },
    NetworkDrop {
        from: String,
        to: String,
        kind: String,
    },
    App {
        app: String,
        action: String,
        detail: String,
    },
    PaymentPhase {
        session: u64,
        phase: PaymentPhase,
    },
    Service {
        service: String,
        action: String,
        detail: String,
    },
    Adversary {
        strategy: String,
        detail: String,
    },
}

impl TraceEvent {
    /// The `event` tag as it appears in the log.
    pub fn name(&self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.get("event").and_then(|e| e.as_str()).map(str::to_string))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub t: SimTime,
    pub device: String,
    pub component: String,
    #[serde(flatten)]
    pub event: TraceEvent,
}

/// Events emitted by a component, not yet placed in the global order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceBuffer {
    pending: Vec<(SimTime, &'static str, TraceEvent)>,
}

impl TraceBuffer {
    pub fn emit(&mut self, t: SimTime, component: &'static str, event: TraceEvent) {
        self.pending.push((t, component, event));
    }

    pub fn drain(&mut self) -> impl Iterator<Item = (SimTime, &'static str, TraceEvent)> + '_ {
        self.pending.drain(..)
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.pending.iter().map(|(_, _, e)| e)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceLog {
    records: Vec<TraceRecord>,
}

impl TraceLog {
    pub fn push(&mut self, t: SimTime, device: &str, component: &str, event: TraceEvent) {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord {
            seq,
            t,
            device: device.to_string(),
            component: component.to_string(),
            event,
        });
    }

    pub fn absorb(&mut self, device: &str, buffer: &mut TraceBuffer) {
        for (t, component, event) in buffer.drain() {
            self.push(t, device, component, event);
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<TraceRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn count(&self, pred: impl Fn(&TraceRecord) -> bool) -> usize {
        self.records.iter().filter(|r| pred(r)).count()
    }
}
