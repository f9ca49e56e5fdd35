//! Wire schema and simulator driver for the interactive phone UI.
//!
//! One JSON object per websocket frame. The server sends `state_snapshot`
//! and `trace_event` messages; the client sends `user_input`. Field-level
//! documentation lives in `docs/ui-wire.md`.

use serde::{Deserialize, Serialize};

use crate::kernel::{MenuModel, Mode, SCREEN_HEIGHT, SCREEN_WIDTH};
use crate::scenario::{build, ScenarioError, ScenarioScript};
use crate::sim::{Sim, SimEvent, UserStep};
use crate::time::SimTime;
use crate::trace::TraceRecord;

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    StateSnapshot(Snapshot),
    TraceEvent { record: TraceRecord },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    UserInput {
        /// Defaults to the device the bridge was started on.
        #[serde(default)]
        device: Option<String>,
        input: UserInput,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UserInput {
    Sak,
    Touch { x: u32, y: u32 },
    Text { value: String },
    Exit,
}

impl UserInput {
    fn step(self) -> UserStep {
        match self {
            UserInput::Sak => UserStep::Sak,
            UserInput::Touch { x, y } => UserStep::Tap { x, y },
            UserInput::Text { value } => UserStep::Text { value },
            UserInput::Exit => UserStep::Exit,
        }
    }
}

/// Everything the UI draws for one device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub t: SimTime,
    pub device: String,
    pub mode: Mode,
    pub led: bool,
    pub screen_width: u32,
    pub screen_height: u32,
    /// Present only in secure mode.
    pub menu: Option<MenuModel>,
    pub open_request: Option<u64>,
    pub key_unlocked: bool,
    /// Secure actions are being refused until the SAK is pressed again.
    pub awaiting_repress: bool,
    pub foreground: Option<String>,
    /// Whatever the normal world last drew, lossily decoded.
    pub normal_screen: String,
    pub pending: usize,
    pub cycles: u64,
}

/// Owns the simulator. Inputs are applied at the current virtual time in
/// the order they arrive.
#[derive(Debug)]
pub struct Bridge {
    sim: Sim,
    focus: String,
    sent: usize,
    last: Vec<Snapshot>,
}

impl Bridge {
    pub fn new(sim: Sim, focus: impl Into<String>) -> Self {
        Self {
            sim,
            focus: focus.into(),
            sent: 0,
            last: Vec::new(),
        }
    }

    /// Builds the script's world and focuses its first device. The script's
    /// own steps stay scheduled.
    pub fn from_script(script: &ScenarioScript) -> Result<Self, ScenarioError> {
        let focus = script
            .devices
            .first()
            .map(|d| d.name.clone())
            .ok_or_else(|| ScenarioError::Schema("the UI needs at least one device".into()))?;
        Ok(Self::new(build(script)?, focus))
    }

    pub fn now(&self) -> SimTime {
        self.sim.now()
    }

    pub fn sim(&self) -> &Sim {
        &self.sim
    }

    pub fn focus(&self) -> &str {
        &self.focus
    }

    pub fn input(&mut self, device: Option<&str>, input: UserInput) -> Result<(), String> {
        let device = device.unwrap_or(&self.focus).to_string();
        if self.sim.node(&device).is_none() {
            return Err(format!("no device `{device}`"));
        }
        let now = self.sim.now();
        self.sim.schedule(
            now,
            SimEvent::User {
                device,
                step: input.step(),
            },
        );
        self.sim.run_until(now);
        Ok(())
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<(), String> {
        match msg {
            ClientMessage::UserInput { device, input } => self.input(device.as_deref(), input),
        }
    }

    pub fn advance_to(&mut self, t: SimTime) {
        self.sim.run_until(t);
    }

    pub fn snapshot(&self, device: &str) -> Option<Snapshot> {
        let node = self.sim.node(device)?;
        let d = &node.device;
        let k = d.kernel();
        let secure = k.mode() == Mode::Secure;
        let session = k.session();
        Some(Snapshot {
            version: WIRE_VERSION,
            t: self.sim.now(),
            device: device.to_string(),
            mode: k.mode(),
            led: k.led(),
            screen_width: SCREEN_WIDTH,
            screen_height: SCREEN_HEIGHT,
            menu: secure.then(|| k.menu()),
            open_request: session.and_then(|s| s.open_request),
            key_unlocked: session.is_some_and(|s| s.key_unlocked()),
            awaiting_repress: session.is_some_and(|s| s.awaiting_repress()),
            foreground: d.foreground().map(str::to_string),
            normal_screen: String::from_utf8_lossy(d.frame()).into_owned(),
            pending: k.pending().len(),
            cycles: d.ledger().total(),
        })
    }

    /// Trace records not yet sent, then a snapshot for every device whose
    /// visible state changed.
    pub fn drain(&mut self) -> Vec<ServerMessage> {
        let records = self.sim.log().records();
        let mut out: Vec<ServerMessage> = records[self.sent..]
            .iter()
            .map(|r| ServerMessage::TraceEvent { record: r.clone() })
            .collect();
        self.sent = records.len();
        let names: Vec<String> = self.sim.nodes().map(|(n, _)| n.clone()).collect();
        for name in names {
            let Some(snap) = self.snapshot(&name) else {
                continue;
            };
            let changed = match self.last.iter_mut().find(|s| s.device == name) {
                Some(prev) if same_view(prev, &snap) => false,
                Some(prev) => {
                    *prev = snap.clone();
                    true
                }
                None => {
                    self.last.push(snap.clone());
                    true
                }
            };
            if changed {
                out.push(ServerMessage::StateSnapshot(snap));
            }
        }
        out
    }

    /// Snapshots of every device regardless of change, for a new client.
    pub fn full_state(&self) -> Vec<ServerMessage> {
        self.sim
            .nodes()
            .filter_map(|(n, _)| self.snapshot(n))
            .map(ServerMessage::StateSnapshot)
            .collect()
    }
}

fn same_view(a: &Snapshot, b: &Snapshot) -> bool {
    // Time alone does not warrant a redraw.
    Snapshot {
        t: b.t,
        ..a.clone()
    } == *b
}

#[cfg(test)]
mod tests;
