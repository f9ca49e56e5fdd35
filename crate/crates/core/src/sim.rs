//! Deterministic discrete-event loop over devices, apps, service peers and
//! the network.
//!
//! Events are ordered by `(time, seq)`, where `seq` is the order in which
//! they were scheduled. Nothing reads the wall clock and every random draw
//! comes from a seeded stream, so a run is a pure function of its inputs.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::apps::{
    App, AppCommand, AppCtx, Broker, Directory, Effects, NetMessage, NetworkConfig, SimNetwork,
};
use crate::device::{CycleLedger, Device, Sensor};
use crate::gateway::ApiKind;
use crate::kernel::{Mode, RequestPayload, UiAction};
use crate::taint::{audit_taint, Channel, LeakEvent, Observation, SecretRegistry};
use crate::time::SimTime;
use crate::trace::{TraceBuffer, TraceEvent, TraceLog};

/// What the scripted user does. Steps that act on a request pick the one
/// open on screen, or else the oldest pending request of the right kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum UserStep {
    Sak,
    Exit,
    Open {
        #[serde(default)]
        kind: Option<ApiKind>,
    },
    Compose {
        text: String,
    },
    SendFile {
        path: String,
    },
    SendSensor {
        sensor: Sensor,
    },
    Unlock {
        credential: String,
    },
    Approve {
        #[serde(default)]
        fields: BTreeMap<String, String>,
    },
    ApproveSensor {
        minutes: u64,
    },
    DiscardSensor {
        minutes: u64,
    },
    Decline,
    SetSensor {
        sensor: Sensor,
        open: bool,
    },
    RepoWrite {
        path: String,
        content: String,
        #[serde(default)]
        acl: Vec<String>,
    },
    RepoRead {
        path: String,
    },
    RepoDelete {
        path: String,
    },
    AdminAuthorize {
        password: String,
        /// Name of a certificate known to the simulation.
        peer: String,
    },
    Tap {
        x: u32,
        y: u32,
    },
    Text {
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEvent {
    User {
        device: String,
        step: UserStep,
    },
    App {
        device: String,
        app: String,
        command: AppCommand,
    },
    Sensor {
        device: String,
        sensor: Sensor,
        app: String,
    },
    NetDeliver(NetMessage),
    DeviceTimer {
        device: String,
    },
    AppTimer {
        device: String,
        app: String,
        token: u64,
    },
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    event: SimEvent,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Debug)]
pub struct Node {
    pub device: Device,
    pub apps: BTreeMap<String, App>,
}

#[derive(Debug)]
pub struct Sim {
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    nodes: BTreeMap<String, Node>,
    services: BTreeMap<String, Broker>,
    service_names: Vec<String>,
    network: SimNetwork,
    directory: Directory,
    /// Certificates the user can hand to peer administration.
    admin_certs: BTreeMap<String, Vec<u8>>,
    timers: BTreeSet<(String, SimTime)>,
    extra_secrets: SecretRegistry,
    log: TraceLog,
}

const NETWORK: &str = "network";

impl Sim {
    pub fn new(network: NetworkConfig, directory: Directory) -> Self {
        Self {
            now: SimTime::ZERO,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            services: BTreeMap::new(),
            service_names: Vec::new(),
            network: SimNetwork::new(network),
            directory,
            admin_certs: BTreeMap::new(),
            timers: BTreeSet::new(),
            extra_secrets: SecretRegistry::default(),
            log: TraceLog::default(),
        }
    }

    pub fn add_device(&mut self, mut device: Device, apps: Vec<(String, App)>) {
        let name = device.name().to_string();
        self.log.absorb(&name, device.trace_mut());
        self.nodes.insert(
            name,
            Node {
                device,
                apps: apps.into_iter().collect(),
            },
        );
    }

    pub fn add_service(&mut self, broker: Broker) {
        let name = broker.name().to_string();
        self.service_names.push(name.clone());
        self.services.insert(name, broker);
    }

    pub fn add_admin_cert(&mut self, name: impl Into<String>, cert: Vec<u8>) {
        self.admin_certs.insert(name.into(), cert);
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn node(&self, device: &str) -> Option<&Node> {
        self.nodes.get(device)
    }

    pub fn node_mut(&mut self, device: &str) -> Option<&mut Node> {
        self.nodes.get_mut(device)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&String, &Node)> {
        self.nodes.iter()
    }

    pub fn service(&self, name: &str) -> Option<&Broker> {
        self.services.get(name)
    }

    pub fn services(&self) -> impl Iterator<Item = &Broker> {
        self.services.values()
    }

    pub fn network(&self) -> &SimNetwork {
        &self.network
    }

    pub fn log(&self) -> &TraceLog {
        &self.log
    }

    pub fn into_log(self) -> TraceLog {
        self.log
    }

    pub fn ledgers(&self) -> impl Iterator<Item = (&str, &CycleLedger)> {
        self.nodes
            .iter()
            .map(|(n, node)| (n.as_str(), node.device.ledger()))
    }

    pub fn schedule(&mut self, time: SimTime, event: SimEvent) {
        let time = time.max(self.now);
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            time,
            seq: self.seq,
            event,
        }));
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(s)| s.time)
    }

    /// Processes every event scheduled at or before `end`, then advances
    /// the clock to `end`.
    pub fn run_until(&mut self, end: SimTime) {
        while let Some(t) = self.next_event_time() {
            if t > end {
                break;
            }
            self.step();
        }
        self.now = self.now.max(end);
    }

    /// Processes the single earliest event. Returns false when idle.
    pub fn step(&mut self) -> bool {
        let Some(Reverse(s)) = self.queue.pop() else {
            return false;
        };
        self.now = s.time;
        self.dispatch(s.event);
        true
    }

    fn dispatch(&mut self, event: SimEvent) {
        let now = self.now;
        let mut effects = Effects::default();
        let touched = match event {
            SimEvent::User { device, step } => {
                self.user_step(&device, step);
                Some(device)
            }
            SimEvent::App {
                device,
                app,
                command,
            } => {
                self.with_app(&device, &app, &mut effects, |a, ctx| {
                    a.on_command(ctx, &command)
                });
                Some(device)
            }
            SimEvent::Sensor {
                device,
                sensor,
                app,
            } => {
                if let Some(node) = self.nodes.get_mut(&device) {
                    node.device.sensor_signal(now, sensor, &app);
                }
                Some(device)
            }
            SimEvent::DeviceTimer { device } => {
                self.timers.remove(&(device.clone(), now));
                if let Some(node) = self.nodes.get_mut(&device) {
                    node.device.tick(now);
                }
                Some(device)
            }
            SimEvent::AppTimer { device, app, token } => {
                self.with_app(&device, &app, &mut effects, |a, ctx| a.on_timer(ctx, token));
                Some(device)
            }
            SimEvent::NetDeliver(msg) => self.deliver(msg, &mut effects),
        };
        if let Some(device) = touched {
            self.settle(&device, &mut effects);
        }
        self.apply(effects);
    }

    fn with_app(
        &mut self,
        device: &str,
        app: &str,
        effects: &mut Effects,
        f: impl FnOnce(&mut App, &mut AppCtx<'_>),
    ) {
        let now = self.now;
        let Some(node) = self.nodes.get_mut(device) else {
            return;
        };
        let Some(a) = node.apps.get_mut(app) else {
            node.device.trace_mut().emit(
                now,
                "app",
                TraceEvent::App {
                    app: app.to_string(),
                    action: "no_such_app".into(),
                    detail: device.to_string(),
                },
            );
            return;
        };
        let mut ctx = AppCtx {
            now,
            app,
            device: &mut node.device,
            directory: &self.directory,
            services: &self.service_names,
            effects,
        };
        f(a, &mut ctx);
    }

    fn deliver(&mut self, msg: NetMessage, effects: &mut Effects) -> Option<String> {
        let now = self.now;
        self.log.push(
            now,
            NETWORK,
            NETWORK,
            TraceEvent::NetworkDeliver {
                from: msg.from.to_string(),
                to: msg.to.to_string(),
                kind: msg.kind.clone(),
            },
        );
        match &msg.to.app {
            None => {
                let Some(service) = self.services.get_mut(&msg.to.node) else {
                    self.net_drop(&msg);
                    return None;
                };
                let mut buf = TraceBuffer::default();
                let replies = service.on_message(now, &msg, &self.directory, &mut buf);
                self.log.absorb(&msg.to.node, &mut buf);
                effects.sends.extend(replies);
                None
            }
            Some(app) => {
                let exists = self
                    .nodes
                    .get(&msg.to.node)
                    .is_some_and(|n| n.apps.contains_key(app));
                if !exists {
                    self.net_drop(&msg);
                    return None;
                }
                let node = self.nodes.get_mut(&msg.to.node).expect("checked");
                node.device
                    .observe(now, app, Channel::Network, msg.payload.clone());
                let device = msg.to.node.clone();
                self.with_app(&device, app, effects, |a, ctx| a.on_network(ctx, &msg));
                Some(device)
            }
        }
    }

    fn net_drop(&mut self, msg: &NetMessage) {
        self.log.push(
            self.now,
            NETWORK,
            NETWORK,
            TraceEvent::NetworkDrop {
                from: msg.from.to_string(),
                to: msg.to.to_string(),
                kind: msg.kind.clone(),
            },
        );
    }

    /// Hands finished requests to their apps, flushes the device trace and
    /// arms the device timer.
    fn settle(&mut self, device: &str, effects: &mut Effects) {
        let now = self.now;
        let results = match self.nodes.get_mut(device) {
            Some(node) => node.device.take_completions(now),
            None => return,
        };
        for r in results {
            self.with_app(device, &r.app.clone(), effects, |a, ctx| {
                a.on_result(ctx, &r)
            });
        }
        let node = self.nodes.get_mut(device).expect("present");
        self.log.absorb(device, node.device.trace_mut());
        if let Some(at) = node.device.next_deadline() {
            let key = (device.to_string(), at);
            if !self.timers.contains(&key) {
                self.timers.insert(key);
                self.schedule(
                    at,
                    SimEvent::DeviceTimer {
                        device: device.to_string(),
                    },
                );
            }
        }
    }

    fn apply(&mut self, effects: Effects) {
        let now = self.now;
        for s in &effects.secrets {
            self.extra_secrets.register(s);
        }
        for msg in effects.sends {
            self.log.push(
                now,
                NETWORK,
                NETWORK,
                TraceEvent::NetworkSend {
                    from: msg.from.to_string(),
                    to: msg.to.to_string(),
                    kind: msg.kind.clone(),
                    len: msg.payload.len(),
                },
            );
            match self.network.send(now, msg.clone()) {
                Some(at) => self.schedule(at, SimEvent::NetDeliver(msg)),
                None => self.net_drop(&msg),
            }
        }
        for (at, app, token) in effects.timers {
            // Timers belong to the device the app runs on; apps are unique
            // by name per device, so find the owner.
            let owner = self
                .nodes
                .iter()
                .find(|(_, n)| n.apps.contains_key(&app))
                .map(|(d, _)| d.clone());
            if let Some(device) = owner {
                self.schedule(at, SimEvent::AppTimer { device, app, token });
            }
        }
    }

    fn user_step(&mut self, device: &str, step: UserStep) {
        let now = self.now;
        let Some(node) = self.nodes.get_mut(device) else {
            return;
        };
        let d = &mut node.device;
        let action =
            match step {
                UserStep::Sak => {
                    d.press_sak(now);
                    return;
                }
                UserStep::Exit if d.kernel().mode() == Mode::Normal => {
                    user_note(d, now, "exit: not in secure-mode");
                    return;
                }
                UserStep::Exit => Some(UiAction::Exit),
                UserStep::Open { kind } => {
                    pick(d, kind, false).map(|request_id| UiAction::OpenRequest { request_id })
                }
                UserStep::Compose { text } => pick(d, Some(ApiKind::RequestData), true)
                    .map(|request_id| UiAction::ComposeText { request_id, text }),
                UserStep::SendFile { path } => pick(d, Some(ApiKind::RequestData), true)
                    .map(|request_id| UiAction::SendFile { request_id, path }),
                UserStep::SendSensor { sensor } => pick(d, Some(ApiKind::RequestData), true)
                    .map(|request_id| UiAction::SendSensorReading { request_id, sensor }),
                UserStep::Unlock { credential } => Some(UiAction::UnlockKey { credential }),
                UserStep::Approve { fields } => {
                    pick(d, Some(ApiKind::RequestSignature), true).map(|request_id| {
                        UiAction::ApproveSignature {
                            request_id,
                            fields: fields.into_iter().collect(),
                        }
                    })
                }
                UserStep::ApproveSensor { minutes } => pick(d, Some(ApiKind::EnableSensor), true)
                    .map(|request_id| UiAction::ApproveSensor {
                        request_id,
                        minutes,
                    }),
                UserStep::DiscardSensor { minutes } => pick(d, Some(ApiKind::EnableSensor), true)
                    .map(|request_id| UiAction::DiscardSensorRequests {
                        request_id,
                        minutes,
                    }),
                UserStep::Decline => {
                    pick(d, None, true).map(|request_id| UiAction::Decline { request_id })
                }
                UserStep::SetSensor { sensor, open } => Some(UiAction::SetSensor { sensor, open }),
                UserStep::RepoWrite { path, content, acl } => Some(UiAction::RepoWrite {
                    path,
                    content: content.into_bytes(),
                    acl,
                }),
                UserStep::RepoRead { path } => Some(UiAction::RepoRead { path }),
                UserStep::RepoDelete { path } => Some(UiAction::RepoDelete { path }),
                UserStep::AdminAuthorize { password, peer } => {
                    let cert = self
                        .admin_certs
                        .get(&peer)
                        .cloned()
                        .or_else(|| self.directory.fetch(&peer).map(<[u8]>::to_vec))
                        .unwrap_or_default();
                    Some(UiAction::AdminAuthorize { password, cert })
                }
                UserStep::Tap { x, y } => Some(UiAction::Tap { x, y }),
                UserStep::Text { value } => Some(UiAction::Text { value }),
            };
        match action {
            Some(action) => {
                d.touch(now, action);
            }
            None => user_note(d, now, "nothing to act on"),
        }
    }

    /// Union of every secret created anywhere during the run.
    pub fn secrets(&self) -> SecretRegistry {
        let mut all = self.extra_secrets.clone();
        for node in self.nodes.values() {
            all.merge(node.device.kernel().secrets());
        }
        all
    }

    /// Every delivery into the normal world plus everything the network
    /// carried.
    pub fn observations(&self) -> Vec<Observation> {
        let mut out: Vec<Observation> = self
            .nodes
            .values()
            .flat_map(|n| n.device.observations().iter().cloned())
            .collect();
        out.extend(self.network.log().iter().map(|(t, m)| Observation {
            time: *t,
            device: NETWORK.to_string(),
            observer: NETWORK.to_string(),
            channel: Channel::Network,
            data: m.payload.clone(),
        }));
        out
    }

    pub fn audit(&self) -> Vec<LeakEvent> {
        audit_taint(&self.observations(), &self.secrets())
    }

    /// Flushes any trace events emitted outside the event loop, for example
    /// by direct device calls from a driver.
    pub fn flush(&mut self) {
        for (name, node) in self.nodes.iter_mut() {
            self.log.absorb(name, node.device.trace_mut());
        }
    }
}

fn user_note(d: &mut Device, now: SimTime, text: &str) {
    d.trace_mut().emit(
        now,
        "user",
        TraceEvent::UserNotice {
            text: text.to_string(),
        },
    );
}

/// The request a user step applies to.
fn pick(d: &Device, kind: Option<ApiKind>, prefer_open: bool) -> Option<u64> {
    let k = d.kernel();
    let matches = |p: &RequestPayload| kind.is_none_or(|want| p.kind() == want);
    if prefer_open {
        if let Some(id) = k.session().and_then(|s| s.open_request) {
            if k.pending().get(id).is_some_and(|r| matches(&r.payload)) {
                return Some(id);
            }
        }
    }
    k.pending()
        .iter()
        .find(|r| matches(&r.payload))
        .map(|r| r.request_id)
}
