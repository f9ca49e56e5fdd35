//! Global invariants checked over a finished run's trace, plus a bounded
//! model checker for the one-way property of the secure attention key.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::device::{CostCategory, CycleLedger, Peripheral, RouteTarget, Sensor};
use crate::fixtures::{standalone_kernel, Pki};
use crate::gateway::ApiCall;
use crate::kernel::{GateDecision, Kernel, KernelConfig, Mode, ModeCause, UiAction};
use crate::taint::Channel;
use crate::time::{SimTime, SECOND};
use crate::trace::{TraceEvent, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub invariant: &'static str,
    /// Trace offset of the offending record.
    pub seq: u64,
    pub device: String,
    pub detail: String,
}

pub const TRACE_INVARIANTS: [&str; 8] = [
    "led_soundness",
    "one_way_sak",
    "touch_isolation",
    "rbac_completeness",
    "ceremony",
    "sensor_gate",
    "interrupt_conservation",
    "ledger_trace",
];

#[derive(Default)]
struct DeviceState {
    mode: Option<Mode>,
    led: bool,
    suppressed: bool,
    repressed: bool,
    last_sak: bool,
    permission: BTreeMap<u64, bool>,
    open_irqs: BTreeMap<u64, Peripheral>,
    closed_irqs: BTreeSet<u64>,
    dropped_readings: BTreeSet<u64>,
    sensor_delivered: u64,
    sensor_observed: u64,
    cycles_sum: u64,
    cycles_total: u64,
}

impl DeviceState {
    fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Normal)
    }
}

/// Runs every trace invariant and returns all violations in trace order.
pub fn check_trace(records: &[TraceRecord]) -> Vec<Violation> {
    let mut states: BTreeMap<&str, DeviceState> = BTreeMap::new();
    let mut out = Vec::new();
    for r in records {
        let s = states.entry(r.device.as_str()).or_default();
        let mut fail = |invariant: &'static str, detail: String| {
            out.push(Violation {
                invariant,
                seq: r.seq,
                device: r.device.clone(),
                detail,
            })
        };
        let was_sak = std::mem::take(&mut s.last_sak);
        match &r.event {
            TraceEvent::SakPress {
                suppressed,
                repress,
                ..
            } => {
                s.last_sak = true;
                if s.mode() == Mode::Normal {
                    s.suppressed = *suppressed;
                    s.repressed = false;
                } else if *repress {
                    s.repressed = true;
                }
            }
            TraceEvent::ModeChange { from, to, cause } => {
                if *from != s.mode() {
                    fail(
                        "one_way_sak",
                        format!("mode change from {from:?} while in {:?}", s.mode()),
                    );
                }
                match (to, cause) {
                    (Mode::Secure, ModeCause::SakPress) if was_sak => {}
                    (Mode::Normal, ModeCause::ExitButton | ModeCause::IdleTimeout) => {}
                    _ => fail(
                        "one_way_sak",
                        format!("{from:?} -> {to:?} caused by {cause:?}"),
                    ),
                }
                if *to == Mode::Normal && s.led {
                    fail("led_soundness", "left secure-mode with the LED on".into());
                }
                s.mode = Some(*to);
            }
            TraceEvent::Led { on } => {
                if *on && s.mode() != Mode::Secure {
                    fail("led_soundness", "LED lit outside secure-mode".into());
                }
                s.led = *on;
            }
            TraceEvent::MenuShown { .. } => {
                let training = s.suppressed && !s.repressed;
                if s.mode() == Mode::Secure && !training && !s.led {
                    fail(
                        "led_soundness",
                        "secure-mode without LED outside a training episode".into(),
                    );
                }
            }
            TraceEvent::NegativeFeedback { action } => {
                if !(s.mode() == Mode::Secure && s.suppressed && !s.repressed) {
                    fail(
                        "ceremony",
                        format!("negative feedback for `{action}` outside a training episode"),
                    );
                }
            }
            TraceEvent::UserAction { action, request_id } => {
                if s.mode() == Mode::Secure && s.suppressed && !s.repressed && action != "exit" {
                    fail(
                        "ceremony",
                        format!("`{action}` executed before the re-press"),
                    );
                }
                if let Some(id) = request_id {
                    if s.permission.get(id) != Some(&true) {
                        fail(
                            "rbac_completeness",
                            format!("user acted on request {id} without a passed permission check"),
                        );
                    }
                }
            }
            TraceEvent::ApiCall { request_id, .. } => {
                s.permission.remove(request_id);
            }
            TraceEvent::PermissionCheck { request_id, ok, .. } => {
                if s.permission.insert(*request_id, *ok).is_some() {
                    fail(
                        "rbac_completeness",
                        format!("request {request_id} checked twice"),
                    );
                }
            }
            TraceEvent::RequestQueued { request_id } => {
                if s.permission.get(request_id) != Some(&true) {
                    fail(
                        "rbac_completeness",
                        format!("request {request_id} queued without a passed check"),
                    );
                }
            }
            TraceEvent::InterruptRaised { irq, source } => {
                if s.open_irqs.insert(*irq, *source).is_some() || s.closed_irqs.contains(irq) {
                    fail("interrupt_conservation", format!("irq {irq} raised twice"));
                }
            }
            TraceEvent::InterruptDelivered {
                irq,
                source,
                target,
            } => {
                if s.open_irqs.remove(irq).is_none() {
                    fail(
                        "interrupt_conservation",
                        format!("irq {irq} delivered without being open"),
                    );
                }
                s.closed_irqs.insert(*irq);
                if *source == Peripheral::Touch
                    && *target == RouteTarget::NWorld
                    && s.mode() == Mode::Secure
                {
                    fail(
                        "touch_isolation",
                        format!("touch irq {irq} reached the normal world in secure-mode"),
                    );
                }
                if let Peripheral::Sensor(_) = source {
                    if s.dropped_readings.contains(irq) {
                        fail(
                            "sensor_gate",
                            format!("dropped reading {irq} was delivered"),
                        );
                    }
                    s.sensor_delivered += 1;
                }
            }
            TraceEvent::InterruptDropped { irq, .. } => {
                if s.open_irqs.remove(irq).is_none() {
                    fail(
                        "interrupt_conservation",
                        format!("irq {irq} dropped without being open"),
                    );
                }
                s.closed_irqs.insert(*irq);
            }
            TraceEvent::SensorGate {
                reading,
                decision: GateDecision::Drop,
                ..
            } => {
                s.dropped_readings.insert(*reading);
            }
            TraceEvent::Observation {
                channel, observer, ..
            } => match channel {
                Channel::Touch if s.mode() == Mode::Secure => {
                    fail(
                        "touch_isolation",
                        format!("`{observer}` saw a touch in secure-mode"),
                    );
                }
                Channel::Sensor => {
                    s.sensor_observed += 1;
                    if s.sensor_observed > s.sensor_delivered {
                        fail(
                            "sensor_gate",
                            format!("`{observer}` saw a reading that was never delivered"),
                        );
                    }
                }
                _ => {}
            },
            TraceEvent::Cycles { cycles, total, .. } => {
                s.cycles_sum += cycles;
                s.cycles_total = *total;
                if s.cycles_sum != s.cycles_total {
                    fail(
                        "ledger_trace",
                        format!("running total {total} != sum of charges {}", s.cycles_sum),
                    );
                }
            }
            _ => {}
        }
    }
    let end = records.last().map_or(0, |r| r.seq);
    for (device, s) in &states {
        for (irq, source) in &s.open_irqs {
            out.push(Violation {
                invariant: "interrupt_conservation",
                seq: end,
                device: device.to_string(),
                detail: format!("irq {irq} from {source:?} never delivered or dropped"),
            });
        }
    }
    out
}

/// Ledger total equals the analytic formula over event counts.
pub fn check_ledger(device: &str, ledger: &CycleLedger) -> Option<Violation> {
    let formula: u64 = CostCategory::ALL
        .iter()
        .map(|&c| ledger.count(c) * ledger.costs().cost(c))
        .sum();
    (formula != ledger.total()).then(|| Violation {
        invariant: "ledger_linearity",
        seq: 0,
        device: device.to_string(),
        detail: format!("total {} != formula {formula}", ledger.total()),
    })
}

// ---- bounded model checking of the one-way SAK ----

/// The kernel event alphabet: everything that can reach the kernel, from
/// the user, from apps, and from the timer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Input {
    Sak,
    ExitButton,
    MenuAction,
    OpenFirst,
    TypeText,
    DeclineFirst,
    ApiRequestData,
    ApiEnableSensor,
    SensorSignal,
    /// Timer tick one second later.
    Tick,
    /// Timer tick after the idle timeout has elapsed.
    IdleTick,
}

impl Input {
    pub const ALL: [Input; 11] = [
        Input::Sak,
        Input::ExitButton,
        Input::MenuAction,
        Input::OpenFirst,
        Input::TypeText,
        Input::DeclineFirst,
        Input::ApiRequestData,
        Input::ApiEnableSensor,
        Input::SensorSignal,
        Input::Tick,
        Input::IdleTick,
    ];

    /// Inputs allowed to take the kernel out of secure-mode.
    pub fn may_exit(self) -> bool {
        matches!(self, Input::ExitButton | Input::IdleTick)
    }
}

#[derive(Debug, Clone)]
pub struct ModelState {
    kernel: Kernel,
    now: SimTime,
    bob: Vec<u8>,
}

impl ModelState {
    pub fn new(config: KernelConfig, seed: u64) -> Self {
        let (pki, kernel): (Pki, Kernel) = standalone_kernel(config, seed);
        let bob = pki.contact("bob", &["friends"]).0.to_bytes();
        Self {
            kernel,
            now: SimTime(1),
            bob,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Applies one input and reports a violation of the one-way property or
    /// of LED soundness, if any.
    pub fn apply(&mut self, input: Input) -> Option<String> {
        let before = self.kernel.mode();
        let first = self.kernel.pending().iter().next().map(|r| r.request_id);
        let now = self.now;
        match input {
            Input::Sak => self.kernel.on_sak_press(now),
            Input::ExitButton => {
                let _ = self.kernel.on_user_action(now, UiAction::Exit);
            }
            Input::MenuAction => {
                let _ = self.kernel.on_user_action(now, UiAction::RepoList);
            }
            Input::OpenFirst => {
                if let Some(request_id) = first {
                    let _ = self
                        .kernel
                        .on_user_action(now, UiAction::OpenRequest { request_id });
                }
            }
            Input::TypeText => {
                let _ = self.kernel.on_user_action(
                    now,
                    UiAction::Text {
                        value: "hello".into(),
                    },
                );
            }
            Input::DeclineFirst => {
                if let Some(request_id) = first {
                    let _ = self
                        .kernel
                        .on_user_action(now, UiAction::Decline { request_id });
                }
            }
            Input::ApiRequestData => {
                self.kernel.api_call(
                    now,
                    "app",
                    ApiCall::RequestData {
                        recipient: "bob".into(),
                        recipient_cert: Some(self.bob.clone()),
                    },
                );
            }
            Input::ApiEnableSensor => {
                self.kernel.api_call(
                    now,
                    "app",
                    ApiCall::EnableSensor {
                        sensor: Sensor::Gps,
                    },
                );
            }
            Input::SensorSignal => {
                self.kernel.sensor_gate(now, Sensor::Gps);
            }
            Input::Tick => {
                self.now = self.now + SECOND;
                self.kernel.tick(self.now);
            }
            Input::IdleTick => {
                self.now = self.now + self.kernel.config().idle_timeout;
                self.kernel.tick(self.now);
            }
        }
        let after = self.kernel.mode();
        let mut problem = None;
        for ev in self.kernel.trace_mut().drain() {
            if let (
                _,
                _,
                TraceEvent::ModeChange {
                    to: Mode::Normal,
                    cause,
                    ..
                },
            ) = &ev
            {
                if !matches!(cause, ModeCause::ExitButton | ModeCause::IdleTimeout) {
                    problem = Some(format!("left secure-mode via {cause:?}"));
                }
            }
        }
        if before == Mode::Secure && after == Mode::Normal && !input.may_exit() {
            problem = Some(format!("{input:?} took the kernel out of secure-mode"));
        }
        if before == Mode::Normal && after == Mode::Secure && input != Input::Sak {
            problem = Some(format!("{input:?} entered secure-mode"));
        }
        if self.kernel.led() && after != Mode::Secure {
            problem = Some("LED on in normal mode".into());
        }
        problem
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ModelCheckReport {
    pub sequences: u64,
    pub steps: u64,
    pub secure_exits: u64,
    pub violations: Vec<(Vec<Input>, String)>,
}

/// Enumerates every input sequence of length up to `depth` from the initial
/// state, sharing prefixes.
pub fn explore(config: KernelConfig, seed: u64, depth: usize) -> ModelCheckReport {
    let mut report = ModelCheckReport::default();
    let root = ModelState::new(config, seed);
    let mut path = Vec::with_capacity(depth);
    dfs(&root, depth, &mut path, &mut report);
    report
}

fn dfs(state: &ModelState, depth: usize, path: &mut Vec<Input>, report: &mut ModelCheckReport) {
    report.sequences += 1;
    if depth == 0 {
        return;
    }
    for input in Input::ALL {
        let mut next = state.clone();
        let secure = next.kernel.mode() == Mode::Secure;
        report.steps += 1;
        path.push(input);
        if let Some(problem) = next.apply(input) {
            report.violations.push((path.clone(), problem));
        }
        if secure && next.kernel.mode() == Mode::Normal {
            report.secure_exits += 1;
        }
        dfs(&next, depth - 1, path, report);
        path.pop();
    }
}

/// `count` random traces of `len` inputs each.
pub fn random_walks(config: KernelConfig, seed: u64, count: usize, len: usize) -> ModelCheckReport {
    let mut report = ModelCheckReport::default();
    let root = ModelState::new(config, seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..count {
        let mut state = root.clone();
        let mut path = Vec::with_capacity(len);
        report.sequences += 1;
        for _ in 0..len {
            let input = Input::ALL[rng.gen_range(0..Input::ALL.len())];
            path.push(input);
            let secure = state.kernel.mode() == Mode::Secure;
            report.steps += 1;
            if let Some(problem) = state.apply(input) {
                report.violations.push((path.clone(), problem));
                break;
            }
            if secure && state.kernel.mode() == Mode::Normal {
                report.secure_exits += 1;
            }
        }
    }
    report
}
