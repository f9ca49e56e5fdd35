//! Scenario scripts: a TOML description of devices, services and a timed
//! event program, run headless through [`Sim`] and checked against embedded
//! assertions plus the global invariant suite.
//!
//! ```toml
//! version = 1
//! name = "hello"
//! seed = 7
//!
//! [[devices]]
//! name = "alice"
//! credential = "1234"
//! apps = [{ id = "msg", kind = "messaging" }]
//!
//! [[steps]]
//! at = 1000
//! device = "alice"
//! user = { action = "sak" }
//!
//! [[assert]]
//! check = "ledger"
//! category = "sak_handling"
//! count = 1
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::{
    AdversaryApp, App, AppCommand, Broker, BrokerConfig, Directory, MessagingApp, NetworkConfig,
    PaymentApp, PaymentPhase, SensorApp, Strategy, DEFAULT_RECEIPT_DEADLINE,
};
use crate::authority::{CertRequest, Role};
use crate::crypto::{hash, CipherSuite};
use crate::device::{CostCategory, CostTable, CycleLedger, Device, DeviceConfig, Sensor};
use crate::fixtures::{provision, Pki, UserSpec, BANKING, COMMERCE, ROOT_NAME};
use crate::invariants::{check_ledger, check_trace, Violation};
use crate::kernel::KernelConfig;
use crate::sim::{Sim, SimEvent, UserStep};
use crate::taint::{distinct_leaks, LeakEvent};
use crate::time::{SimTime, MINUTE};
use crate::trace::{TraceEvent, TraceRecord};

pub const SCRIPT_VERSION: u32 = 1;

/// Time the run continues after the last scripted step when the script does
/// not say.
pub const DEFAULT_TAIL: u64 = 30 * MINUTE;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    /// Virtual milliseconds to run; defaults to the last step plus 30 minutes.
    #[serde(default)]
    pub duration_ms: Option<u64>,
    #[serde(default = "default_suite")]
    pub suite: CipherSuite,
    /// Distinct leaked secrets the audit must report. Anything but 0 is a
    /// deliberately broken configuration.
    #[serde(default)]
    pub expect_leaks: usize,
    #[serde(default)]
    pub kernel: KernelOverrides,
    #[serde(default)]
    pub costs: Option<CostTable>,
    #[serde(default)]
    pub network: NetworkConfig,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub extra_certs: Vec<ExtraCert>,
    #[serde(default)]
    pub steps: Vec<Step>,
    #[serde(default, rename = "assert")]
    pub assertions: Vec<Assertion>,
}

fn default_suite() -> CipherSuite {
    CipherSuite::Test
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct KernelOverrides {
    pub idle_timeout_ms: Option<u64>,
    pub suppression_prob: Option<f64>,
    pub training_entries: Option<u64>,
    pub queue_capacity: Option<usize>,
    pub reblock_grace_ms: Option<u64>,
    pub request_lifetime_ms: Option<u64>,
    pub max_sensor_enable_ms: Option<u64>,
    pub credential_attempts: Option<u32>,
    pub leak_demo: Option<bool>,
}

impl KernelOverrides {
    pub fn apply(&self, suite: CipherSuite) -> KernelConfig {
        let d = KernelConfig::default();
        KernelConfig {
            suite,
            idle_timeout: self.idle_timeout_ms.unwrap_or(d.idle_timeout),
            suppression_prob: self.suppression_prob.unwrap_or(d.suppression_prob),
            training_entries: self.training_entries.unwrap_or(d.training_entries),
            queue_capacity: self.queue_capacity.unwrap_or(d.queue_capacity),
            reblock_grace: self.reblock_grace_ms.unwrap_or(d.reblock_grace),
            request_lifetime: self.request_lifetime_ms.unwrap_or(d.request_lifetime),
            max_sensor_enable: self.max_sensor_enable_ms.unwrap_or(d.max_sensor_enable),
            credential_attempts: self.credential_attempts.unwrap_or(d.credential_attempts),
            leak_demo: self.leak_demo.unwrap_or(d.leak_demo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    /// Device and owner identity share this name.
    pub name: String,
    pub credential: String,
    #[serde(default = "yes")]
    pub compliant: bool,
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default)]
    pub admin_password: Option<String>,
    #[serde(default)]
    pub apps: Vec<AppSpec>,
    #[serde(default)]
    pub files: Vec<FileSpec>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AppKind {
    Messaging,
    Payment,
    Sensor,
    Adversary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub id: String,
    pub kind: AppKind,
    /// Payment apps: where revocation notices go.
    #[serde(default)]
    pub bank: Option<String>,
    #[serde(default)]
    pub receipt_deadline_ms: Option<u64>,
}

impl AppSpec {
    fn build(&self) -> App {
        match self.kind {
            AppKind::Messaging => App::Messaging(MessagingApp::default()),
            AppKind::Payment => App::Payment(PaymentApp::new(
                self.receipt_deadline_ms.unwrap_or(DEFAULT_RECEIPT_DEADLINE),
                self.bank.clone(),
            )),
            AppKind::Sensor => App::Sensor(SensorApp::default()),
            AppKind::Adversary => App::Adversary(AdversaryApp::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub path: String,
    pub content: String,
    #[serde(default)]
    pub acl: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Broker,
    Bank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub name: String,
    pub kind: ServiceKind,
    #[serde(default)]
    pub withhold_receipt: bool,
    /// Users whose signing keys the service knows.
    #[serde(default)]
    pub register: Vec<String>,
}

/// A certificate the user can hand to peer administration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExtraCert {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default)]
    pub doc_types: Vec<String>,
    #[serde(default)]
    pub authorized_groups: Vec<String>,
    /// Signed by its own key instead of the fixture root.
    #[serde(default)]
    pub self_signed: bool,
}

/// One timed event. Exactly one of `user`, `run` or `sensor` is set; `run`
/// and `sensor` also name the app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub at: u64,
    pub device: String,
    #[serde(default)]
    pub user: Option<UserStep>,
    #[serde(default)]
    pub app: Option<String>,
    #[serde(default)]
    pub run: Option<AppCommand>,
    #[serde(default)]
    pub sensor: Option<Sensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    /// Counts trace records by event name, optional device and field values.
    Event {
        event: String,
        #[serde(default)]
        device: Option<String>,
        #[serde(default, rename = "where")]
        filter: BTreeMap<String, serde_json::Value>,
        #[serde(default)]
        count: Option<usize>,
        #[serde(default)]
        min: Option<usize>,
        #[serde(default)]
        max: Option<usize>,
    },
    /// Ledger of one device, or the sum over all devices.
    Ledger {
        #[serde(default)]
        device: Option<String>,
        #[serde(default)]
        category: Option<CostCategory>,
        #[serde(default)]
        count: Option<u64>,
        #[serde(default)]
        cycles: Option<u64>,
    },
    /// Phase of a payment session; the latest session if none is named.
    PaymentPhase {
        device: String,
        app: String,
        #[serde(default)]
        session: Option<u64>,
        phase: PaymentPhase,
    },
    /// Orders a service verified.
    VerifiedOrders { service: String, count: usize },
}

impl ScenarioScript {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let script: Self =
            toml::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Cross-field checks serde cannot express.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: String| Err(ScenarioError::Schema(m));
        if self.version != SCRIPT_VERSION {
            return err(format!(
                "unsupported version {}, expected {SCRIPT_VERSION}",
                self.version
            ));
        }
        if self.devices.is_empty() {
            return err("no devices".into());
        }
        let mut names = BTreeSet::new();
        for d in &self.devices {
            if !names.insert(d.name.as_str()) {
                return err(format!("duplicate device or service `{}`", d.name));
            }
            let mut ids = BTreeSet::new();
            for a in &d.apps {
                if !ids.insert(a.id.as_str()) {
                    return err(format!("device `{}`: duplicate app `{}`", d.name, a.id));
                }
            }
        }
        for s in &self.services {
            if !names.insert(s.name.as_str()) {
                return err(format!("duplicate device or service `{}`", s.name));
            }
            for u in &s.register {
                if !self.devices.iter().any(|d| d.name == *u) {
                    return err(format!("service `{}` registers unknown user `{u}`", s.name));
                }
            }
        }
        for (i, s) in self.steps.iter().enumerate() {
            let Some(device) = self.devices.iter().find(|d| d.name == s.device) else {
                return err(format!("step {i}: unknown device `{}`", s.device));
            };
            let set = [s.user.is_some(), s.run.is_some(), s.sensor.is_some()];
            if set.iter().filter(|x| **x).count() != 1 {
                return err(format!(
                    "step {i}: needs exactly one of `user`, `run`, `sensor`"
                ));
            }
            match (&s.app, s.user.is_some()) {
                (Some(_), true) => {
                    return err(format!("step {i}: `app` does not apply to user steps"))
                }
                (None, false) => {
                    return err(format!("step {i}: `run` and `sensor` steps need `app`"))
                }
                (Some(app), false) if !device.apps.iter().any(|a| a.id == *app) => {
                    return err(format!(
                        "step {i}: device `{}` has no app `{app}`",
                        s.device
                    ))
                }
                _ => {}
            }
        }
        for (i, a) in self.assertions.iter().enumerate() {
            if let Assertion::Event {
                count, min, max, ..
            } = a
            {
                if count.is_none() && min.is_none() && max.is_none() {
                    return err(format!(
                        "assert {i}: event check needs `count`, `min` or `max`"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> u64 {
        self.duration_ms
            .unwrap_or_else(|| self.steps.iter().map(|s| s.at).max().unwrap_or(0) + DEFAULT_TAIL)
    }

    /// The same script with an adversary app on every device, attacking
    /// with `strategy` at the start, right after every scripted step, and
    /// at the end. Embedded assertions are dropped because the attacks
    /// change the event counts they were written for.
    pub fn with_adversary(&self, strategy: Strategy) -> Self {
        let mut s = self.clone();
        s.name = format!("{}+{}", self.name, strategy.as_str());
        s.assertions.clear();
        let id = "adversary";
        for d in &mut s.devices {
            d.apps.push(AppSpec {
                id: id.into(),
                kind: AppKind::Adversary,
                bank: None,
                receipt_deadline_ms: None,
            });
        }
        let mut times: BTreeSet<u64> = self.steps.iter().map(|st| st.at + 1).collect();
        times.insert(0);
        times.insert(self.duration().saturating_sub(1));
        for t in times {
            for d in &self.devices {
                s.steps.push(Step {
                    at: t,
                    device: d.name.clone(),
                    user: None,
                    app: Some(id.into()),
                    run: Some(AppCommand::Attack { strategy }),
                    sensor: None,
                });
            }
        }
        s.steps.sort_by_key(|st| st.at);
        s
    }
}

fn derive_seed(seed: u64, name: &str) -> u64 {
    let h = hash("utcb-device-seed", &[&seed.to_be_bytes(), name.as_bytes()]);
    u64::from_be_bytes(h[..8].try_into().expect("8 bytes"))
}

/// Builds the simulation described by `script` with every step scheduled.
pub fn build(script: &ScenarioScript) -> Result<Sim, ScenarioError> {
    script.validate()?;
    let pki = Pki::new(script.suite, script.seed);
    let kernel = script.kernel.apply(script.suite);

    let mut directory = Directory::default();
    for d in &script.devices {
        let groups: Vec<&str> = d.groups.iter().map(String::as_str).collect();
        directory.publish(d.name.clone(), pki.contact(&d.name, &groups).0.to_bytes());
    }
    let mut brokers = Vec::new();
    for s in &script.services {
        let (cert, keys) = match s.kind {
            ServiceKind::Broker => pki.broker(&s.name),
            ServiceKind::Bank => pki.bank(&s.name),
        };
        directory.publish(s.name.clone(), cert.to_bytes());
        let doc_type = match s.kind {
            ServiceKind::Broker => COMMERCE,
            ServiceKind::Bank => BANKING,
        };
        let mut broker = Broker::new(
            BrokerConfig {
                name: s.name.clone(),
                doc_type: doc_type.to_string(),
                withhold_receipt: s.withhold_receipt,
                suite: script.suite,
            },
            keys,
            cert,
        );
        for u in &s.register {
            broker.register_user(u.clone(), pki.keys_for(u).public());
        }
        brokers.push(broker);
    }

    let mut sim = Sim::new(script.network.clone(), directory);
    for d in &script.devices {
        let seed = derive_seed(script.seed, &d.name);
        let mut user = UserSpec::new(d.name.clone(), d.credential.clone());
        user.groups = d.groups.clone();
        user.admin_password = d.admin_password.clone();
        for f in &d.files {
            let acl: Vec<&str> = f.acl.iter().map(String::as_str).collect();
            user = user.file(&f.path, f.content.as_bytes(), &acl);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let fixtures = provision(&pki, &user, &mut rng);
        let mut cfg = DeviceConfig::new(d.name.clone());
        cfg.kernel = kernel.clone();
        cfg.compliant_user = d.compliant;
        if let Some(costs) = script.costs {
            cfg.costs = costs;
        }
        let device = Device::boot(cfg, fixtures, seed)
            .map_err(|e| ScenarioError::Schema(format!("device `{}`: {e}", d.name)))?;
        sim.add_device(
            device,
            d.apps.iter().map(|a| (a.id.clone(), a.build())).collect(),
        );
    }
    for b in brokers {
        sim.add_service(b);
    }
    for c in &script.extra_certs {
        let keys = pki.keys_for(&c.name);
        let req = CertRequest::new(&c.name, keys.public(), c.role)
            .groups(c.groups.iter().map(String::as_str))
            .doc_types(c.doc_types.iter().map(String::as_str))
            .authorized_groups(c.authorized_groups.iter().map(String::as_str));
        let cert = if c.self_signed {
            req.self_sign(&keys)
        } else {
            req.sign(ROOT_NAME, &pki.keys_for(ROOT_NAME))
        };
        sim.add_admin_cert(c.name.clone(), cert.to_bytes());
    }

    for s in &script.steps {
        let device = s.device.clone();
        let event = match (&s.user, &s.run, s.sensor) {
            (Some(step), _, _) => SimEvent::User {
                device,
                step: step.clone(),
            },
            (_, Some(command), _) => SimEvent::App {
                device,
                app: s.app.clone().expect("validated"),
                command: command.clone(),
            },
            (_, _, Some(sensor)) => SimEvent::Sensor {
                device,
                sensor,
                app: s.app.clone().expect("validated"),
            },
            _ => unreachable!("validated"),
        };
        sim.schedule(SimTime(s.at), event);
    }
    Ok(sim)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssertionFailure {
    /// Index into the script's `assert` list, or `None` for a global check.
    pub index: Option<usize>,
    pub predicate: String,
    /// Trace offset the failure refers to.
    pub seq: u64,
    pub detail: String,
}

impl std::fmt::Display for AssertionFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.index {
            Some(i) => write!(
                f,
                "assert {i} ({}) failed at trace offset {}: {}",
                self.predicate, self.seq, self.detail
            ),
            None => write!(
                f,
                "{} failed at trace offset {}: {}",
                self.predicate, self.seq, self.detail
            ),
        }
    }
}

/// A finished run.
#[derive(Debug)]
pub struct Outcome {
    pub script: ScenarioScript,
    pub sim: Sim,
    pub leaks: Vec<LeakEvent>,
    pub violations: Vec<Violation>,
    pub failures: Vec<AssertionFailure>,
}

#[derive(Debug, Serialize)]
struct AuditReport<'a> {
    scenario: &'a str,
    seed: u64,
    observations: usize,
    secrets: usize,
    leak_events: usize,
    distinct_leaks: usize,
    expected_leaks: usize,
    leaks: &'a [LeakEvent],
    violations: &'a [Violation],
    failures: &'a [AssertionFailure],
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn first_failure(&self) -> Option<&AssertionFailure> {
        self.failures.first()
    }

    pub fn records(&self) -> &[TraceRecord] {
        self.sim.log().records()
    }

    pub fn trace_ndjson(&self) -> String {
        self.sim.log().to_ndjson()
    }

    /// Per-device ledger lines followed by the sum over all devices.
    pub fn ledger_text(&self) -> String {
        let mut out = format!(
            "scenario: {}\nseed: {}\n",
            self.script.name, self.script.seed
        );
        for (name, ledger) in self.sim.ledgers() {
            out.push_str(&ledger.summary(name));
        }
        for c in CostCategory::ALL {
            out.push_str(&format!(
                "all.{}: count={} cycles={}\n",
                c.as_str(),
                self.ledger_count(None, Some(c)),
                self.ledger_cycles(None, Some(c))
            ));
        }
        out.push_str(&format!(
            "all.total: cycles={}\n",
            self.ledger_cycles(None, None)
        ));
        out
    }

    pub fn audit_json(&self) -> String {
        let report = AuditReport {
            scenario: &self.script.name,
            seed: self.script.seed,
            observations: self.sim.observations().len(),
            secrets: self.sim.secrets().len(),
            leak_events: self.leaks.len(),
            distinct_leaks: distinct_leaks(&self.leaks),
            expected_leaks: self.script.expect_leaks,
            leaks: &self.leaks,
            violations: &self.violations,
            failures: &self.failures,
        };
        let mut s = serde_json::to_string_pretty(&report).expect("audit serializes");
        s.push('\n');
        s
    }

    /// Writes `trace.ndjson`, `ledger.txt` and `audit.json` into `dir`.
    pub fn write_reports(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trace.ndjson"), self.trace_ndjson())?;
        fs::write(dir.join("ledger.txt"), self.ledger_text())?;
        fs::write(dir.join("audit.json"), self.audit_json())?;
        Ok(())
    }

    fn ledgers(&self, device: Option<&str>) -> Vec<&CycleLedger> {
        self.sim
            .ledgers()
            .filter(|(n, _)| device.is_none_or(|d| d == *n))
            .map(|(_, l)| l)
            .collect()
    }

    pub fn ledger_count(&self, device: Option<&str>, category: Option<CostCategory>) -> u64 {
        let cats: Vec<CostCategory> = category.map_or(CostCategory::ALL.to_vec(), |c| vec![c]);
        self.ledgers(device)
            .iter()
            .map(|l| cats.iter().map(|c| l.count(*c)).sum::<u64>())
            .sum()
    }

    pub fn ledger_cycles(&self, device: Option<&str>, category: Option<CostCategory>) -> u64 {
        self.ledgers(device)
            .iter()
            .map(|l| category.map_or(l.total(), |c| l.cycles(c)))
            .sum()
    }

    pub fn payment_phase(
        &self,
        device: &str,
        app: &str,
        session: Option<u64>,
    ) -> Option<PaymentPhase> {
        let App::Payment(p) = self.sim.node(device)?.apps.get(app)? else {
            return None;
        };
        let s = match session {
            Some(id) => p.sessions().iter().find(|s| s.id == id),
            None => p.sessions().last(),
        };
        s.map(|s| s.phase)
    }

    /// Trace records that warn of a script that did not do what it meant:
    /// user steps with nothing to act on and commands sent to the wrong app.
    pub fn warnings(&self) -> Vec<&TraceRecord> {
        self.records()
            .iter()
            .filter(|r| match &r.event {
                TraceEvent::UserNotice { .. } => r.component == "user",
                TraceEvent::App { action, .. } => {
                    action == "unsupported_command" || action == "no_such_app"
                }
                _ => false,
            })
            .collect()
    }
}

/// A two-phone messaging script, used when the UI bridge is started without
/// one.
pub const DEMO_SCRIPT: &str = include_str!("../scenarios/messaging_basic.toml");

/// JSON Schema for script files, as shipped in `scenarios/schema.json`.
pub fn json_schema() -> String {
    let schema = schemars::schema_for!(ScenarioScript);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}

/// Runs `script` to completion and evaluates every check.
pub fn run(script: &ScenarioScript) -> Result<Outcome, ScenarioError> {
    let mut sim = build(script)?;
    sim.run_until(SimTime(script.duration()));
    sim.flush();
    let leaks = sim.audit();
    let mut violations = check_trace(sim.log().records());
    violations.extend(sim.ledgers().filter_map(|(n, l)| check_ledger(n, l)));
    let mut outcome = Outcome {
        script: script.clone(),
        sim,
        leaks,
        violations,
        failures: Vec::new(),
    };
    outcome.failures = evaluate(&outcome);
    Ok(outcome)
}

pub fn run_file(path: impl AsRef<Path>, seed: Option<u64>) -> Result<Outcome, ScenarioError> {
    let mut script = ScenarioScript::load(path)?;
    if let Some(seed) = seed {
        script.seed = seed;
    }
    run(&script)
}

fn matches(
    record: &TraceRecord,
    event: &str,
    device: Option<&str>,
    filter: &BTreeMap<String, serde_json::Value>,
) -> bool {
    if device.is_some_and(|d| d != record.device) || record.event.name() != event {
        return false;
    }
    if filter.is_empty() {
        return true;
    }
    let v = serde_json::to_value(record).expect("records serialize");
    filter.iter().all(|(k, want)| v.get(k) == Some(want))
}

fn evaluate(o: &Outcome) -> Vec<AssertionFailure> {
    let records = o.records();
    let end = records.last().map_or(0, |r| r.seq);
    let mut out = Vec::new();
    for (i, a) in o.script.assertions.iter().enumerate() {
        let fail = |predicate: String, seq: u64, detail: String| AssertionFailure {
            index: Some(i),
            predicate,
            seq,
            detail,
        };
        match a {
            Assertion::Event {
                event,
                device,
                filter,
                count,
                min,
                max,
            } => {
                let hits: Vec<&TraceRecord> = records
                    .iter()
                    .filter(|r| matches(r, event, device.as_deref(), filter))
                    .collect();
                let n = hits.len();
                let ok = count.is_none_or(|c| n == c)
                    && min.is_none_or(|m| n >= m)
                    && max.is_none_or(|m| n <= m);
                if !ok {
                    // Point at the first surplus record, or the end of the trace
                    // when records are missing.
                    let limit = count.or(*max).unwrap_or(usize::MAX);
                    let seq = hits.get(limit).map_or(end, |r| r.seq);
                    out.push(fail(
                        format!("event `{event}`"),
                        seq,
                        format!(
                            "{n} matching records; wanted count={count:?} min={min:?} max={max:?}"
                        ),
                    ));
                }
            }
            Assertion::Ledger {
                device,
                category,
                count,
                cycles,
            } => {
                let what = category.map_or("total", |c| c.as_str());
                let got_count = o.ledger_count(device.as_deref(), *category);
                let got_cycles = o.ledger_cycles(device.as_deref(), *category);
                if count.is_some_and(|c| c != got_count) || cycles.is_some_and(|c| c != got_cycles)
                {
                    out.push(fail(
                        format!("ledger `{what}`"),
                        end,
                        format!("count={got_count} cycles={got_cycles}; wanted count={count:?} cycles={cycles:?}"),
                    ));
                }
            }
            Assertion::PaymentPhase {
                device,
                app,
                session,
                phase,
            } => {
                let got = o.payment_phase(device, app, *session);
                if got != Some(*phase) {
                    out.push(fail(
                        format!("payment_phase `{device}/{app}`"),
                        end,
                        format!("phase {got:?}; wanted {phase:?}"),
                    ));
                }
            }
            Assertion::VerifiedOrders { service, count } => {
                let got = o.sim.service(service).map(|b| b.verified_orders().len());
                if got != Some(*count) {
                    out.push(fail(
                        format!("verified_orders `{service}`"),
                        end,
                        format!("{got:?}; wanted {count}"),
                    ));
                }
            }
        }
    }
    for v in &o.violations {
        out.push(AssertionFailure {
            index: None,
            predicate: v.invariant.to_string(),
            seq: v.seq,
            detail: format!("{}: {}", v.device, v.detail),
        });
    }
    let distinct = distinct_leaks(&o.leaks);
    if distinct != o.script.expect_leaks {
        let seq = o.leaks.first().map_or(end, |l| {
            records
                .iter()
                .find(|r| {
                    r.t >= l.time
                        && r.device == l.device
                        && matches!(r.event, TraceEvent::Observation { .. })
                })
                .map_or(end, |r| r.seq)
        });
        out.push(AssertionFailure {
            index: None,
            predicate: "taint_audit".into(),
            seq,
            detail: format!(
                "{distinct} distinct leaked secrets; expected {}",
                o.script.expect_leaks
            ),
        });
    }
    out
}

#[cfg(test)]
mod tests;
