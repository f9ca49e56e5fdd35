//! The secure-mode state machine.
//!
//! The kernel owns the peer registry, the private repository, the pending
//! request queue and the sensor policy table. It is driven by four kinds of
//! input: SAK presses, user actions on the secure screen, application API
//! calls, and timer ticks. Only `exit_secure` leaves secure-mode, and only
//! the Exit action and the idle timer call it.

mod data;
mod menu;
mod queue;
mod sensors;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authority::{AdminAccess, PeerCertificate, PeerRegistry};
use crate::crypto::{self, CipherSuite, Envelope, KeyPair, SignedDocument};
use crate::device::Sensor;
use crate::gateway::{rbac_check, ApiCall, ApiKind, ApiResult, ApiStatus};
use crate::repository::{RepoError, Repository, SecureAccess};
use crate::taint::{LabeledBytes, Sealed, SecretRegistry};
use crate::time::{SimTime, HOUR, MINUTE, SECOND};
use crate::trace::{TraceBuffer, TraceEvent};

pub use data::DataItem;
pub use menu::{BuiltIn, MenuEntry, MenuHit, MenuModel, ROW_HEIGHT, SCREEN_HEIGHT, SCREEN_WIDTH};
pub use queue::{ApiRequest, PendingQueue, QueueFull, RequestPayload};
pub use sensors::{GateDecision, SensorPolicy, SensorTable};

const KERNEL: &str = "kernel";
const GATEWAY: &str = "gateway";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Normal,
    Secure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeCause {
    SakPress,
    ExitButton,
    IdleTimeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub suite: CipherSuite,
    pub idle_timeout: u64,
    pub suppression_prob: f64,
    /// Number of secure-mode entries, counted from boot, during which the
    /// LED may be suppressed.
    pub training_entries: u64,
    pub queue_capacity: usize,
    /// A sensor whose temporary enable ends within this window counts as
    /// about to be re-blocked.
    pub reblock_grace: u64,
    pub request_lifetime: u64,
    pub max_sensor_enable: u64,
    pub credential_attempts: u32,
    /// Negative control for the taint auditor: data requests answered with
    /// a repository file return the raw file instead of an envelope.
    pub leak_demo: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            suite: CipherSuite::Test,
            idle_timeout: 5 * MINUTE,
            suppression_prob: 0.1,
            training_entries: 50,
            queue_capacity: 32,
            reblock_grace: 60 * SECOND,
            request_lifetime: 24 * HOUR,
            max_sensor_enable: HOUR,
            credential_attempts: 3,
            leak_demo: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("not in secure-mode")]
    NotInSecureMode,
    #[error("key handle belongs to a secure-mode session that has ended")]
    HandleExpired,
    #[error(transparent)]
    Repository(#[from] RepoError),
}

/// The device's own certificate and key. Envelopes produced by this device
/// are signed with it.
#[derive(Debug, Clone)]
pub struct Identity {
    cert: PeerCertificate,
    keys: KeyPair,
}

impl Identity {
    pub fn new(cert: PeerCertificate, keys: KeyPair) -> Self {
        assert_eq!(
            cert.public_key,
            keys.public(),
            "identity certificate does not match key"
        );
        Self { cert, keys }
    }

    pub fn name(&self) -> &str {
        &self.cert.name
    }

    pub fn cert(&self) -> &PeerCertificate {
        &self.cert
    }
}

/// State that exists only while in secure-mode. Dropping it drops the
/// unlocked private key, which zeroizes its secret scalars.
#[derive(Debug, Clone)]
pub struct SecureSession {
    pub id: u64,
    pub entered_at: SimTime,
    /// Secure-mode entry number, counted from boot.
    pub entry: u64,
    pub suppressed: bool,
    pub repressed: bool,
    pub failed_attempts: u32,
    pub locked_out: bool,
    pub open_request: Option<u64>,
    unlocked_key: Option<KeyPair>,
}

impl SecureSession {
    pub fn key_unlocked(&self) -> bool {
        self.unlocked_key.is_some()
    }

    /// True while actions are refused with negative feedback.
    pub fn awaiting_repress(&self) -> bool {
        self.suppressed && !self.repressed
    }
}

/// Refers to the private key unlocked in one secure-mode session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyHandle {
    session_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UiAction {
    OpenRepository,
    OpenSensors,
    OpenArchive,
    OpenPeerAdmin,
    OpenRequest {
        request_id: u64,
    },
    ComposeText {
        request_id: u64,
        text: String,
    },
    SendFile {
        request_id: u64,
        path: String,
    },
    SendSensorReading {
        request_id: u64,
        sensor: Sensor,
    },
    UnlockKey {
        credential: String,
    },
    ApproveSignature {
        request_id: u64,
        fields: Vec<(String, String)>,
    },
    ApproveSensor {
        request_id: u64,
        minutes: u64,
    },
    DiscardSensorRequests {
        request_id: u64,
        minutes: u64,
    },
    Decline {
        request_id: u64,
    },
    SetSensor {
        sensor: Sensor,
        open: bool,
    },
    RepoWrite {
        path: String,
        content: Vec<u8>,
        acl: Vec<String>,
    },
    RepoRead {
        path: String,
    },
    RepoDelete {
        path: String,
    },
    RepoList,
    ListSigned,
    AdminAuthorize {
        password: String,
        cert: Vec<u8>,
    },
    /// A raw tap on the secure screen, resolved against the menu.
    Tap {
        x: u32,
        y: u32,
    },
    /// Free text typed on the secure keyboard, applied to the open request.
    Text {
        value: String,
    },
    Exit,
}

impl UiAction {
    pub fn name(&self) -> &'static str {
        match self {
            UiAction::OpenRepository => "open_repository",
            UiAction::OpenSensors => "open_sensors",
            UiAction::OpenArchive => "open_archive",
            UiAction::OpenPeerAdmin => "open_peer_admin",
            UiAction::OpenRequest { .. } => "open_request",
            UiAction::ComposeText { .. } => "compose_text",
            UiAction::SendFile { .. } => "send_file",
            UiAction::SendSensorReading { .. } => "send_sensor_reading",
            UiAction::UnlockKey { .. } => "unlock_key",
            UiAction::ApproveSignature { .. } => "approve_signature",
            UiAction::ApproveSensor { .. } => "approve_sensor",
            UiAction::DiscardSensorRequests { .. } => "discard_sensor_requests",
            UiAction::Decline { .. } => "decline",
            UiAction::SetSensor { .. } => "set_sensor",
            UiAction::RepoWrite { .. } => "repo_write",
            UiAction::RepoRead { .. } => "repo_read",
            UiAction::RepoDelete { .. } => "repo_delete",
            UiAction::RepoList => "repo_list",
            UiAction::ListSigned => "list_signed",
            UiAction::AdminAuthorize { .. } => "admin_authorize",
            UiAction::Tap { .. } => "tap",
            UiAction::Text { .. } => "text",
            UiAction::Exit => "exit",
        }
    }

    pub fn request_id(&self) -> Option<u64> {
        match self {
            UiAction::OpenRequest { request_id }
            | UiAction::ComposeText { request_id, .. }
            | UiAction::SendFile { request_id, .. }
            | UiAction::SendSensorReading { request_id, .. }
            | UiAction::ApproveSignature { request_id, .. }
            | UiAction::ApproveSensor { request_id, .. }
            | UiAction::DiscardSensorRequests { request_id, .. }
            | UiAction::Decline { request_id } => Some(*request_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionOutcome {
    Done,
    /// Not executed; the reason is shown to the user.
    Refused(String),
    /// Not executed because the LED was suppressed and the SAK was not
    /// pressed again.
    NegativeFeedback,
    Exited,
}

/// What the UI bridge broadcasts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KernelSnapshot {
    pub mode: Mode,
    pub led: bool,
    pub menu: Option<MenuModel>,
    pub pending: usize,
    pub sensors: Vec<(Sensor, String)>,
    pub notice: Option<String>,
    pub awaiting_repress: bool,
}

#[derive(Debug, Clone)]
struct Training {
    rng: ChaCha20Rng,
    entries: u64,
}

#[derive(Debug, Clone)]
pub struct Kernel {
    config: KernelConfig,
    identity: Identity,
    registry: PeerRegistry,
    repository: Repository,
    mode: Mode,
    led: bool,
    training: Training,
    pending: PendingQueue,
    sensors: SensorTable,
    idle_deadline: Option<SimTime>,
    session: Option<SecureSession>,
    next_session_id: u64,
    next_request_id: u64,
    rng: ChaCha20Rng,
    completions: Vec<ApiResult>,
    secrets: SecretRegistry,
    notice: Option<String>,
    dirty: bool,
    trace: TraceBuffer,
}

impl Kernel {
    pub fn new(
        config: KernelConfig,
        identity: Identity,
        registry: PeerRegistry,
        repository: Repository,
        seed: u64,
    ) -> Self {
        let mut training_rng = ChaCha20Rng::seed_from_u64(seed);
        training_rng.set_stream(1);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut secrets = SecretRegistry::default();
        for file in repository.files() {
            secrets.register(&file.content);
        }
        let capacity = config.queue_capacity;
        Self {
            config,
            identity,
            registry,
            repository,
            mode: Mode::Normal,
            led: false,
            training: Training {
                rng: training_rng,
                entries: 0,
            },
            pending: PendingQueue::new(capacity),
            sensors: SensorTable::default(),
            idle_deadline: None,
            session: None,
            next_session_id: 1,
            next_request_id: 1,
            rng,
            completions: Vec::new(),
            secrets,
            notice: None,
            dirty: false,
            trace: TraceBuffer::default(),
        }
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn led(&self) -> bool {
        self.led
    }

    pub fn session(&self) -> Option<&SecureSession> {
        self.session.as_ref()
    }

    pub fn pending(&self) -> &PendingQueue {
        &self.pending
    }

    pub fn sensors(&self) -> &SensorTable {
        &self.sensors
    }

    pub fn registry(&self) -> &PeerRegistry {
        &self.registry
    }

    pub fn repository(&self) -> &Repository {
        &self.repository
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn secrets(&self) -> &SecretRegistry {
        &self.secrets
    }

    pub fn idle_deadline(&self) -> Option<SimTime> {
        self.idle_deadline
    }

    pub fn entries(&self) -> u64 {
        self.training.entries
    }

    pub fn trace_mut(&mut self) -> &mut TraceBuffer {
        &mut self.trace
    }

    /// Results finalized since the last call, for delivery to applications.
    pub fn take_completions(&mut self) -> Vec<ApiResult> {
        std::mem::take(&mut self.completions)
    }

    /// Whether the repository changed since the last call.
    pub fn take_dirty(&mut self) -> bool {
        std::mem::take(&mut self.dirty)
    }

    fn emit(&mut self, now: SimTime, event: TraceEvent) {
        self.trace.emit(now, KERNEL, event);
    }

    fn set_led(&mut self, now: SimTime, on: bool) {
        if self.led != on {
            self.led = on;
            self.emit(now, TraceEvent::Led { on });
        }
    }

    fn access(&self) -> Result<SecureAccess, KernelError> {
        self.session
            .as_ref()
            .map(|s| SecureAccess::new(s.id))
            .ok_or(KernelError::NotInSecureMode)
    }

    /// The earliest time at which `tick` has something to do.
    pub fn next_deadline(&self) -> Option<SimTime> {
        let requests = self
            .pending
            .iter()
            .map(|r| r.created_at + self.config.request_lifetime);
        let sensors = self.sensors.iter().filter_map(|(_, p)| match p {
            SensorPolicy::TempEnabled(t) | SensorPolicy::Discarding(t) => Some(t),
            _ => None,
        });
        requests.chain(sensors).chain(self.idle_deadline).min()
    }

    /// SAK interrupt. Never fails and never depends on normal-world state.
    pub fn on_sak_press(&mut self, now: SimTime) {
        self.expire(now);
        match self.mode {
            Mode::Normal => {
                self.training.entries += 1;
                let entry = self.training.entries;
                let suppressed = entry <= self.config.training_entries
                    && self.training.rng.gen::<f64>() < self.config.suppression_prob;
                let id = self.next_session_id;
                self.next_session_id += 1;
                self.session = Some(SecureSession {
                    id,
                    entered_at: now,
                    entry,
                    suppressed,
                    repressed: false,
                    failed_attempts: 0,
                    locked_out: false,
                    open_request: None,
                    unlocked_key: None,
                });
                self.mode = Mode::Secure;
                self.emit(
                    now,
                    TraceEvent::SakPress {
                        entry,
                        suppressed,
                        repress: false,
                    },
                );
                self.emit(
                    now,
                    TraceEvent::ModeChange {
                        from: Mode::Normal,
                        to: Mode::Secure,
                        cause: ModeCause::SakPress,
                    },
                );
                if !suppressed {
                    self.set_led(now, true);
                }
            }
            Mode::Secure => {
                let session = self.session.as_mut().expect("secure-mode has a session");
                let repress = session.awaiting_repress();
                if repress {
                    session.repressed = true;
                }
                let entry = session.entry;
                self.emit(
                    now,
                    TraceEvent::SakPress {
                        entry,
                        suppressed: false,
                        repress,
                    },
                );
                self.set_led(now, true);
            }
        }
        self.notice = None;
        self.idle_deadline = Some(now + self.config.idle_timeout);
        let pending = self.pending.iter().map(|r| r.request_id).collect();
        self.emit(now, TraceEvent::MenuShown { pending });
    }

    pub fn exit_secure(&mut self, now: SimTime, cause: ModeCause) -> Result<(), KernelError> {
        if self.mode != Mode::Secure {
            return Err(KernelError::NotInSecureMode);
        }
        self.set_led(now, false);
        self.mode = Mode::Normal;
        self.session = None;
        self.idle_deadline = None;
        self.notice = None;
        self.emit(
            now,
            TraceEvent::ModeChange {
                from: Mode::Secure,
                to: Mode::Normal,
                cause,
            },
        );
        Ok(())
    }

    /// Timer interrupt: request expiry, sensor windows and the idle timeout.
    pub fn tick(&mut self, now: SimTime) {
        self.expire(now);
        if self.mode == Mode::Secure && self.idle_deadline.is_some_and(|d| now >= d) {
            self.exit_secure(now, ModeCause::IdleTimeout)
                .expect("secure-mode checked above");
        }
    }

    fn expire(&mut self, now: SimTime) {
        for sensor in self.sensors.expire(now) {
            self.emit(
                now,
                TraceEvent::SensorPolicy {
                    sensor,
                    policy: SensorPolicy::Blocked.to_string(),
                },
            );
        }
        if now.millis() < self.config.request_lifetime {
            return;
        }
        let cutoff = SimTime(now.millis() - self.config.request_lifetime);
        for req in self.pending.take_expired(cutoff) {
            if let Some(s) = self.session.as_mut() {
                if s.open_request == Some(req.request_id) {
                    s.open_request = None;
                }
            }
            self.finish(now, &req, ApiStatus::TimedOut, None);
        }
    }

    fn finish(
        &mut self,
        now: SimTime,
        req: &ApiRequest,
        status: ApiStatus,
        output: Option<LabeledBytes>,
    ) {
        self.trace.emit(
            now,
            GATEWAY,
            TraceEvent::ApiResult {
                request_id: req.request_id,
                app: req.origin_app.clone(),
                status: status.to_string(),
            },
        );
        self.completions.push(ApiResult {
            request_id: req.request_id,
            app: req.origin_app.clone(),
            kind: req.payload.kind(),
            status,
            output,
        });
    }

    pub fn sensor_gate(&mut self, now: SimTime, sensor: Sensor) -> GateDecision {
        self.expire(now);
        self.sensors.gate(sensor, now)
    }

    pub fn present_menu(&self) -> Result<MenuModel, KernelError> {
        if self.mode != Mode::Secure {
            return Err(KernelError::NotInSecureMode);
        }
        Ok(self.menu())
    }

    /// The secure-mode menu as it would be drawn now.
    pub fn menu(&self) -> MenuModel {
        let pending = self
            .pending
            .iter()
            .map(|r| {
                let peer = r.payload.peer();
                let detail = match &r.payload {
                    RequestPayload::Data { .. } => "send data".to_string(),
                    RequestPayload::Message { .. } => "message".to_string(),
                    RequestPayload::Signature { document, .. } => {
                        format!("sign {}", document.doc_type)
                    }
                    RequestPayload::SignedDoc { document, .. } => {
                        format!("view {}", document.doc_type)
                    }
                    RequestPayload::Sensor { sensor } => format!("enable {sensor}"),
                };
                MenuEntry {
                    request_id: r.request_id,
                    kind: r.payload.kind(),
                    app: r.origin_app.clone(),
                    peer: peer.map(|p| p.name.clone()),
                    peer_groups: peer
                        .map(|p| p.groups.iter().cloned().collect())
                        .unwrap_or_default(),
                    detail,
                }
            })
            .collect();
        MenuModel {
            built_ins: BuiltIn::ALL.to_vec(),
            pending,
        }
    }

    pub fn snapshot(&self) -> KernelSnapshot {
        KernelSnapshot {
            mode: self.mode,
            led: self.led,
            menu: (self.mode == Mode::Secure).then(|| self.menu()),
            pending: self.pending.len(),
            sensors: self
                .sensors
                .iter()
                .map(|(s, p)| (s, p.to_string()))
                .collect(),
            notice: self.notice.clone(),
            awaiting_repress: self
                .session
                .as_ref()
                .is_some_and(SecureSession::awaiting_repress),
        }
    }

    // ---- application API ----

    /// Entry point for every application call. Validation happens here;
    /// accepted requests wait in the queue for the user.
    pub fn api_call(&mut self, now: SimTime, app: &str, call: ApiCall) -> ApiResult {
        self.expire(now);
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        let kind = call.kind();
        self.trace.emit(
            now,
            GATEWAY,
            TraceEvent::ApiCall {
                request_id,
                app: app.to_string(),
                kind,
                peer: call.peer().map(str::to_string),
            },
        );
        let status = match self.admit(now, request_id, app, &call) {
            Err(status) => status,
            Ok(Admitted::Coalesced(existing)) => {
                self.trace.emit(
                    now,
                    GATEWAY,
                    TraceEvent::App {
                        app: app.to_string(),
                        action: "coalesced".into(),
                        detail: format!("request {request_id} joins {existing}"),
                    },
                );
                ApiStatus::Pending
            }
            Ok(Admitted::New(payload)) => {
                let payload = *payload;
                if let RequestPayload::Message { plaintext, .. } = &payload {
                    self.secrets.register(plaintext);
                }
                let req = ApiRequest {
                    request_id,
                    origin_app: app.to_string(),
                    created_at: now,
                    payload,
                };
                match self.pending.push(req) {
                    Ok(()) => {
                        self.trace
                            .emit(now, GATEWAY, TraceEvent::RequestQueued { request_id });
                        ApiStatus::Pending
                    }
                    Err(QueueFull) => ApiStatus::QueueFull,
                }
            }
        };
        self.trace.emit(
            now,
            GATEWAY,
            TraceEvent::ApiResult {
                request_id,
                app: app.to_string(),
                status: status.to_string(),
            },
        );
        ApiResult {
            request_id,
            app: app.to_string(),
            kind,
            status,
            output: None,
        }
    }

    fn permission(
        &mut self,
        now: SimTime,
        request_id: u64,
        kind: ApiKind,
        peer: Option<&str>,
        doc_type: Option<&str>,
        outcome: &Result<(), String>,
    ) {
        self.trace.emit(
            now,
            GATEWAY,
            TraceEvent::PermissionCheck {
                request_id,
                peer: peer.map(str::to_string),
                role: kind.required_role(),
                doc_type: doc_type.map(str::to_string),
                ok: outcome.is_ok(),
                reason: outcome.as_ref().err().cloned(),
            },
        );
    }

    fn resolve_peer(
        &mut self,
        name: &str,
        presented: Option<&[u8]>,
    ) -> Result<PeerCertificate, String> {
        if let Some(bytes) = presented {
            let cert = PeerCertificate::from_bytes(bytes)
                .map_err(|e| format!("certificate malformed: {e}"))?;
            if cert.name != name {
                return Err(format!("certificate is for `{}`, not `{name}`", cert.name));
            }
            let report = self.registry.learn(&cert);
            if !report.is_accepted() {
                return Err(format!("certificate rejected: {:?}", report.rejections));
            }
        }
        self.registry
            .lookup(name)
            .cloned()
            .ok_or_else(|| format!("unknown peer `{name}`"))
    }

    fn admit(
        &mut self,
        now: SimTime,
        request_id: u64,
        app: &str,
        call: &ApiCall,
    ) -> Result<Admitted, ApiStatus> {
        let kind = call.kind();
        let reject = |reason: String| ApiStatus::PeerRejected { reason };

        if let ApiCall::EnableSensor { sensor } = call {
            let sensor = *sensor;
            let outcome = match self.sensors.get(sensor) {
                SensorPolicy::Discarding(until) if until > now => {
                    Err(ApiStatus::DiscardWindow { until })
                }
                SensorPolicy::Blocked => Ok(()),
                SensorPolicy::TempEnabled(until) if until <= now + self.config.reblock_grace => {
                    Ok(())
                }
                _ => Err(ApiStatus::SensorNotBlocked),
            };
            let check = outcome
                .as_ref()
                .map(|_| ())
                .map_err(|s| s.name().to_string());
            self.permission(now, request_id, kind, None, None, &check);
            outcome?;
            return Ok(match self.pending.find_sensor_duplicate(app, sensor) {
                Some(existing) => Admitted::Coalesced(existing),
                None => Admitted::New(Box::new(RequestPayload::Sensor { sensor })),
            });
        }

        let peer_name = call.peer().expect("peer-bearing call").to_string();
        let document = match call {
            ApiCall::RequestSignature { document, .. }
            | ApiCall::DisplaySignedDoc { document, .. } => {
                match SignedDocument::from_bytes(document) {
                    Ok(doc) => Some(doc),
                    Err(e) => {
                        let reason = format!("document malformed: {e}");
                        self.permission(
                            now,
                            request_id,
                            kind,
                            Some(&peer_name),
                            None,
                            &Err(reason.clone()),
                        );
                        return Err(reject(reason));
                    }
                }
            }
            _ => None,
        };
        let doc_type = document.as_ref().map(|d| d.doc_type.clone());

        let outcome = self
            .resolve_peer(&peer_name, call.presented_cert())
            .and_then(|cert| {
                rbac_check(&self.registry, kind, &peer_name, doc_type.as_deref()).map(|_| cert)
            })
            .and_then(|cert| self.verify_payload(call, cert, document));
        let check = outcome.as_ref().map(|_| ()).map_err(Clone::clone);
        self.permission(
            now,
            request_id,
            kind,
            Some(&peer_name),
            doc_type.as_deref(),
            &check,
        );
        outcome.map(|p| Admitted::New(Box::new(p))).map_err(reject)
    }

    fn verify_payload(
        &self,
        call: &ApiCall,
        cert: PeerCertificate,
        document: Option<SignedDocument>,
    ) -> Result<RequestPayload, String> {
        match call {
            ApiCall::RequestData { .. } => Ok(RequestPayload::Data { recipient: cert }),
            ApiCall::DisplayMessage { envelope, .. } => {
                let env = Envelope::from_bytes(envelope)
                    .map_err(|e| format!("envelope malformed: {e}"))?;
                let plaintext = crypto::open(
                    self.config.suite,
                    &self.identity.keys,
                    &cert.name,
                    &cert.public_key,
                    &env,
                )
                .map_err(|e| format!("envelope rejected: {e}"))?;
                Ok(RequestPayload::Message {
                    plaintext: LabeledBytes::secret(self.identity.name(), plaintext),
                    sender: cert,
                })
            }
            ApiCall::RequestSignature { .. } | ApiCall::DisplaySignedDoc { .. } => {
                let doc = document.expect("document parsed before verification");
                if doc.originator_name != cert.name {
                    return Err(format!(
                        "document originated by `{}`, not `{}`",
                        doc.originator_name, cert.name
                    ));
                }
                if !doc.verify_originator(&cert.public_key) {
                    return Err("originator signature does not verify".into());
                }
                if matches!(call, ApiCall::RequestSignature { .. }) {
                    if doc.counter_signature.is_some() {
                        return Err("document is already counter-signed".into());
                    }
                    Ok(RequestPayload::Signature {
                        recipient: cert,
                        document: doc,
                    })
                } else {
                    Ok(RequestPayload::SignedDoc {
                        sender: cert,
                        document: doc,
                    })
                }
            }
            ApiCall::EnableSensor { .. } => unreachable!("handled before peer resolution"),
        }
    }

    // ---- user actions ----

    pub fn on_user_action(
        &mut self,
        now: SimTime,
        action: UiAction,
    ) -> Result<ActionOutcome, KernelError> {
        if self.mode != Mode::Secure {
            return Err(KernelError::NotInSecureMode);
        }
        self.expire(now);
        self.idle_deadline = Some(now + self.config.idle_timeout);
        let session = self.session.as_ref().expect("secure-mode has a session");
        if action != UiAction::Exit && session.awaiting_repress() {
            self.emit(
                now,
                TraceEvent::NegativeFeedback {
                    action: action.name().to_string(),
                },
            );
            self.emit(now, TraceEvent::LedBlink);
            let text = "The indicator was off: press the secure key before acting".to_string();
            self.notice = Some(text.clone());
            self.emit(now, TraceEvent::UserNotice { text });
            return Ok(ActionOutcome::NegativeFeedback);
        }
        let action = self.resolve_gesture(action);
        self.emit(
            now,
            TraceEvent::UserAction {
                action: action.name().to_string(),
                request_id: action.request_id(),
            },
        );
        let outcome = self.execute(now, action)?;
        if let ActionOutcome::Refused(text) = &outcome {
            self.notice = Some(text.clone());
            self.emit(now, TraceEvent::UserNotice { text: text.clone() });
        }
        Ok(outcome)
    }

    /// Maps raw taps and typed text onto concrete actions.
    fn resolve_gesture(&self, action: UiAction) -> UiAction {
        match action {
            UiAction::Tap { x, y } => match self.menu().hit(x, y) {
                Some(MenuHit::BuiltIn(BuiltIn::RepositoryBrowser)) => UiAction::OpenRepository,
                Some(MenuHit::BuiltIn(BuiltIn::SensorControl)) => UiAction::OpenSensors,
                Some(MenuHit::BuiltIn(BuiltIn::SignedArchive)) => UiAction::OpenArchive,
                Some(MenuHit::BuiltIn(BuiltIn::PeerAdmin)) => UiAction::OpenPeerAdmin,
                Some(MenuHit::BuiltIn(BuiltIn::Exit)) => UiAction::Exit,
                Some(MenuHit::Request(request_id)) => UiAction::OpenRequest { request_id },
                None => UiAction::Tap { x, y },
            },
            UiAction::Text { value } => {
                let session = self.session.as_ref().expect("secure-mode has a session");
                match session.open_request.and_then(|id| self.pending.get(id)) {
                    Some(req) => match &req.payload {
                        RequestPayload::Data { .. } => UiAction::ComposeText {
                            request_id: req.request_id,
                            text: value,
                        },
                        RequestPayload::Signature { .. } if !session.key_unlocked() => {
                            UiAction::UnlockKey { credential: value }
                        }
                        _ => UiAction::Text { value },
                    },
                    None => UiAction::Text { value },
                }
            }
            other => other,
        }
    }

    fn take_request(
        &mut self,
        request_id: u64,
        kind: ApiKind,
    ) -> Result<ApiRequest, ActionOutcome> {
        match self.pending.get(request_id) {
            Some(r) if r.payload.kind() == kind => {}
            Some(_) => {
                return Err(ActionOutcome::Refused(format!(
                    "request {request_id} is not a {kind} request"
                )))
            }
            None => {
                return Err(ActionOutcome::Refused(format!(
                    "no pending request {request_id}"
                )))
            }
        }
        if let Some(s) = self.session.as_mut() {
            if s.open_request == Some(request_id) {
                s.open_request = None;
            }
        }
        Ok(self.pending.remove(request_id).expect("checked above"))
    }

    fn seal_for(&mut self, recipient: &PeerCertificate, item: &LabeledBytes) -> LabeledBytes {
        let env = crypto::seal(
            self.config.suite,
            self.identity.name(),
            &self.identity.keys,
            &recipient.public_key,
            item.bytes(),
            &mut self.rng,
        )
        .expect("data items are never empty");
        LabeledBytes::declassify_sealed(Sealed::Envelope(&env))
    }

    fn secret(&mut self, bytes: impl Into<Vec<u8>>) -> LabeledBytes {
        let data = LabeledBytes::secret(self.identity.name(), bytes);
        self.secrets.register(&data);
        data
    }

    fn complete_data(
        &mut self,
        now: SimTime,
        request_id: u64,
        item: DataItem,
        raw: Option<LabeledBytes>,
    ) -> ActionOutcome {
        let req = match self.take_request(request_id, ApiKind::RequestData) {
            Ok(r) => r,
            Err(outcome) => return outcome,
        };
        let RequestPayload::Data { recipient } = &req.payload else {
            unreachable!("kind checked")
        };
        let plaintext = self.secret(item.encode());
        let output = match raw {
            Some(leak) if self.config.leak_demo => leak,
            _ => self.seal_for(recipient, &plaintext),
        };
        self.finish(
            now,
            &req,
            ApiStatus::Completed {
                enabled_until: None,
            },
            Some(output),
        );
        ActionOutcome::Done
    }

    fn execute(&mut self, now: SimTime, action: UiAction) -> Result<ActionOutcome, KernelError> {
        let access = self.access()?;
        let outcome = match action {
            UiAction::Exit => {
                self.exit_secure(now, ModeCause::ExitButton)?;
                ActionOutcome::Exited
            }
            UiAction::OpenRepository | UiAction::RepoList => {
                let files = self.repository.list(&access);
                self.emit(
                    now,
                    TraceEvent::Repository {
                        op: "list".into(),
                        path: None,
                        ok: true,
                    },
                );
                self.notice = Some(format!("{} files", files.len()));
                ActionOutcome::Done
            }
            UiAction::OpenSensors => {
                let table = self
                    .sensors
                    .iter()
                    .map(|(s, p)| format!("{s}={p}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                self.notice = Some(table);
                ActionOutcome::Done
            }
            UiAction::OpenArchive | UiAction::ListSigned => {
                let n = self.repository.list_signed(&access).len();
                self.emit(
                    now,
                    TraceEvent::Repository {
                        op: "list_signed".into(),
                        path: None,
                        ok: true,
                    },
                );
                self.notice = Some(format!("{n} signed documents"));
                ActionOutcome::Done
            }
            UiAction::OpenPeerAdmin => {
                self.notice = Some(format!("{} peers", self.registry.peers().count()));
                ActionOutcome::Done
            }
            UiAction::OpenRequest { request_id } => self.open_request(now, request_id),
            UiAction::ComposeText { request_id, text } => {
                if text.is_empty() {
                    ActionOutcome::Refused("message is empty".into())
                } else {
                    self.secret(text.as_bytes().to_vec());
                    self.complete_data(now, request_id, DataItem::Text(text), None)
                }
            }
            UiAction::SendFile { request_id, path } => {
                let Some(RequestPayload::Data { recipient }) =
                    self.pending.get(request_id).map(|r| &r.payload)
                else {
                    return Ok(ActionOutcome::Refused(format!(
                        "no pending data request {request_id}"
                    )));
                };
                match self.repository.read(&access, &path) {
                    Ok(file) if file.acl_allows(recipient) => {
                        let content = file.content.clone();
                        let item = DataItem::File {
                            path,
                            content: content.bytes().to_vec(),
                        };
                        self.complete_data(now, request_id, item, Some(content))
                    }
                    Ok(_) => ActionOutcome::Refused(format!(
                        "`{path}` may not be sent to `{}`",
                        recipient.name
                    )),
                    Err(e) => ActionOutcome::Refused(e.to_string()),
                }
            }
            UiAction::SendSensorReading { request_id, sensor } => {
                let mut nonce = [0u8; 8];
                self.rng.fill(&mut nonce);
                let reading = format!(
                    "{}@{}#{}",
                    crate::device::sample_reading(sensor, now),
                    now.millis(),
                    hex::encode(nonce)
                );
                self.secret(reading.as_bytes().to_vec());
                self.complete_data(
                    now,
                    request_id,
                    DataItem::SensorReading {
                        sensor,
                        reading: reading.into_bytes(),
                    },
                    None,
                )
            }
            UiAction::UnlockKey { credential } => self.unlock(now, &credential),
            UiAction::ApproveSignature { request_id, fields } => {
                self.approve_signature(now, &access, request_id, fields)
            }
            UiAction::ApproveSensor {
                request_id,
                minutes,
            } => {
                let req = match self.take_request(request_id, ApiKind::EnableSensor) {
                    Ok(r) => r,
                    Err(o) => return Ok(o),
                };
                let RequestPayload::Sensor { sensor } = req.payload else {
                    unreachable!("kind checked")
                };
                let until = now + (minutes * MINUTE).clamp(MINUTE, self.config.max_sensor_enable);
                self.set_policy(now, sensor, SensorPolicy::TempEnabled(until));
                self.finish(
                    now,
                    &req,
                    ApiStatus::Completed {
                        enabled_until: Some(until),
                    },
                    None,
                );
                ActionOutcome::Done
            }
            UiAction::DiscardSensorRequests {
                request_id,
                minutes,
            } => {
                let req = match self.take_request(request_id, ApiKind::EnableSensor) {
                    Ok(r) => r,
                    Err(o) => return Ok(o),
                };
                let RequestPayload::Sensor { sensor } = req.payload else {
                    unreachable!("kind checked")
                };
                let until = now + minutes.max(1) * MINUTE;
                self.set_policy(now, sensor, SensorPolicy::Discarding(until));
                self.finish(now, &req, ApiStatus::DiscardWindow { until }, None);
                ActionOutcome::Done
            }
            UiAction::Decline { request_id } => match self.pending.get(request_id) {
                Some(r) => {
                    let kind = r.payload.kind();
                    let req = self.take_request(request_id, kind).expect("present");
                    self.finish(now, &req, ApiStatus::UserDeclined, None);
                    ActionOutcome::Done
                }
                None => ActionOutcome::Refused(format!("no pending request {request_id}")),
            },
            UiAction::SetSensor { sensor, open } => {
                let policy = if open {
                    SensorPolicy::Open
                } else {
                    SensorPolicy::Blocked
                };
                self.set_policy(now, sensor, policy);
                ActionOutcome::Done
            }
            UiAction::RepoWrite { path, content, acl } => {
                let result = self.repository.write(&access, &path, &content, acl);
                self.secret(content);
                self.repo_result(now, "write", path, result)
            }
            UiAction::RepoRead { path } => {
                let result = self
                    .repository
                    .read(&access, &path)
                    .map(|f| f.content.len());
                match result {
                    Ok(len) => {
                        self.notice = Some(format!("{path}: {len} bytes"));
                        self.repo_result(now, "read", path, Ok(()))
                    }
                    Err(e) => self.repo_result(now, "read", path, Err(e)),
                }
            }
            UiAction::RepoDelete { path } => {
                let result = self.repository.delete(&access, &path);
                self.repo_result(now, "delete", path, result)
            }
            UiAction::AdminAuthorize { password, cert } => {
                self.secret(password.as_bytes().to_vec());
                let result = PeerCertificate::from_bytes(&cert)
                    .map_err(|e| e.to_string())
                    .and_then(|c| {
                        let name = c.name.clone();
                        self.registry
                            .admin_authorize(&AdminAccess::from_secure_ui(), &password, c)
                            .map(|_| name)
                            .map_err(|e| e.to_string())
                    });
                match result {
                    Ok(name) => {
                        self.emit(now, TraceEvent::AdminAuthorize { name, ok: true });
                        ActionOutcome::Done
                    }
                    Err(e) => {
                        self.emit(
                            now,
                            TraceEvent::AdminAuthorize {
                                name: String::new(),
                                ok: false,
                            },
                        );
                        ActionOutcome::Refused(e)
                    }
                }
            }
            UiAction::Tap { .. } => ActionOutcome::Refused("nothing here".into()),
            UiAction::Text { .. } => ActionOutcome::Refused("no request is open for text".into()),
        };
        Ok(outcome)
    }

    fn repo_result(
        &mut self,
        now: SimTime,
        op: &str,
        path: String,
        result: Result<(), RepoError>,
    ) -> ActionOutcome {
        let ok = result.is_ok();
        self.emit(
            now,
            TraceEvent::Repository {
                op: op.to_string(),
                path: Some(path),
                ok,
            },
        );
        match result {
            Ok(()) => {
                if op != "read" {
                    self.dirty = true;
                }
                ActionOutcome::Done
            }
            Err(e) => ActionOutcome::Refused(e.to_string()),
        }
    }

    fn set_policy(&mut self, now: SimTime, sensor: Sensor, policy: SensorPolicy) {
        self.sensors.set(sensor, policy);
        self.emit(
            now,
            TraceEvent::SensorPolicy {
                sensor,
                policy: policy.to_string(),
            },
        );
    }

    fn open_request(&mut self, now: SimTime, request_id: u64) -> ActionOutcome {
        let Some(req) = self.pending.get(request_id).cloned() else {
            return ActionOutcome::Refused(format!("no pending request {request_id}"));
        };
        let display = |peer: &PeerCertificate, content: String| TraceEvent::Display {
            request_id,
            peer: peer.name.clone(),
            groups: peer.groups.iter().cloned().collect(),
            content,
        };
        match &req.payload {
            RequestPayload::Message { sender, plaintext } => {
                let content = DataItem::decode(plaintext.bytes())
                    .map(|i| i.describe())
                    .unwrap_or_else(|_| String::from_utf8_lossy(plaintext.bytes()).into_owned());
                self.emit(now, display(sender, content));
                self.pending.remove(request_id);
                self.finish(
                    now,
                    &req,
                    ApiStatus::Completed {
                        enabled_until: None,
                    },
                    None,
                );
            }
            RequestPayload::SignedDoc { sender, document } => {
                let content = format!(
                    "{}: {}",
                    document.doc_type,
                    String::from_utf8_lossy(&document.body)
                );
                self.emit(now, display(sender, content));
                self.pending.remove(request_id);
                self.finish(
                    now,
                    &req,
                    ApiStatus::Completed {
                        enabled_until: None,
                    },
                    None,
                );
            }
            RequestPayload::Signature {
                recipient,
                document,
            } => {
                let fields: Vec<String> = document
                    .personal_fields
                    .iter()
                    .map(|f| format!("{}:{:?}", f.name, f.kind))
                    .collect();
                let content = format!(
                    "{}: {} [fields {}]",
                    document.doc_type,
                    String::from_utf8_lossy(&document.body),
                    fields.join(",")
                );
                self.emit(now, display(recipient, content));
                self.session.as_mut().expect("secure").open_request = Some(request_id);
            }
            RequestPayload::Data { recipient } => {
                let access = self.access().expect("secure");
                let files: Vec<String> = self
                    .repository
                    .files_for(&access, recipient)
                    .into_iter()
                    .map(|f| f.path.clone())
                    .collect();
                self.emit(
                    now,
                    display(recipient, format!("compose or pick: {}", files.join(","))),
                );
                self.session.as_mut().expect("secure").open_request = Some(request_id);
            }
            RequestPayload::Sensor { sensor } => {
                self.emit(
                    now,
                    TraceEvent::Display {
                        request_id,
                        peer: req.origin_app.clone(),
                        groups: Vec::new(),
                        content: format!("{} asks to enable {sensor}", req.origin_app),
                    },
                );
                self.session.as_mut().expect("secure").open_request = Some(request_id);
            }
        }
        ActionOutcome::Done
    }

    fn unlock(&mut self, now: SimTime, credential: &str) -> ActionOutcome {
        match self.unlock_private_key(now, credential) {
            Ok(_) => ActionOutcome::Done,
            Err(e) => ActionOutcome::Refused(e.to_string()),
        }
    }

    /// Opens the credential-sealed private key for the rest of this session.
    pub fn unlock_private_key(
        &mut self,
        now: SimTime,
        credential: &str,
    ) -> Result<KeyHandle, KernelError> {
        let access = self.access()?;
        let session = self.session.as_ref().expect("secure");
        if session.locked_out {
            return Err(RepoError::LockedOut.into());
        }
        self.secret(credential.as_bytes().to_vec());
        match self
            .repository
            .open_private_key(&access, credential)
            .and_then(|bytes| {
                KeyPair::from_secret_bytes(&bytes).map_err(|_| RepoError::CredentialFailure)
            }) {
            Ok(keys) => {
                let session = self.session.as_mut().expect("secure");
                session.unlocked_key = Some(keys);
                session.failed_attempts = 0;
                self.emit(now, TraceEvent::KeyUnlocked);
                Ok(KeyHandle {
                    session_id: access.session_id(),
                })
            }
            Err(RepoError::CredentialFailure) => {
                let limit = self.config.credential_attempts;
                let session = self.session.as_mut().expect("secure");
                session.failed_attempts += 1;
                let attempts = session.failed_attempts;
                self.emit(now, TraceEvent::CredentialRejected { attempts });
                if attempts >= limit {
                    let session = self.session.as_mut().expect("secure");
                    session.locked_out = true;
                    let open = session.open_request.take();
                    self.emit(now, TraceEvent::SessionLockout);
                    if let Some(req) = open.and_then(|id| self.pending.remove(id)) {
                        self.finish(now, &req, ApiStatus::UserDeclined, None);
                    }
                    return Err(RepoError::LockedOut.into());
                }
                Err(RepoError::CredentialFailure.into())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Signs with the key unlocked under `handle`.
    pub fn sign_with(&self, handle: KeyHandle, message: &[u8]) -> Result<Vec<u8>, KernelError> {
        match &self.session {
            Some(s) if s.id == handle.session_id => s
                .unlocked_key
                .as_ref()
                .map(|k| k.sign(message))
                .ok_or(KernelError::HandleExpired),
            _ => Err(KernelError::HandleExpired),
        }
    }

    fn approve_signature(
        &mut self,
        now: SimTime,
        access: &SecureAccess,
        request_id: u64,
        fields: Vec<(String, String)>,
    ) -> ActionOutcome {
        let Some(RequestPayload::Signature {
            recipient,
            document,
        }) = self.pending.get(request_id).map(|r| r.payload.clone())
        else {
            return ActionOutcome::Refused(format!("no pending signature request {request_id}"));
        };
        let session = self.session.as_ref().expect("secure");
        let Some(user_keys) = session.unlocked_key.as_ref() else {
            return ActionOutcome::Refused("unlock your signing key first".into());
        };
        for (_, v) in &fields {
            self.secrets.register(&LabeledBytes::secret(
                self.identity.name(),
                v.as_bytes().to_vec(),
            ));
        }
        let signed = match document.countersign(user_keys, &recipient.public_key, &fields) {
            Ok(d) => d,
            Err(e) => return ActionOutcome::Refused(e.to_string()),
        };
        let req = self
            .take_request(request_id, ApiKind::RequestSignature)
            .expect("present");
        self.emit(
            now,
            TraceEvent::Countersigned {
                request_id,
                doc_type: signed.doc_type.clone(),
            },
        );
        let bytes = signed.to_bytes();
        self.repository.archive_signed(access, signed);
        self.dirty = true;
        let plaintext = self.secret(DataItem::SignedDocument(bytes).encode());
        let output = self.seal_for(&recipient, &plaintext);
        self.finish(
            now,
            &req,
            ApiStatus::Completed {
                enabled_until: None,
            },
            Some(output),
        );
        ActionOutcome::Done
    }
}

enum Admitted {
    New(Box<RequestPayload>),
    Coalesced(u64),
}

#[cfg(test)]
mod tests;
