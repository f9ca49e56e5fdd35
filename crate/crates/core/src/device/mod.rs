//! One simulated handset: the interrupt controller, the cycle ledger, secure
//! storage, and the boundary where bytes enter the normal world.
//!
//! Every delivery into the normal world is recorded as an
//! [`Observation`]; the taint audit runs over that log.

mod interrupts;
mod ledger;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::authority::{decode_roots, AdminError, PeerRegistry};
use crate::crypto::CryptoError;
use crate::gateway::{ApiCall, ApiResult, ApiStatus, GatewayError, GatewayMessage};
use crate::kernel::{
    ActionOutcome, GateDecision, Identity, Kernel, KernelConfig, KernelError, Mode, ModeCause,
    UiAction,
};
use crate::repository::{RepoError, Repository};
use crate::taint::{Channel, LabeledBytes, Observation};
use crate::time::SimTime;
use crate::trace::{TraceBuffer, TraceEvent, World};

pub use interrupts::{
    InterruptController, Peripheral, Remappable, RouteTarget, Sensor, TouchState, UnknownSensor,
};
pub use ledger::{CostCategory, CostTable, CycleLedger, DEFAULT_CYCLES_PER_SECOND};

const DEVICE: &str = "device";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("repository blob is corrupt: {0}")]
    CorruptRepositoryBlob(String),
    #[error("root certificate set is invalid: {0}")]
    BadRoots(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl From<CryptoError> for DeviceError {
    fn from(e: CryptoError) -> Self {
        DeviceError::BadRoots(e.to_string())
    }
}

impl From<AdminError> for DeviceError {
    fn from(e: AdminError) -> Self {
        DeviceError::BadRoots(e.to_string())
    }
}

/// Deterministic placeholder content for a sensor signal.
pub fn sample_reading(sensor: Sensor, now: SimTime) -> String {
    let t = now.millis();
    match sensor {
        Sensor::Gps => format!(
            "gps:{}.{:04}N,{}.{:04}E",
            47,
            (t / 1000) % 10_000,
            8,
            (t / 7) % 10_000
        ),
        Sensor::Mic => format!(
            "mic:pcm-{:08x}",
            t.wrapping_mul(2_654_435_761) & 0xffff_ffff
        ),
        Sensor::Camera => format!("camera:frame-{}", t / 40),
    }
}

#[derive(Debug, Clone)]
pub struct DeviceConfig {
    pub name: String,
    pub kernel: KernelConfig,
    pub costs: CostTable,
    pub cycles_per_second: u64,
    /// A compliant user glances at the LED before every secure action and
    /// presses the SAK if it is dark.
    pub compliant_user: bool,
}

impl DeviceConfig {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kernel: KernelConfig::default(),
            costs: CostTable::default(),
            cycles_per_second: DEFAULT_CYCLES_PER_SECOND,
            compliant_user: true,
        }
    }
}

/// Factory and storage contents present at power-on.
#[derive(Debug, Clone)]
pub struct BootFixtures {
    /// Root set as encoded by [`crate::authority::encode_roots`].
    pub roots: Vec<u8>,
    pub identity: Identity,
    pub device_key: [u8; 32],
    pub repository_blob: Option<Vec<u8>>,
    pub admin_password: Option<String>,
    /// Reserved document type → group allowed to present it.
    pub reserved_doc_types: Vec<(String, String)>,
}

/// What happened to a touch made by the user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TouchOutcome {
    Secure(ActionOutcome),
    /// The touch reached the normal world, carrying what the user typed.
    NormalWorld(LabeledBytes),
}

#[derive(Debug, Clone)]
pub struct Device {
    name: String,
    compliant_user: bool,
    kernel: Kernel,
    ic: InterruptController,
    ledger: CycleLedger,
    device_key: [u8; 32],
    blob: Option<Vec<u8>>,
    rng: ChaCha20Rng,
    next_irq: u64,
    foreground: Option<String>,
    frame: Vec<u8>,
    observations: Vec<Observation>,
    /// Normal-world apps that registered a global touch listener.
    sniffers: Vec<String>,
}

impl Device {
    /// Secure-world initialization, then hand-off to the normal world.
    pub fn boot(
        config: DeviceConfig,
        fixtures: BootFixtures,
        seed: u64,
    ) -> Result<Self, DeviceError> {
        let mut ledger = CycleLedger::new(config.costs, config.cycles_per_second);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(3);

        let roots = decode_roots(&fixtures.roots)?;
        let root_count = roots.len();
        let mut registry = PeerRegistry::with_roots(roots)?;
        if let Some(pw) = &fixtures.admin_password {
            registry.set_admin_password(config.kernel.suite, pw, &mut rng)?;
        }
        for (doc_type, group) in &fixtures.reserved_doc_types {
            registry.reserve_doc_type(doc_type.clone(), group.clone());
        }
        let owner = fixtures.identity.name().to_string();
        let (repository, origin) = match &fixtures.repository_blob {
            Some(blob) => (
                Repository::open_blob(&fixtures.device_key, blob).map_err(|e| match e {
                    RepoError::CorruptBlob(m) => DeviceError::CorruptRepositoryBlob(m),
                    other => DeviceError::CorruptRepositoryBlob(other.to_string()),
                })?,
                "restored",
            ),
            None => (Repository::new(owner), "empty"),
        };

        let mut kernel = Kernel::new(config.kernel, fixtures.identity, registry, repository, seed);
        let cycles = ledger.charge(CostCategory::BootInit);
        let trace = kernel.trace_mut();
        trace.emit(
            SimTime::ZERO,
            DEVICE,
            TraceEvent::Boot {
                roots: root_count,
                repository: origin.to_string(),
            },
        );
        trace.emit(
            SimTime::ZERO,
            DEVICE,
            TraceEvent::Cycles {
                category: CostCategory::BootInit,
                cycles,
                total: ledger.total(),
            },
        );
        Ok(Self {
            name: config.name,
            compliant_user: config.compliant_user,
            kernel,
            ic: InterruptController::default(),
            ledger,
            device_key: fixtures.device_key,
            blob: fixtures.repository_blob,
            rng,
            next_irq: 0,
            foreground: None,
            frame: Vec::new(),
            observations: Vec::new(),
            sniffers: Vec::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn ledger(&self) -> &CycleLedger {
        &self.ledger
    }

    pub fn interrupts(&self) -> &InterruptController {
        &self.ic
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn blob(&self) -> Option<&[u8]> {
        self.blob.as_deref()
    }

    pub fn compliant_user(&self) -> bool {
        self.compliant_user
    }

    pub fn set_compliant_user(&mut self, compliant: bool) {
        self.compliant_user = compliant;
    }

    pub fn trace_mut(&mut self) -> &mut TraceBuffer {
        self.kernel.trace_mut()
    }

    fn emit(&mut self, now: SimTime, event: TraceEvent) {
        self.kernel.trace_mut().emit(now, DEVICE, event);
    }

    fn charge(&mut self, now: SimTime, category: CostCategory) {
        let cycles = self.ledger.charge(category);
        let total = self.ledger.total();
        self.emit(
            now,
            TraceEvent::Cycles {
                category,
                cycles,
                total,
            },
        );
    }

    fn world_switch(&mut self, now: SimTime, to: World, cause: &str) {
        self.charge(now, CostCategory::WorldSwitch);
        self.emit(
            now,
            TraceEvent::WorldSwitch {
                to,
                cause: cause.to_string(),
            },
        );
    }

    fn raise(&mut self, now: SimTime, source: Peripheral) -> (u64, RouteTarget) {
        let irq = self.next_irq;
        self.next_irq += 1;
        self.emit(now, TraceEvent::InterruptRaised { irq, source });
        (irq, self.ic.route(source))
    }

    fn delivered(&mut self, now: SimTime, irq: u64, source: Peripheral, target: RouteTarget) {
        self.emit(
            now,
            TraceEvent::InterruptDelivered {
                irq,
                source,
                target,
            },
        );
    }

    /// Records bytes crossing into the normal world.
    pub fn observe(&mut self, now: SimTime, observer: &str, channel: Channel, data: LabeledBytes) {
        self.emit(
            now,
            TraceEvent::Observation {
                observer: observer.to_string(),
                channel,
                len: data.len(),
                secret: data.label().is_secret(),
            },
        );
        self.observations.push(Observation {
            time: now,
            device: self.name.clone(),
            observer: observer.to_string(),
            channel,
            data,
        });
    }

    /// Registers `app` as a listener on every touch the normal world gets.
    pub fn add_sniffer(&mut self, app: &str) {
        if !self.sniffers.iter().any(|s| s == app) {
            self.sniffers.push(app.to_string());
        }
    }

    fn sniff(&mut self, now: SimTime, except: &str, data: &LabeledBytes) {
        for s in self.sniffers.clone() {
            if s != except {
                self.observe(now, &s, Channel::Touch, data.clone());
            }
        }
    }

    /// The app that currently owns the normal-world screen and keyboard.
    pub fn set_foreground(&mut self, app: Option<String>) {
        self.foreground = app;
    }

    pub fn foreground(&self) -> Option<&str> {
        self.foreground.as_deref()
    }

    /// What the normal-world foreground app drew last.
    pub fn draw(&mut self, frame: Vec<u8>) {
        self.frame = frame;
    }

    /// The last normal-world frame.
    pub fn frame(&self) -> &[u8] {
        &self.frame
    }

    pub fn press_sak(&mut self, now: SimTime) {
        let (irq, target) = self.raise(now, Peripheral::Sak);
        debug_assert_eq!(target, RouteTarget::SWorld);
        self.delivered(now, irq, Peripheral::Sak, target);
        if self.kernel.mode() == Mode::Normal {
            // One charge covers the whole takeover including its later exit.
            self.charge(now, CostCategory::SakHandling);
            self.ic.claim_touch(TouchState {
                focus: self.foreground.clone(),
                gesture_in_progress: false,
            });
        }
        self.kernel.on_sak_press(now);
        self.sync_sensor_routes(now);
    }

    /// A touch by the user that, from the user's point of view, is meant for
    /// the secure screen.
    pub fn touch(&mut self, now: SimTime, action: UiAction) -> TouchOutcome {
        if self.compliant_user && !self.kernel.led() {
            self.press_sak(now);
        }
        let (irq, target) = self.raise(now, Peripheral::Touch);
        self.delivered(now, irq, Peripheral::Touch, target);
        match target {
            RouteTarget::SWorld => {
                let outcome = self
                    .kernel
                    .on_user_action(now, action)
                    .expect("touch routes to the secure world only in secure-mode");
                self.after_kernel(now);
                TouchOutcome::Secure(outcome)
            }
            _ => {
                let data = typed_content(&action, self.kernel.identity().name());
                let observer = self.foreground.clone().unwrap_or_else(|| "nworld".into());
                self.observe(now, &observer, Channel::Touch, data.clone());
                self.sniff(now, &observer, &data);
                TouchOutcome::NormalWorld(data)
            }
        }
    }

    /// Ordinary typing into a normal-world app. Never enters the secure
    /// world and never switches worlds.
    pub fn nworld_input(&mut self, now: SimTime, app: &str, text: &str) -> Option<LabeledBytes> {
        let (irq, target) = self.raise(now, Peripheral::Touch);
        self.delivered(now, irq, Peripheral::Touch, target);
        if target != RouteTarget::NWorld {
            self.emit(
                now,
                TraceEvent::UserNotice {
                    text: "normal-world input ignored in secure-mode".into(),
                },
            );
            return None;
        }
        let data = LabeledBytes::public(text.as_bytes().to_vec());
        self.observe(now, app, Channel::Touch, data.clone());
        self.sniff(now, app, &data);
        Some(data)
    }

    pub fn sensor_signal(
        &mut self,
        now: SimTime,
        sensor: Sensor,
        observer: &str,
    ) -> Option<LabeledBytes> {
        let decision = self.kernel.sensor_gate(now, sensor);
        self.sync_sensor_routes(now);
        let source = Peripheral::Sensor(sensor);
        let (irq, target) = self.raise(now, source);
        let reading = sample_reading(sensor, now);
        self.emit(
            now,
            TraceEvent::SensorGate {
                sensor,
                reading: irq,
                decision,
            },
        );
        match (decision, target) {
            (GateDecision::Deliver, RouteTarget::NWorld) => {
                self.delivered(now, irq, source, target);
                let data = LabeledBytes::public(reading.into_bytes());
                self.observe(now, observer, Channel::Sensor, data.clone());
                Some(data)
            }
            _ => {
                self.emit(now, TraceEvent::InterruptDropped { irq, source });
                None
            }
        }
    }

    fn sync_sensor_routes(&mut self, now: SimTime) {
        for sensor in Sensor::ALL {
            let target = match self.kernel.sensors().gate(sensor, now) {
                GateDecision::Deliver => RouteTarget::NWorld,
                GateDecision::Drop => RouteTarget::Masked,
            };
            self.ic.remap(Remappable::Sensor(sensor), target);
        }
    }

    /// An application call through the gateway channel. Costs one world
    /// switch in and one out, whatever the outcome.
    pub fn api(
        &mut self,
        now: SimTime,
        app: &str,
        msg: &GatewayMessage,
    ) -> Result<ApiResult, GatewayError> {
        self.world_switch(now, World::Secure, "api_call");
        let parsed = ApiCall::from_message(msg);
        let result = match &parsed {
            Ok(call) => Ok(self.kernel.api_call(now, app, call.clone())),
            Err(e) => {
                self.emit(
                    now,
                    TraceEvent::App {
                        app: app.to_string(),
                        action: "gateway_error".into(),
                        detail: e.to_string(),
                    },
                );
                Err(e.clone())
            }
        };
        self.sync_sensor_routes(now);
        self.world_switch(now, World::Normal, "api_return");
        let response = match &result {
            Ok(r) => r.to_message(),
            Err(e) => GatewayMessage {
                kind: "error".into(),
                request_id: None,
                fields: [("error".to_string(), e.to_string())].into_iter().collect(),
            },
        };
        let bytes = serde_json::to_vec(&response).expect("gateway messages serialize");
        self.observe(now, app, Channel::ApiResult, LabeledBytes::public(bytes));
        result
    }

    pub fn api_call(
        &mut self,
        now: SimTime,
        app: &str,
        call: &ApiCall,
    ) -> Result<ApiResult, GatewayError> {
        self.api(now, app, &call.to_message())
    }

    pub fn tick(&mut self, now: SimTime) {
        let was = self.kernel.mode();
        self.kernel.tick(now);
        if was == Mode::Secure && self.kernel.mode() == Mode::Normal {
            self.on_exit(now);
        }
        self.sync_sensor_routes(now);
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.kernel.next_deadline()
    }

    pub fn exit_secure(&mut self, now: SimTime, cause: ModeCause) -> Result<(), KernelError> {
        self.kernel.exit_secure(now, cause)?;
        self.on_exit(now);
        Ok(())
    }

    fn after_kernel(&mut self, now: SimTime) {
        if self.kernel.mode() == Mode::Normal && self.ic.touch_claimed() {
            self.on_exit(now);
        }
        self.sync_sensor_routes(now);
    }

    fn on_exit(&mut self, now: SimTime) {
        if let Some(state) = self.ic.release_touch() {
            self.foreground = state.focus;
        }
        self.persist(now);
    }

    fn persist(&mut self, now: SimTime) {
        if !self.kernel.take_dirty() {
            return;
        }
        let blob = self.kernel.repository().seal_blob(
            self.kernel.config().suite,
            &self.device_key,
            &mut self.rng,
        );
        self.emit(now, TraceEvent::Persisted { bytes: blob.len() });
        self.blob = Some(blob);
    }

    /// Finished requests ready to be handed to their apps. Each delivery is
    /// an observation by the receiving app.
    pub fn take_completions(&mut self, now: SimTime) -> Vec<ApiResult> {
        if self.kernel.mode() == Mode::Secure {
            return Vec::new();
        }
        let results = self.kernel.take_completions();
        for r in &results {
            let mut data =
                LabeledBytes::public(serde_json::to_vec(&r.to_message()).expect("serializes"));
            if let Some(out) = &r.output {
                // The output travels next to the status; its label carries over.
                data = data.concat(out);
            }
            self.observe(now, &r.app, Channel::ApiResult, data);
        }
        results
    }

    /// Raw read of the storage partition, as privileged normal-world code
    /// could do it.
    pub fn read_storage(&mut self, now: SimTime, observer: &str) -> LabeledBytes {
        let data = LabeledBytes::public(self.blob.clone().unwrap_or_default());
        self.observe(now, observer, Channel::Storage, data.clone());
        data
    }

    /// Screen capture from the normal world. The secure-mode screen is
    /// not readable; the capture returns the last normal-world frame.
    pub fn screen_capture(&mut self, now: SimTime, observer: &str) -> LabeledBytes {
        let data = LabeledBytes::public(self.frame.clone());
        self.observe(now, observer, Channel::Screen, data.clone());
        data
    }

    /// Status of a finished request as seen by the app, for convenience.
    pub fn is_completed(result: &ApiResult) -> bool {
        matches!(result.status, ApiStatus::Completed { .. })
    }
}

/// What a touch carries when it lands in the normal world: anything the user
/// typed is the user's secret.
fn typed_content(action: &UiAction, owner: &str) -> LabeledBytes {
    let typed: Option<Vec<u8>> = match action {
        UiAction::ComposeText { text, .. } => Some(text.as_bytes().to_vec()),
        UiAction::UnlockKey { credential } => Some(credential.as_bytes().to_vec()),
        UiAction::Text { value } => Some(value.as_bytes().to_vec()),
        UiAction::AdminAuthorize { password, .. } => Some(password.as_bytes().to_vec()),
        UiAction::ApproveSignature { fields, .. } => {
            Some(fields.iter().flat_map(|(_, v)| v.bytes()).collect())
        }
        UiAction::RepoWrite { content, .. } => Some(content.clone()),
        _ => None,
    };
    match typed {
        Some(bytes) => LabeledBytes::secret(owner, bytes),
        None => LabeledBytes::public(action.name().as_bytes().to_vec()),
    }
}

#[cfg(test)]
mod tests;
