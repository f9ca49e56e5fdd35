//! Normal-world applications and in-process service peers.
//!
//! Apps hold no secrets. They call the gateway, relay what it returns, and
//! react to network messages and timers. Everything they do goes through an
//! [`AppCtx`], which the simulator turns into scheduled events.

mod adversary;
mod broker;
mod messaging;
mod network;
mod payment;
mod sensor_app;

use serde::{Deserialize, Serialize};

use crate::device::{Device, Sensor};
use crate::gateway::{ApiCall, ApiResult, GatewayError, GatewayMessage};
use crate::taint::LabeledBytes;
use crate::time::SimTime;
use crate::trace::TraceEvent;

pub use adversary::{AdversaryApp, Strategy, VICTIM_SECRET};
pub use broker::{Broker, BrokerConfig};
pub use messaging::{ContactState, MessagingApp};
pub use network::{Address, Directory, NetMessage, NetworkConfig, SimNetwork};
pub use payment::{PaymentApp, PaymentPhase, PaymentSession, DEFAULT_RECEIPT_DEADLINE};
pub use sensor_app::SensorApp;

/// Things an app asked for that the simulator must schedule.
#[derive(Debug, Default)]
pub struct Effects {
    pub sends: Vec<NetMessage>,
    /// (time, app, token)
    pub timers: Vec<(SimTime, String, u64)>,
    /// Secrets the scripted user handed to something, for the content scan.
    pub secrets: Vec<LabeledBytes>,
}

pub struct AppCtx<'a> {
    pub now: SimTime,
    pub app: &'a str,
    pub device: &'a mut Device,
    pub directory: &'a Directory,
    pub services: &'a [String],
    pub effects: &'a mut Effects,
}

impl AppCtx<'_> {
    pub fn api(&mut self, call: ApiCall) -> Result<ApiResult, GatewayError> {
        self.device.api_call(self.now, self.app, &call)
    }

    pub fn api_raw(&mut self, msg: &GatewayMessage) -> Result<ApiResult, GatewayError> {
        self.device.api(self.now, self.app, msg)
    }

    pub fn send(&mut self, to: Address, kind: &str, payload: LabeledBytes) {
        let from = Address::app(self.device.name(), self.app);
        self.effects.sends.push(NetMessage {
            from,
            to,
            kind: kind.to_string(),
            payload,
        });
    }

    pub fn timer(&mut self, at: SimTime, token: u64) {
        self.effects.timers.push((at, self.app.to_string(), token));
    }

    pub fn log(&mut self, event: &str, detail: impl Into<String>) {
        let ev = TraceEvent::App {
            app: self.app.to_string(),
            action: event.to_string(),
            detail: detail.into(),
        };
        self.device.trace_mut().emit(self.now, "app", ev);
    }

    pub fn emit(&mut self, component: &'static str, event: TraceEvent) {
        self.device.trace_mut().emit(self.now, component, event);
    }
}

/// A step an app performs because the user (or its own logic) asked it to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum AppCommand {
    SendMessage {
        to: String,
        #[serde(default)]
        text: Option<String>,
        #[serde(default = "yes")]
        secure: bool,
        #[serde(default)]
        override_alert: bool,
    },
    Pay {
        brokers: Vec<String>,
        #[serde(default)]
        choose: Option<String>,
    },
    RequestSensor {
        sensor: Sensor,
    },
    ReadSensor {
        sensor: Sensor,
    },
    Attack {
        strategy: Strategy,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone)]
pub enum App {
    Messaging(MessagingApp),
    Payment(PaymentApp),
    Sensor(SensorApp),
    Adversary(AdversaryApp),
}

impl App {
    pub fn kind(&self) -> &'static str {
        match self {
            App::Messaging(_) => "messaging",
            App::Payment(_) => "payment",
            App::Sensor(_) => "sensor",
            App::Adversary(_) => "adversary",
        }
    }

    pub fn on_command(&mut self, ctx: &mut AppCtx<'_>, cmd: &AppCommand) {
        match (self, cmd) {
            (
                App::Messaging(a),
                AppCommand::SendMessage {
                    to,
                    text,
                    secure,
                    override_alert,
                },
            ) => a.send(ctx, to, text.as_deref(), *secure, *override_alert),
            (App::Payment(a), AppCommand::Pay { brokers, choose }) => {
                a.pay(ctx, brokers, choose.as_deref())
            }
            (App::Sensor(a), AppCommand::RequestSensor { sensor }) => a.request(ctx, *sensor),
            (App::Sensor(a), AppCommand::ReadSensor { sensor }) => a.read(ctx, *sensor),
            (App::Adversary(a), AppCommand::Attack { strategy }) => a.attack(ctx, *strategy),
            (_, cmd) => ctx.log("unsupported_command", format!("{cmd:?}")),
        }
    }

    pub fn on_result(&mut self, ctx: &mut AppCtx<'_>, result: &ApiResult) {
        match self {
            App::Messaging(a) => a.on_result(ctx, result),
            App::Payment(a) => a.on_result(ctx, result),
            App::Sensor(a) => a.on_result(ctx, result),
            App::Adversary(_) => {}
        }
    }

    pub fn on_network(&mut self, ctx: &mut AppCtx<'_>, msg: &NetMessage) {
        match self {
            App::Messaging(a) => a.on_network(ctx, msg),
            App::Payment(a) => a.on_network(ctx, msg),
            App::Sensor(_) | App::Adversary(_) => ctx.log("ignored_message", msg.kind.clone()),
        }
    }

    pub fn on_timer(&mut self, ctx: &mut AppCtx<'_>, token: u64) {
        if let App::Payment(a) = self {
            a.on_timer(ctx, token);
        }
    }
}
