use std::collections::BTreeMap;

use serde::Serialize;

use super::{Address, AppCtx, NetMessage};
use crate::gateway::{ApiCall, ApiResult, ApiStatus};
use crate::taint::LabeledBytes;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ContactState {
    pub secure_default: bool,
    pub sent: u32,
    pub received: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pending {
    Outgoing(String),
    Incoming(String),
}

/// Secure messaging. The app never sees message text on the secure path;
/// it only relays envelopes.
#[derive(Debug, Clone, Default)]
pub struct MessagingApp {
    contacts: BTreeMap<String, ContactState>,
    pending: BTreeMap<u64, Pending>,
    pub outbox: Vec<LabeledBytes>,
    pub inbox: Vec<LabeledBytes>,
}

impl MessagingApp {
    pub fn contact(&self, name: &str) -> Option<&ContactState> {
        self.contacts.get(name)
    }

    pub fn send(
        &mut self,
        ctx: &mut AppCtx<'_>,
        to: &str,
        text: Option<&str>,
        secure: bool,
        override_alert: bool,
    ) {
        if !secure {
            let secure_default = self.contacts.get(to).is_some_and(|c| c.secure_default);
            if secure_default && !override_alert {
                ctx.log(
                    "plaintext_alert",
                    format!("`{to}` normally receives secure messages; send withheld"),
                );
                return;
            }
            let text = text.unwrap_or_default();
            let typed = ctx.device.nworld_input(ctx.now, ctx.app, text);
            match typed {
                Some(payload) => {
                    ctx.send(Address::app(to, ctx.app.to_string()), "plain_msg", payload);
                    ctx.log("plain_sent", to.to_string());
                }
                None => ctx.log("input_unavailable", to.to_string()),
            }
            return;
        }
        let Some(cert) = ctx.directory.fetch(to).map(<[u8]>::to_vec) else {
            ctx.log("unknown_contact", to.to_string());
            return;
        };
        match ctx.api(ApiCall::RequestData {
            recipient: to.to_string(),
            recipient_cert: Some(cert),
        }) {
            Ok(r) if r.status == ApiStatus::Pending => {
                self.pending
                    .insert(r.request_id, Pending::Outgoing(to.to_string()));
                ctx.log(
                    "awaiting_secure_mode",
                    format!("request {} to `{to}`", r.request_id),
                );
            }
            Ok(r) => ctx.log("certificate_invalid", format!("`{to}`: {}", r.status)),
            Err(e) => ctx.log("gateway_error", e.to_string()),
        }
    }

    pub fn on_result(&mut self, ctx: &mut AppCtx<'_>, result: &ApiResult) {
        let Some(p) = self.pending.remove(&result.request_id) else {
            return;
        };
        match (p, &result.status) {
            (Pending::Outgoing(to), ApiStatus::Completed { .. }) => {
                let Some(envelope) = result.output.clone() else {
                    ctx.log("missing_output", to);
                    return;
                };
                self.outbox.push(envelope.clone());
                ctx.send(
                    Address::app(to.clone(), ctx.app.to_string()),
                    "secure_msg",
                    envelope,
                );
                let c = self.contacts.entry(to.clone()).or_default();
                c.secure_default = true;
                c.sent += 1;
                ctx.log("secure_sent", to);
            }
            (Pending::Incoming(from), ApiStatus::Completed { .. }) => {
                self.contacts.entry(from.clone()).or_default().received += 1;
                ctx.log("secure_displayed", from);
            }
            (p, status) => ctx.log("request_finished", format!("{p:?}: {status}")),
        }
    }

    pub fn on_network(&mut self, ctx: &mut AppCtx<'_>, msg: &NetMessage) {
        let from = msg.from.node.clone();
        match msg.kind.as_str() {
            "secure_msg" => {
                self.inbox.push(msg.payload.clone());
                let cert = ctx.directory.fetch(&from).map(<[u8]>::to_vec);
                match ctx.api(ApiCall::DisplayMessage {
                    sender: from.clone(),
                    sender_cert: cert,
                    envelope: msg.payload.bytes().to_vec(),
                }) {
                    Ok(r) if r.status == ApiStatus::Pending => {
                        self.pending
                            .insert(r.request_id, Pending::Incoming(from.clone()));
                        self.contacts
                            .entry(from.clone())
                            .or_default()
                            .secure_default = true;
                        ctx.log("secure_received", from);
                    }
                    Ok(r) => ctx.log("message_rejected", format!("from `{from}`: {}", r.status)),
                    Err(e) => ctx.log("gateway_error", e.to_string()),
                }
            }
            "plain_msg" => {
                self.inbox.push(msg.payload.clone());
                ctx.log(
                    "plain_received",
                    String::from_utf8_lossy(msg.payload.bytes()).into_owned(),
                );
            }
            other => ctx.log("ignored_message", other.to_string()),
        }
    }
}
