use serde::{Deserialize, Serialize};

use super::{Address, AppCtx, NetMessage};
use crate::gateway::{ApiCall, ApiResult, ApiStatus};
use crate::taint::LabeledBytes;
use crate::time::{SimTime, MINUTE};
use crate::trace::TraceEvent;

pub const DEFAULT_RECEIPT_DEADLINE: u64 = 10 * MINUTE;

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    Serialize,
    Deserialize,
    schemars::JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum PaymentPhase {
    Offer,
    Payment,
    Confirmation,
    Revoked,
    Done,
}

impl PaymentPhase {
    /// Allowed transitions: forward along Offer, Payment, Confirmation,
    /// Done, plus Confirmation to Revoked.
    pub fn can_advance_to(self, next: PaymentPhase) -> bool {
        use PaymentPhase::*;
        matches!(
            (self, next),
            (Offer, Payment)
                | (Payment, Confirmation)
                | (Confirmation, Done)
                | (Confirmation, Revoked)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentSession {
    pub id: u64,
    pub phase: PaymentPhase,
    pub brokers: Vec<String>,
    pub choose: Option<String>,
    pub broker: Option<String>,
    pub offer: Option<Vec<u8>>,
    pub sign_request: Option<u64>,
    pub receipt_request: Option<u64>,
    pub order: Option<LabeledBytes>,
    pub receipt: Option<Vec<u8>>,
    pub receipt_deadline: Option<SimTime>,
}

#[derive(Debug, Clone)]
pub struct PaymentApp {
    pub receipt_deadline: u64,
    /// Where revocation notices go; defaults to the broker.
    pub bank: Option<String>,
    sessions: Vec<PaymentSession>,
}

impl Default for PaymentApp {
    fn default() -> Self {
        Self::new(DEFAULT_RECEIPT_DEADLINE, None)
    }
}

impl PaymentApp {
    pub fn new(receipt_deadline: u64, bank: Option<String>) -> Self {
        Self {
            receipt_deadline,
            bank,
            sessions: Vec::new(),
        }
    }

    pub fn sessions(&self) -> &[PaymentSession] {
        &self.sessions
    }

    fn advance(ctx: &mut AppCtx<'_>, s: &mut PaymentSession, next: PaymentPhase) {
        assert!(
            s.phase.can_advance_to(next),
            "payment phase {:?} -> {next:?}",
            s.phase
        );
        s.phase = next;
        ctx.emit(
            "payment",
            TraceEvent::PaymentPhase {
                session: s.id,
                phase: next,
            },
        );
    }

    pub fn pay(&mut self, ctx: &mut AppCtx<'_>, brokers: &[String], choose: Option<&str>) {
        let id = self.sessions.len() as u64 + 1;
        let session = PaymentSession {
            id,
            phase: PaymentPhase::Offer,
            brokers: brokers.to_vec(),
            choose: choose.map(str::to_string),
            broker: None,
            offer: None,
            sign_request: None,
            receipt_request: None,
            order: None,
            receipt: None,
            receipt_deadline: None,
        };
        ctx.emit(
            "payment",
            TraceEvent::PaymentPhase {
                session: id,
                phase: PaymentPhase::Offer,
            },
        );
        for b in brokers {
            ctx.send(
                Address::service(b.clone()),
                "offer_request",
                LabeledBytes::public(id.to_be_bytes().to_vec()),
            );
        }
        self.sessions.push(session);
    }

    fn session_mut(
        &mut self,
        pred: impl Fn(&PaymentSession) -> bool,
    ) -> Option<&mut PaymentSession> {
        self.sessions.iter_mut().find(|s| pred(s))
    }

    pub fn on_network(&mut self, ctx: &mut AppCtx<'_>, msg: &NetMessage) {
        let from = msg.from.node.clone();
        match msg.kind.as_str() {
            "offer" => {
                let Some(s) = self.session_mut(|s| {
                    s.phase == PaymentPhase::Offer
                        && s.sign_request.is_none()
                        && s.brokers.contains(&from)
                        && s.choose.as_ref().is_none_or(|c| *c == from)
                }) else {
                    ctx.log("offer_ignored", from);
                    return;
                };
                let cert = ctx.directory.fetch(&from).map(<[u8]>::to_vec);
                match ctx.api(ApiCall::RequestSignature {
                    recipient: from.clone(),
                    recipient_cert: cert,
                    document: msg.payload.bytes().to_vec(),
                }) {
                    Ok(r) if r.status == ApiStatus::Pending => {
                        s.broker = Some(from);
                        s.offer = Some(msg.payload.bytes().to_vec());
                        s.sign_request = Some(r.request_id);
                        Self::advance(ctx, s, PaymentPhase::Payment);
                    }
                    Ok(r) => ctx.log("offer_rejected", format!("`{from}`: {}", r.status)),
                    Err(e) => ctx.log("gateway_error", e.to_string()),
                }
            }
            "receipt" => {
                let Some(s) = self.session_mut(|s| {
                    s.phase == PaymentPhase::Confirmation
                        && s.broker.as_deref() == Some(from.as_str())
                        && s.receipt.is_none()
                }) else {
                    ctx.log("receipt_ignored", from);
                    return;
                };
                s.receipt = Some(msg.payload.bytes().to_vec());
                let cert = ctx.directory.fetch(&from).map(<[u8]>::to_vec);
                match ctx.api(ApiCall::DisplaySignedDoc {
                    sender: from.clone(),
                    sender_cert: cert,
                    document: msg.payload.bytes().to_vec(),
                }) {
                    Ok(r) if r.status == ApiStatus::Pending => {
                        s.receipt_request = Some(r.request_id)
                    }
                    Ok(r) => ctx.log("receipt_rejected", format!("`{from}`: {}", r.status)),
                    Err(e) => ctx.log("gateway_error", e.to_string()),
                }
            }
            other => ctx.log("ignored_message", other.to_string()),
        }
    }

    pub fn on_result(&mut self, ctx: &mut AppCtx<'_>, result: &ApiResult) {
        let deadline = self.receipt_deadline;
        let id = result.request_id;
        if let Some(s) = self.session_mut(|s| s.sign_request == Some(id)) {
            match (&result.status, &result.output) {
                (ApiStatus::Completed { .. }, Some(order)) => {
                    let broker = s.broker.clone().expect("broker chosen with the offer");
                    s.order = Some(order.clone());
                    ctx.send(Address::service(broker), "order", order.clone());
                    let due = ctx.now + deadline;
                    s.receipt_deadline = Some(due);
                    ctx.timer(due, s.id);
                    Self::advance(ctx, s, PaymentPhase::Confirmation);
                }
                (status, _) => ctx.log("payment_not_approved", status.to_string()),
            }
        } else if let Some(s) = self.session_mut(|s| s.receipt_request == Some(id)) {
            match &result.status {
                ApiStatus::Completed { .. } => Self::advance(ctx, s, PaymentPhase::Done),
                status => ctx.log("receipt_not_shown", status.to_string()),
            }
        }
    }

    pub fn on_timer(&mut self, ctx: &mut AppCtx<'_>, token: u64) {
        let bank = self.bank.clone();
        let Some(s) = self.session_mut(|s| s.id == token) else {
            return;
        };
        if s.phase != PaymentPhase::Confirmation || s.receipt.is_some() {
            return;
        }
        Self::advance(ctx, s, PaymentPhase::Revoked);
        let to = bank.or_else(|| s.broker.clone()).expect("broker chosen");
        ctx.send(
            Address::service(to.clone()),
            "revoke",
            LabeledBytes::public(s.id.to_be_bytes().to_vec()),
        );
        ctx.log("revocation_notice", to);
    }
}
