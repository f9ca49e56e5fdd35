use std::collections::BTreeMap;

use super::{Address, Directory, NetMessage};
use crate::authority::PeerCertificate;
use crate::crypto::{
    open, verify_countersigned, CipherSuite, DocumentField, Envelope, FieldKind, KeyPair,
    PublicKey, SignedDocument,
};
use crate::kernel::DataItem;
use crate::taint::LabeledBytes;
use crate::time::SimTime;
use crate::trace::{TraceBuffer, TraceEvent};

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub name: String,
    pub doc_type: String,
    pub withhold_receipt: bool,
    pub suite: CipherSuite,
}

/// A signatory peer (broker or bank) running as an in-process service.
#[derive(Debug, Clone)]
pub struct Broker {
    config: BrokerConfig,
    keys: KeyPair,
    cert: PeerCertificate,
    /// Signing keys users registered with this broker.
    registered: BTreeMap<String, PublicKey>,
    offers: Vec<Vec<u8>>,
    issued: u64,
    verified_orders: Vec<(String, SignedDocument)>,
    revocations: u32,
}

impl Broker {
    pub fn new(config: BrokerConfig, keys: KeyPair, cert: PeerCertificate) -> Self {
        Self {
            config,
            keys,
            cert,
            registered: BTreeMap::new(),
            offers: Vec::new(),
            issued: 0,
            verified_orders: Vec::new(),
            revocations: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn cert(&self) -> &PeerCertificate {
        &self.cert
    }

    pub fn register_user(&mut self, user: impl Into<String>, signing_key: PublicKey) {
        self.registered.insert(user.into(), signing_key);
    }

    pub fn verified_orders(&self) -> &[(String, SignedDocument)] {
        &self.verified_orders
    }

    pub fn revocations(&self) -> u32 {
        self.revocations
    }

    fn log(&self, trace: &mut TraceBuffer, now: SimTime, event: &str, detail: impl Into<String>) {
        trace.emit(
            now,
            "service",
            TraceEvent::Service {
                service: self.config.name.clone(),
                action: event.to_string(),
                detail: detail.into(),
            },
        );
    }

    fn reply(&self, to: &Address, kind: &str, payload: Vec<u8>) -> NetMessage {
        NetMessage {
            from: Address::service(self.config.name.clone()),
            to: to.clone(),
            kind: kind.to_string(),
            payload: LabeledBytes::public(payload),
        }
    }

    pub fn on_message(
        &mut self,
        now: SimTime,
        msg: &NetMessage,
        directory: &Directory,
        trace: &mut TraceBuffer,
    ) -> Vec<NetMessage> {
        match msg.kind.as_str() {
            "offer_request" => {
                self.issued += 1;
                let n = self.issued;
                let body = format!("offer {}-{n}: ACME x10 @ 12.50", self.config.name);
                let doc = SignedDocument::issue(
                    self.config.doc_type.clone(),
                    body.as_bytes().to_vec(),
                    vec![
                        DocumentField::placeholder("name", FieldKind::Name),
                        DocumentField::placeholder("account", FieldKind::Account),
                    ],
                    self.config.name.clone(),
                    &self.keys,
                );
                self.offers.push(doc.body.clone());
                self.log(trace, now, "offer_issued", body);
                vec![self.reply(&msg.from, "offer", doc.to_bytes())]
            }
            "order" => match self.check_order(&msg.from.node, msg.payload.bytes(), directory) {
                Ok(doc) => {
                    // Each offer can be ordered once; a replayed order finds it gone.
                    self.offers.retain(|b| *b != doc.body);
                    self.log(
                        trace,
                        now,
                        "order_verified",
                        format!("from `{}`", msg.from.node),
                    );
                    let receipt_body = format!("receipt: {}", String::from_utf8_lossy(&doc.body));
                    self.verified_orders.push((msg.from.node.clone(), doc));
                    if self.config.withhold_receipt {
                        self.log(trace, now, "receipt_withheld", msg.from.node.clone());
                        return Vec::new();
                    }
                    let receipt = SignedDocument::issue(
                        self.config.doc_type.clone(),
                        receipt_body.into_bytes(),
                        Vec::new(),
                        self.config.name.clone(),
                        &self.keys,
                    );
                    vec![self.reply(&msg.from, "receipt", receipt.to_bytes())]
                }
                Err(reason) => {
                    self.log(trace, now, "order_rejected", reason);
                    Vec::new()
                }
            },
            "revoke" => {
                self.revocations += 1;
                self.log(trace, now, "revocation_received", msg.from.node.clone());
                Vec::new()
            }
            other => {
                self.log(trace, now, "ignored_message", other.to_string());
                Vec::new()
            }
        }
    }

    /// Opens the sealed order and checks the counter-signature against the
    /// key the user registered.
    fn check_order(
        &self,
        sender: &str,
        payload: &[u8],
        directory: &Directory,
    ) -> Result<SignedDocument, String> {
        let sender_cert = directory
            .fetch(sender)
            .ok_or_else(|| format!("no certificate for `{sender}`"))
            .and_then(|b| PeerCertificate::from_bytes(b).map_err(|e| e.to_string()))?;
        let env = Envelope::from_bytes(payload).map_err(|e| e.to_string())?;
        let plaintext = open(
            self.config.suite,
            &self.keys,
            sender,
            &sender_cert.public_key,
            &env,
        )
        .map_err(|e| e.to_string())?;
        let DataItem::SignedDocument(bytes) =
            DataItem::decode(&plaintext).map_err(|e| e.to_string())?
        else {
            return Err("order is not a signed document".into());
        };
        let doc = SignedDocument::from_bytes(&bytes).map_err(|e| e.to_string())?;
        if doc.originator_name != self.config.name || !self.offers.contains(&doc.body) {
            return Err("order does not match an open offer".into());
        }
        let user_key = self
            .registered
            .get(sender)
            .ok_or_else(|| format!("`{sender}` has no registered key"))?;
        if !verify_countersigned(user_key, &self.cert.public_key, &doc) {
            return Err("counter-signature does not verify".into());
        }
        Ok(doc)
    }
}
