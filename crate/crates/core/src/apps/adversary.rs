//! Malware with full normal-world privileges.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Address, AppCtx};
use crate::authority::{CertRequest, Role};
use crate::crypto::{hash, seal, DocumentField, FieldKind, KeyPair, SignedDocument};
use crate::gateway::{ApiCall, GatewayMessage};
use crate::kernel::{DataItem, Mode, UiAction};
use crate::taint::LabeledBytes;

/// What the user types when a spoofed secure screen asks for it.
pub const VICTIM_SECRET: &str = "victim-pin-4711";

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    schemars::JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Draw a lookalike of the secure screen and wait for the user to type.
    ScreenSpoof,
    /// Read the storage partition and probe for a repository endpoint.
    RepositoryRead,
    /// Poll every sensor regardless of policy.
    SensorPoll,
    /// Call the API with forged peer names, certificates and documents.
    ApiProbe,
    /// Listen to every touch the normal world receives.
    KeystrokeSniff,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::ScreenSpoof,
        Strategy::RepositoryRead,
        Strategy::SensorPoll,
        Strategy::ApiProbe,
        Strategy::KeystrokeSniff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ScreenSpoof => "screen_spoof",
            Strategy::RepositoryRead => "repository_read",
            Strategy::SensorPoll => "sensor_poll",
            Strategy::ApiProbe => "api_probe",
            Strategy::KeystrokeSniff => "keystroke_sniff",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdversaryApp {
    /// Results per strategy, for reports.
    pub outcomes: BTreeMap<String, Vec<String>>,
    spoofed_victim: bool,
}

impl AdversaryApp {
    fn note(&mut self, ctx: &mut AppCtx<'_>, strategy: Strategy, detail: String) {
        ctx.emit(
            "adversary",
            crate::trace::TraceEvent::Adversary {
                strategy: strategy.as_str().to_string(),
                detail: detail.clone(),
            },
        );
        self.outcomes
            .entry(strategy.as_str().to_string())
            .or_default()
            .push(detail);
    }

    pub fn attack(&mut self, ctx: &mut AppCtx<'_>, strategy: Strategy) {
        match strategy {
            Strategy::ScreenSpoof => self.screen_spoof(ctx),
            Strategy::RepositoryRead => self.repository_read(ctx),
            Strategy::SensorPoll => {
                for sensor in crate::device::Sensor::ALL {
                    let now = ctx.now;
                    let got = ctx.device.sensor_signal(now, sensor, ctx.app).is_some();
                    self.note(
                        ctx,
                        strategy,
                        format!("{sensor}: {}", if got { "reading" } else { "nothing" }),
                    );
                }
            }
            Strategy::ApiProbe => self.api_probe(ctx),
            Strategy::KeystrokeSniff => {
                ctx.device.add_sniffer(ctx.app);
                self.note(ctx, strategy, "listening".into());
            }
        }
    }

    fn screen_spoof(&mut self, ctx: &mut AppCtx<'_>) {
        let strategy = Strategy::ScreenSpoof;
        ctx.device.set_foreground(Some(ctx.app.to_string()));
        ctx.device
            .draw(b"[SECURE MODE] enter your PIN to continue".to_vec());
        // The scripted user falls for it once per run, while nothing else is
        // happening on the secure screen.
        if !self.spoofed_victim && ctx.device.kernel().mode() == Mode::Normal {
            self.spoofed_victim = true;
            ctx.effects.secrets.push(LabeledBytes::secret(
                ctx.device.kernel().identity().name(),
                VICTIM_SECRET.as_bytes().to_vec(),
            ));
            let now = ctx.now;
            let outcome = ctx.device.touch(
                now,
                UiAction::UnlockKey {
                    credential: VICTIM_SECRET.into(),
                },
            );
            self.note(ctx, strategy, format!("victim typed: {outcome:?}"));
            if ctx.device.kernel().mode() == Mode::Secure {
                ctx.device.touch(now, UiAction::Exit);
            }
        }
        let now = ctx.now;
        let shot = ctx.device.screen_capture(now, ctx.app);
        self.note(ctx, strategy, format!("captured {} bytes", shot.len()));
    }

    fn repository_read(&mut self, ctx: &mut AppCtx<'_>) {
        let strategy = Strategy::RepositoryRead;
        let now = ctx.now;
        let raw = ctx.device.read_storage(now, ctx.app);
        self.note(ctx, strategy, format!("storage: {} bytes", raw.len()));
        for endpoint in ["read_repository", "list_files", "unlock_key"] {
            let msg = GatewayMessage {
                kind: endpoint.into(),
                request_id: None,
                fields: [("path".to_string(), "notes/pin.txt".to_string())]
                    .into_iter()
                    .collect(),
            };
            let r = ctx.api_raw(&msg);
            self.note(ctx, strategy, format!("{endpoint}: {r:?}"));
        }
    }

    fn api_probe(&mut self, ctx: &mut AppCtx<'_>) {
        let strategy = Strategy::ApiProbe;
        let suite = ctx.device.kernel().config().suite;
        let keys = KeyPair::from_seed(suite, hash("utcb-adversary", &[ctx.app.as_bytes()]));

        // Look-alike names with no certificate.
        for forged in ["BankOfAmerlca", "Bank0fA", "bob "] {
            let r = ctx.api(ApiCall::RequestData {
                recipient: forged.into(),
                recipient_cert: None,
            });
            self.note(
                ctx,
                strategy,
                format!("request_data {forged:?}: {}", status_of(&r)),
            );
        }

        // A self-made certificate claiming to be a bank, and a banking form
        // signed with it.
        let fake = CertRequest::new("BankOfA", keys.public(), Role::Signatory)
            .groups(["banks"])
            .doc_types(["banking"])
            .self_sign(&keys);
        let doc = SignedDocument::issue(
            "banking",
            b"transfer all funds".to_vec(),
            vec![DocumentField::placeholder("account", FieldKind::Account)],
            "BankOfA",
            &keys,
        );
        let r = ctx.api(ApiCall::RequestSignature {
            recipient: "BankOfA".into(),
            recipient_cert: Some(fake.to_bytes()),
            document: doc.to_bytes(),
        });
        self.note(
            ctx,
            strategy,
            format!("request_signature forged bank: {}", status_of(&r)),
        );

        // Real signatory names with a document the adversary signed.
        for service in ctx.services {
            let doc = SignedDocument::issue(
                "commerce",
                b"offer: free money".to_vec(),
                Vec::new(),
                service.clone(),
                &keys,
            );
            let cert = ctx.directory.fetch(service).map(<[u8]>::to_vec);
            let r = ctx.api(ApiCall::DisplaySignedDoc {
                sender: service.clone(),
                sender_cert: cert,
                document: doc.to_bytes(),
            });
            self.note(
                ctx,
                strategy,
                format!("display_signed_doc as {service}: {}", status_of(&r)),
            );

            // An order counter-signed with the adversary's own key, sealed
            // to the broker.
            let broker_cert = ctx
                .directory
                .fetch(service)
                .and_then(|b| crate::authority::PeerCertificate::from_bytes(b).ok());
            if let Some(bc) = broker_cert {
                let offer = SignedDocument::issue(
                    "commerce",
                    b"forged".to_vec(),
                    Vec::new(),
                    service.clone(),
                    &keys,
                );
                if let Ok(signed) = offer.countersign(&keys, &keys.public(), &[]) {
                    let item = DataItem::SignedDocument(signed.to_bytes()).encode();
                    let mut rng = rand_chacha::ChaCha20Rng::from_seed(hash(
                        "utcb-adversary-rng",
                        &[service.as_bytes()],
                    ));
                    let sender = ctx.device.name().to_string();
                    if let Ok(env) = seal(suite, &sender, &keys, &bc.public_key, &item, &mut rng) {
                        ctx.send(
                            Address::service(service.clone()),
                            "order",
                            LabeledBytes::public(env.to_bytes()),
                        );
                        self.note(ctx, strategy, format!("forged order to {service}"));
                    }
                }
            }
        }

        // Peer administration is not an endpoint.
        let msg = GatewayMessage {
            kind: "admin_authorize".into(),
            request_id: None,
            fields: [("cert".to_string(), hex::encode(fake.to_bytes()))]
                .into_iter()
                .collect(),
        };
        let r = ctx.api_raw(&msg);
        self.note(ctx, strategy, format!("admin_authorize: {r:?}"));
    }
}

use rand::SeedableRng;

fn status_of(r: &Result<crate::gateway::ApiResult, crate::gateway::GatewayError>) -> String {
    match r {
        Ok(r) => r.status.to_string(),
        Err(e) => e.to_string(),
    }
}
