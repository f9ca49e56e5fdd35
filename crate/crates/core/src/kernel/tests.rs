use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::authority::decode_roots;
use crate::crypto::{open, seal, DocumentField, FieldKind};
use crate::fixtures::{provision, Pki, UserSpec};
use crate::gateway::ApiCall;

const PIN: &str = "2468";

struct Rig {
    pki: Pki,
    kernel: Kernel,
}

fn rig(config: KernelConfig) -> Rig {
    let pki = Pki::new(CipherSuite::Test, 11);
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let user = UserSpec::new("alice", PIN)
        .file("notes/for-bob.txt", b"meet at noon", &["bob"])
        .file("notes/private.txt", b"only mine", &[]);
    let f = provision(&pki, &user, &mut rng);
    let mut registry = PeerRegistry::with_roots(decode_roots(&f.roots).unwrap()).unwrap();
    for (t, g) in &f.reserved_doc_types {
        registry.reserve_doc_type(t.clone(), g.clone());
    }
    let repo = Repository::open_blob(&f.device_key, f.repository_blob.as_ref().unwrap()).unwrap();
    let kernel = Kernel::new(config, f.identity, registry, repo, 11);
    Rig { pki, kernel }
}

fn quiet() -> KernelConfig {
    KernelConfig {
        training_entries: 0,
        ..KernelConfig::default()
    }
}

fn t(ms: u64) -> SimTime {
    SimTime(ms)
}

fn events(k: &mut Kernel) -> Vec<TraceEvent> {
    k.trace_mut().events().cloned().collect()
}

impl Rig {
    fn cert_bytes(&self, name: &str) -> Vec<u8> {
        match name {
            "b1" => self.pki.broker(name).0.to_bytes(),
            "BankOfA" => self.pki.bank(name).0.to_bytes(),
            _ => self.pki.contact(name, &["friends"]).0.to_bytes(),
        }
    }

    fn request_data(&mut self, now: SimTime, to: &str) -> ApiResult {
        let cert = self.cert_bytes(to);
        self.kernel.api_call(
            now,
            "msg",
            ApiCall::RequestData {
                recipient: to.into(),
                recipient_cert: Some(cert),
            },
        )
    }

    fn offer(&self, from: &str, doc_type: &str) -> SignedDocument {
        let keys = self.pki.keys_for(from);
        SignedDocument::issue(
            doc_type,
            b"ACME x10".to_vec(),
            vec![DocumentField::placeholder("account", FieldKind::Account)],
            from,
            &keys,
        )
    }

    fn act(&mut self, now: SimTime, a: UiAction) -> ActionOutcome {
        self.kernel.on_user_action(now, a).unwrap()
    }
}

#[test]
fn sak_enters_secure_mode_and_lights_led() {
    let mut r = rig(quiet());
    assert_eq!(r.kernel.mode(), Mode::Normal);
    assert!(!r.kernel.led());
    r.kernel.on_sak_press(t(10));
    assert_eq!(r.kernel.mode(), Mode::Secure);
    assert!(r.kernel.led());
    assert!(r.kernel.present_menu().is_ok());
    assert_eq!(r.act(t(20), UiAction::Exit), ActionOutcome::Exited);
    assert_eq!(r.kernel.mode(), Mode::Normal);
    assert!(!r.kernel.led());
}

#[test]
fn exit_when_normal_is_an_error() {
    let mut r = rig(quiet());
    assert_eq!(
        r.kernel.exit_secure(t(0), ModeCause::ExitButton),
        Err(KernelError::NotInSecureMode)
    );
    r.kernel.on_sak_press(t(1));
    r.kernel.exit_secure(t(2), ModeCause::ExitButton).unwrap();
    assert_eq!(
        r.kernel.exit_secure(t(3), ModeCause::ExitButton),
        Err(KernelError::NotInSecureMode)
    );
    assert_eq!(
        r.kernel.on_user_action(t(4), UiAction::RepoList),
        Err(KernelError::NotInSecureMode)
    );
    assert!(r.kernel.present_menu().is_err());
}

#[test]
fn unlit_entry_requires_a_second_press() {
    let mut r = rig(KernelConfig {
        suppression_prob: 1.0,
        training_entries: 2,
        ..KernelConfig::default()
    });
    r.kernel.on_sak_press(t(0));
    assert_eq!(r.kernel.mode(), Mode::Secure);
    assert!(!r.kernel.led());
    assert_eq!(
        r.act(t(1), UiAction::RepoList),
        ActionOutcome::NegativeFeedback
    );
    let ev = events(&mut r.kernel);
    assert!(ev
        .iter()
        .any(|e| matches!(e, TraceEvent::NegativeFeedback { .. })));
    assert!(ev.iter().any(|e| matches!(e, TraceEvent::LedBlink)));

    r.kernel.on_sak_press(t(2));
    assert!(r.kernel.led());
    assert_eq!(r.act(t(3), UiAction::RepoList), ActionOutcome::Done);
    r.act(t(4), UiAction::Exit);

    // Exit is always allowed, even before the re-press.
    r.kernel.on_sak_press(t(5));
    assert!(!r.kernel.led());
    assert_eq!(r.act(t(6), UiAction::Exit), ActionOutcome::Exited);

    // Past the training window the LED always lights.
    r.kernel.on_sak_press(t(7));
    assert!(r.kernel.led());
    assert_eq!(r.kernel.entries(), 3);
}

#[test]
fn suppression_rate_follows_probability() {
    let mut r = rig(KernelConfig {
        suppression_prob: 0.1,
        training_entries: 2000,
        ..KernelConfig::default()
    });
    let mut suppressed = 0;
    for i in 0..2000 {
        r.kernel.on_sak_press(t(i * 10));
        if !r.kernel.led() {
            suppressed += 1;
        }
        r.kernel
            .exit_secure(t(i * 10 + 1), ModeCause::ExitButton)
            .unwrap();
    }
    assert!((140..=260).contains(&suppressed), "{suppressed}");
}

#[test]
fn idle_timeout_exits() {
    let mut r = rig(quiet());
    r.kernel.on_sak_press(t(1000));
    assert_eq!(r.kernel.idle_deadline(), Some(t(1000 + 5 * MINUTE)));
    r.act(t(2000), UiAction::RepoList);
    r.kernel.tick(t(1000 + 5 * MINUTE));
    assert_eq!(
        r.kernel.mode(),
        Mode::Secure,
        "activity pushed the deadline"
    );
    r.kernel.tick(t(2000 + 5 * MINUTE));
    assert_eq!(r.kernel.mode(), Mode::Normal);
    let ev = events(&mut r.kernel);
    assert!(ev.iter().any(|e| matches!(
        e,
        TraceEvent::ModeChange {
            cause: ModeCause::IdleTimeout,
            ..
        }
    )));
}

#[test]
fn queue_holds_capacity_then_refuses() {
    let mut r = rig(quiet());
    for i in 0..32 {
        assert_eq!(r.request_data(t(i), "bob").status, ApiStatus::Pending);
    }
    assert_eq!(r.request_data(t(40), "bob").status, ApiStatus::QueueFull);
    assert_eq!(r.kernel.pending().len(), 32);
}

#[test]
fn unknown_and_forged_peers_are_rejected() {
    let mut r = rig(quiet());
    let res = r.kernel.api_call(
        t(0),
        "msg",
        ApiCall::RequestData {
            recipient: "mallory".into(),
            recipient_cert: None,
        },
    );
    assert!(matches!(res.status, ApiStatus::PeerRejected { .. }));

    // A certificate for a different name.
    let bob = r.cert_bytes("bob");
    let res = r.kernel.api_call(
        t(1),
        "msg",
        ApiCall::RequestData {
            recipient: "bob2".into(),
            recipient_cert: Some(bob),
        },
    );
    assert!(matches!(res.status, ApiStatus::PeerRejected { .. }));

    // Self-signed look-alike.
    let keys = KeyPair::from_seed(CipherSuite::Test, [9; 32]);
    let fake =
        crate::authority::CertRequest::new("carol", keys.public(), crate::authority::Role::Contact)
            .self_sign(&keys);
    let res = r.kernel.api_call(
        t(2),
        "msg",
        ApiCall::RequestData {
            recipient: "carol".into(),
            recipient_cert: Some(fake.to_bytes()),
        },
    );
    assert!(matches!(res.status, ApiStatus::PeerRejected { .. }));
    assert!(r.kernel.pending().is_empty());
}

#[test]
fn signature_requests_need_the_right_role_and_group() {
    let mut r = rig(quiet());
    // A contact cannot ask for signatures.
    let doc = r.offer("bob", "commerce");
    let res = r.kernel.api_call(
        t(0),
        "pay",
        ApiCall::RequestSignature {
            recipient: "bob".into(),
            recipient_cert: Some(r.cert_bytes("bob")),
            document: doc.to_bytes(),
        },
    );
    assert!(matches!(res.status, ApiStatus::PeerRejected { .. }));

    // A broker may not present banking documents.
    let doc = r.offer("b1", "banking");
    let res = r.kernel.api_call(
        t(1),
        "pay",
        ApiCall::RequestSignature {
            recipient: "b1".into(),
            recipient_cert: Some(r.cert_bytes("b1")),
            document: doc.to_bytes(),
        },
    );
    assert!(matches!(res.status, ApiStatus::PeerRejected { .. }));

    // The bank may.
    let doc = r.offer("BankOfA", "banking");
    let res = r.kernel.api_call(
        t(2),
        "pay",
        ApiCall::RequestSignature {
            recipient: "BankOfA".into(),
            recipient_cert: Some(r.cert_bytes("BankOfA")),
            document: doc.to_bytes(),
        },
    );
    assert_eq!(res.status, ApiStatus::Pending);

    // A data function for a signatory is refused.
    let res = r.request_data(t(3), "b1");
    assert!(matches!(res.status, ApiStatus::PeerRejected { .. }));
}

#[test]
fn document_signed_by_someone_else_is_rejected() {
    let mut r = rig(quiet());
    let mut doc = r.offer("b1", "commerce");
    doc.originator_name = "b2".into();
    let res = r.kernel.api_call(
        t(0),
        "pay",
        ApiCall::DisplaySignedDoc {
            sender: "b2".into(),
            sender_cert: Some(r.pki.broker("b2").0.to_bytes()),
            document: doc.to_bytes(),
        },
    );
    assert!(matches!(res.status, ApiStatus::PeerRejected { .. }));
}

#[test]
fn countersign_flow_outputs_sealed_order() {
    let mut r = rig(quiet());
    let doc = r.offer("b1", "commerce");
    let res = r.kernel.api_call(
        t(0),
        "pay",
        ApiCall::RequestSignature {
            recipient: "b1".into(),
            recipient_cert: Some(r.cert_bytes("b1")),
            document: doc.to_bytes(),
        },
    );
    let id = res.request_id;
    r.kernel.on_sak_press(t(10));
    assert_eq!(
        r.act(t(11), UiAction::OpenRequest { request_id: id }),
        ActionOutcome::Done
    );
    let approve = UiAction::ApproveSignature {
        request_id: id,
        fields: vec![("account".into(), "CH93-0000".into())],
    };
    assert!(matches!(
        r.act(t(12), approve.clone()),
        ActionOutcome::Refused(_)
    ));
    assert_eq!(
        r.act(t(13), UiAction::Text { value: PIN.into() }),
        ActionOutcome::Done
    );
    assert!(r.kernel.session().unwrap().key_unlocked());
    assert_eq!(r.act(t(14), approve), ActionOutcome::Done);

    let done = r.kernel.take_completions();
    assert_eq!(done.len(), 1);
    assert!(matches!(done[0].status, ApiStatus::Completed { .. }));
    let out = done[0].output.clone().unwrap();
    assert!(!out.label().is_secret());

    let broker = r.pki.keys_for("b1");
    let alice = r.pki.keys_for("alice").public();
    let env = Envelope::from_bytes(out.bytes()).unwrap();
    let plain = open(CipherSuite::Test, &broker, "alice", &alice, &env).unwrap();
    let DataItem::SignedDocument(bytes) = DataItem::decode(&plain).unwrap() else {
        panic!("not a signed document")
    };
    let signed = SignedDocument::from_bytes(&bytes).unwrap();
    assert!(crate::crypto::verify_countersigned(
        &alice,
        &broker.public(),
        &signed
    ));
    assert_eq!(
        signed.field("account").unwrap().value.as_deref(),
        Some("CH93-0000")
    );
    assert!(r.kernel.take_dirty());
}

#[test]
fn three_bad_credentials_lock_the_key_for_the_session() {
    let mut r = rig(quiet());
    let doc = r.offer("b1", "commerce");
    let id = r
        .kernel
        .api_call(
            t(0),
            "pay",
            ApiCall::RequestSignature {
                recipient: "b1".into(),
                recipient_cert: Some(r.cert_bytes("b1")),
                document: doc.to_bytes(),
            },
        )
        .request_id;
    r.kernel.on_sak_press(t(1));
    r.act(t(2), UiAction::OpenRequest { request_id: id });
    for i in 0..3 {
        assert!(matches!(
            r.act(
                t(3 + i),
                UiAction::Text {
                    value: "0000".into()
                }
            ),
            ActionOutcome::Refused(_)
        ));
    }
    let s = r.kernel.session().unwrap();
    assert!(s.locked_out);
    assert_eq!(s.failed_attempts, 3);
    assert_eq!(r.kernel.mode(), Mode::Secure);
    assert!(matches!(
        r.act(
            t(9),
            UiAction::UnlockKey {
                credential: PIN.into()
            }
        ),
        ActionOutcome::Refused(_)
    ));
    let done = r.kernel.take_completions();
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].status, ApiStatus::UserDeclined);
    assert!(events(&mut r.kernel)
        .iter()
        .any(|e| matches!(e, TraceEvent::SessionLockout)));

    // A fresh session starts with a clean slate.
    r.act(t(10), UiAction::Exit);
    r.kernel.on_sak_press(t(11));
    assert_eq!(
        r.act(
            t(12),
            UiAction::UnlockKey {
                credential: PIN.into()
            }
        ),
        ActionOutcome::Done
    );
}

#[test]
fn key_handles_die_with_their_session() {
    let mut r = rig(quiet());
    r.kernel.on_sak_press(t(0));
    let h = r.kernel.unlock_private_key(t(1), PIN).unwrap();
    assert!(r.kernel.sign_with(h, b"x").is_ok());
    r.kernel.exit_secure(t(2), ModeCause::ExitButton).unwrap();
    assert_eq!(r.kernel.sign_with(h, b"x"), Err(KernelError::HandleExpired));
    r.kernel.on_sak_press(t(3));
    assert_eq!(r.kernel.sign_with(h, b"x"), Err(KernelError::HandleExpired));
}

#[test]
fn incoming_message_is_shown_only_in_secure_mode() {
    let mut r = rig(quiet());
    let bob = r.pki.keys_for("bob");
    let alice = r.pki.keys_for("alice").public();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let item = DataItem::Text("lunch?".into()).encode();
    let env = seal(CipherSuite::Test, "bob", &bob, &alice, &item, &mut rng).unwrap();
    let res = r.kernel.api_call(
        t(0),
        "msg",
        ApiCall::DisplayMessage {
            sender: "bob".into(),
            sender_cert: Some(r.cert_bytes("bob")),
            envelope: env.to_bytes(),
        },
    );
    assert_eq!(res.status, ApiStatus::Pending);
    assert!(!r.kernel.secrets().is_empty());

    r.kernel.on_sak_press(t(1));
    let menu = r.kernel.present_menu().unwrap();
    assert_eq!(menu.pending[0].peer.as_deref(), Some("bob"));
    assert_eq!(menu.pending[0].peer_groups, vec!["friends".to_string()]);
    r.act(
        t(2),
        UiAction::OpenRequest {
            request_id: res.request_id,
        },
    );
    let shown = events(&mut r.kernel).into_iter().find_map(|e| match e {
        TraceEvent::Display { content, peer, .. } => Some((peer, content)),
        _ => None,
    });
    assert_eq!(shown, Some(("bob".to_string(), "lunch?".to_string())));
    assert_eq!(r.kernel.take_completions().len(), 1);
}

#[test]
fn tampered_envelope_is_rejected_at_the_gateway() {
    let mut r = rig(quiet());
    let bob = r.pki.keys_for("bob");
    let alice = r.pki.keys_for("alice").public();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut bytes = seal(
        CipherSuite::Test,
        "bob",
        &bob,
        &alice,
        b"hi there",
        &mut rng,
    )
    .unwrap()
    .to_bytes();
    let n = bytes.len();
    bytes[n - 1] ^= 1;
    let res = r.kernel.api_call(
        t(0),
        "msg",
        ApiCall::DisplayMessage {
            sender: "bob".into(),
            sender_cert: Some(r.cert_bytes("bob")),
            envelope: bytes,
        },
    );
    assert!(matches!(res.status, ApiStatus::PeerRejected { .. }));
}

#[test]
fn files_go_only_to_recipients_on_their_acl() {
    let mut r = rig(quiet());
    let id = r.request_data(t(0), "bob").request_id;
    r.kernel.on_sak_press(t(1));
    let refused = r.act(
        t(2),
        UiAction::SendFile {
            request_id: id,
            path: "notes/private.txt".into(),
        },
    );
    assert!(matches!(refused, ActionOutcome::Refused(_)));
    let ok = r.act(
        t(3),
        UiAction::SendFile {
            request_id: id,
            path: "notes/for-bob.txt".into(),
        },
    );
    assert_eq!(ok, ActionOutcome::Done);
    let out = r.kernel.take_completions().remove(0).output.unwrap();
    assert!(!out.label().is_secret());
    assert!(!out.bytes().windows(12).any(|w| w == b"meet at noon"));
}

#[test]
fn leak_demo_hands_out_the_raw_file() {
    let mut r = rig(KernelConfig {
        leak_demo: true,
        ..quiet()
    });
    let id = r.request_data(t(0), "bob").request_id;
    r.kernel.on_sak_press(t(1));
    r.act(
        t(2),
        UiAction::SendFile {
            request_id: id,
            path: "notes/for-bob.txt".into(),
        },
    );
    let out = r.kernel.take_completions().remove(0).output.unwrap();
    assert!(out.label().is_secret());
    assert_eq!(out.bytes(), b"meet at noon");
}

#[test]
fn sensor_enable_lifecycle() {
    let mut r = rig(quiet());
    let enable = ApiCall::EnableSensor {
        sensor: Sensor::Gps,
    };
    assert_eq!(
        r.kernel.api_call(t(0), "nav", enable.clone()).status,
        ApiStatus::SensorNotBlocked
    );

    r.kernel.on_sak_press(t(1));
    r.act(
        t(2),
        UiAction::SetSensor {
            sensor: Sensor::Gps,
            open: false,
        },
    );
    r.act(t(3), UiAction::Exit);
    assert_eq!(r.kernel.sensor_gate(t(4), Sensor::Gps), GateDecision::Drop);

    let first = r.kernel.api_call(t(5), "nav", enable.clone());
    assert_eq!(first.status, ApiStatus::Pending);
    let again = r.kernel.api_call(t(6), "nav", enable.clone());
    assert_eq!(again.status, ApiStatus::Pending);
    assert_eq!(r.kernel.pending().len(), 1, "duplicate requests coalesce");

    r.kernel.on_sak_press(t(10));
    r.act(
        t(11),
        UiAction::ApproveSensor {
            request_id: first.request_id,
            minutes: 90,
        },
    );
    r.act(t(12), UiAction::Exit);
    let until = t(11 + HOUR);
    assert_eq!(
        r.kernel.sensors().get(Sensor::Gps),
        SensorPolicy::TempEnabled(until)
    );
    assert_eq!(
        r.kernel.take_completions()[0].status,
        ApiStatus::Completed {
            enabled_until: Some(until)
        }
    );
    assert_eq!(
        r.kernel.sensor_gate(t(20), Sensor::Gps),
        GateDecision::Deliver
    );
    assert_eq!(
        r.kernel.api_call(t(30), "nav", enable.clone()).status,
        ApiStatus::SensorNotBlocked
    );
    assert_eq!(r.kernel.sensor_gate(until, Sensor::Gps), GateDecision::Drop);
    assert_eq!(r.kernel.sensors().get(Sensor::Gps), SensorPolicy::Blocked);

    // Discarding for ten minutes answers new requests without queueing.
    let req = r.kernel.api_call(until, "nav", enable.clone());
    r.kernel.on_sak_press(until + 1);
    r.act(
        until + 2,
        UiAction::DiscardSensorRequests {
            request_id: req.request_id,
            minutes: 10,
        },
    );
    r.act(until + 3, UiAction::Exit);
    let window = until + 2 + 10 * MINUTE;
    assert_eq!(
        r.kernel.api_call(until + 4, "nav", enable.clone()).status,
        ApiStatus::DiscardWindow { until: window }
    );
    assert_eq!(
        r.kernel.sensor_gate(until + 5, Sensor::Gps),
        GateDecision::Drop
    );
    r.kernel.tick(window);
    assert_eq!(r.kernel.sensors().get(Sensor::Gps), SensorPolicy::Blocked);
    assert_eq!(
        r.kernel.api_call(window, "nav", enable).status,
        ApiStatus::Pending
    );
}

#[test]
fn unanswered_requests_time_out() {
    let mut r = rig(quiet());
    let id = r.request_data(t(0), "bob").request_id;
    assert_eq!(r.kernel.next_deadline(), Some(t(24 * HOUR)));
    r.kernel.tick(t(24 * HOUR - 1));
    assert!(r.kernel.take_completions().is_empty());
    r.kernel.tick(t(24 * HOUR));
    let done = r.kernel.take_completions();
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].request_id, id);
    assert_eq!(done[0].status, ApiStatus::TimedOut);
}

#[test]
fn taps_resolve_through_the_menu() {
    let mut r = rig(quiet());
    let id = r.request_data(t(0), "bob").request_id;
    r.kernel.on_sak_press(t(1));
    let menu = r.kernel.present_menu().unwrap();
    let (x, y) = (0..SCREEN_HEIGHT)
        .step_by(8)
        .map(|y| (10, y))
        .find(|&(x, y)| menu.hit(x, y) == Some(MenuHit::Request(id)))
        .expect("request row is on screen");
    assert_eq!(r.act(t(2), UiAction::Tap { x, y }), ActionOutcome::Done);
    assert_eq!(r.kernel.session().unwrap().open_request, Some(id));
    assert_eq!(
        r.act(
            t(3),
            UiAction::Text {
                value: "hello bob".into()
            }
        ),
        ActionOutcome::Done
    );
    assert!(matches!(
        r.kernel.take_completions()[0].status,
        ApiStatus::Completed { .. }
    ));
}

#[test]
fn admin_authorize_needs_the_password() {
    let mut r = rig(quiet());
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    r.kernel
        .registry
        .set_admin_password(CipherSuite::Test, "admin", &mut rng)
        .unwrap();
    let keys = KeyPair::from_seed(CipherSuite::Test, [5; 32]);
    let local =
        crate::authority::CertRequest::new("corp-ca", keys.public(), crate::authority::Role::Ca)
            .authorized_groups(["work"])
            .self_sign(&keys);
    r.kernel.on_sak_press(t(0));
    let bad = r.act(
        t(1),
        UiAction::AdminAuthorize {
            password: "guess".into(),
            cert: local.to_bytes(),
        },
    );
    assert!(matches!(bad, ActionOutcome::Refused(_)));
    let good = r.act(
        t(2),
        UiAction::AdminAuthorize {
            password: "admin".into(),
            cert: local.to_bytes(),
        },
    );
    assert_eq!(good, ActionOutcome::Done);
    assert_eq!(r.kernel.registry().roots().count(), 2);
}
