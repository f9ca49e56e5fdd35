use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::fixtures::{provision, Pki, UserSpec};
use crate::kernel::SensorPolicy;
use crate::time::MINUTE;

const PIN: &str = "1357";

fn fixtures() -> (Pki, BootFixtures) {
    let pki = Pki::new(crate::crypto::CipherSuite::Test, 5);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let f = provision(
        &pki,
        &UserSpec::new("alice", PIN).file("pin.txt", b"4711-secret", &["bob"]),
        &mut rng,
    );
    (pki, f)
}

fn device(compliant: bool) -> (Pki, Device) {
    let (pki, f) = fixtures();
    let mut cfg = DeviceConfig::new("alice");
    cfg.kernel.training_entries = 0;
    cfg.compliant_user = compliant;
    (pki, Device::boot(cfg, f, 5).unwrap())
}

fn t(ms: u64) -> SimTime {
    SimTime(ms)
}

#[test]
fn boot_charges_only_initialization() {
    let (_, d) = device(true);
    assert_eq!(d.ledger().total(), 1_600);
    assert_eq!(d.ledger().count(CostCategory::BootInit), 1);
    assert_eq!(d.kernel().mode(), Mode::Normal);
    assert_eq!(d.interrupts().route(Peripheral::Touch), RouteTarget::NWorld);
}

#[test]
fn corrupt_blob_refuses_to_boot() {
    let (_, mut f) = fixtures();
    let blob = f.repository_blob.as_mut().unwrap();
    let n = blob.len();
    blob[n / 2] ^= 0x40;
    let err = Device::boot(DeviceConfig::new("alice"), f, 5).unwrap_err();
    assert!(
        matches!(err, DeviceError::CorruptRepositoryBlob(_)),
        "{err}"
    );

    let (_, mut f) = fixtures();
    f.roots = vec![1, 2, 3];
    assert!(matches!(
        Device::boot(DeviceConfig::new("alice"), f, 5),
        Err(DeviceError::BadRoots(_))
    ));
}

#[test]
fn api_call_costs_two_world_switches() {
    let (_, mut d) = device(true);
    let before = d.ledger().total();
    let r = d
        .api_call(
            t(1),
            "nav",
            &ApiCall::EnableSensor {
                sensor: Sensor::Gps,
            },
        )
        .unwrap();
    assert_eq!(r.status, ApiStatus::SensorNotBlocked);
    assert_eq!(d.ledger().count(CostCategory::WorldSwitch), 2);
    assert_eq!(d.ledger().total() - before, 6_000);

    let bogus = GatewayMessage {
        kind: "read_repository".into(),
        request_id: None,
        fields: Default::default(),
    };
    assert!(matches!(
        d.api(t(2), "evil", &bogus),
        Err(GatewayError::UnknownEndpoint(_))
    ));
    assert_eq!(d.ledger().count(CostCategory::WorldSwitch), 4);
}

#[test]
fn sak_takeover_is_charged_once_per_entry() {
    let (_, mut d) = device(true);
    d.press_sak(t(1));
    d.press_sak(t(2));
    assert_eq!(d.ledger().count(CostCategory::SakHandling), 1);
    assert_eq!(d.interrupts().route(Peripheral::Touch), RouteTarget::SWorld);
    d.touch(t(3), UiAction::Exit);
    assert_eq!(d.kernel().mode(), Mode::Normal);
    assert_eq!(d.interrupts().route(Peripheral::Touch), RouteTarget::NWorld);
    d.press_sak(t(4));
    assert_eq!(d.ledger().count(CostCategory::SakHandling), 2);
    assert_eq!(d.ledger().total(), 1_600 + 2 * 900_000);
}

#[test]
fn exit_restores_the_normal_world_foreground() {
    let (_, mut d) = device(true);
    d.set_foreground(Some("maps".into()));
    d.press_sak(t(1));
    d.set_foreground(None);
    d.touch(t(2), UiAction::Exit);
    assert_eq!(d.foreground(), Some("maps"));
}

#[test]
fn compliant_user_enters_secure_mode_before_typing() {
    let (_, mut d) = device(true);
    let out = d.touch(
        t(1),
        UiAction::UnlockKey {
            credential: PIN.into(),
        },
    );
    assert_eq!(out, TouchOutcome::Secure(ActionOutcome::Done));
    assert!(d.observations().iter().all(|o| !o.data.label().is_secret()));
}

#[test]
fn careless_user_types_into_the_normal_world() {
    let (_, mut d) = device(false);
    d.set_foreground(Some("spoof".into()));
    d.add_sniffer("keylogger");
    let out = d.touch(
        t(1),
        UiAction::UnlockKey {
            credential: PIN.into(),
        },
    );
    let TouchOutcome::NormalWorld(data) = out else {
        panic!("expected a normal-world touch")
    };
    assert!(data.label().is_secret());
    assert_eq!(data.bytes(), PIN.as_bytes());
    let seen: Vec<&str> = d
        .observations()
        .iter()
        .filter(|o| o.channel == Channel::Touch)
        .map(|o| o.observer.as_str())
        .collect();
    assert_eq!(seen, vec!["spoof", "keylogger"]);
}

#[test]
fn normal_world_input_is_ignored_while_secure() {
    let (_, mut d) = device(true);
    d.add_sniffer("keylogger");
    assert!(d.nworld_input(t(1), "notes", "shopping list").is_some());
    d.press_sak(t(2));
    assert!(d.nworld_input(t(3), "notes", "more").is_none());
    let sniffed = d
        .observations()
        .iter()
        .filter(|o| o.observer == "keylogger")
        .count();
    assert_eq!(sniffed, 1);
}

#[test]
fn completions_wait_for_exit() {
    let (pki, mut d) = device(true);
    let cert = pki.contact("bob", &["friends"]).0.to_bytes();
    let r = d
        .api_call(
            t(1),
            "msg",
            &ApiCall::RequestData {
                recipient: "bob".into(),
                recipient_cert: Some(cert),
            },
        )
        .unwrap();
    d.press_sak(t(2));
    d.touch(
        t(3),
        UiAction::ComposeText {
            request_id: r.request_id,
            text: "see you".into(),
        },
    );
    assert!(d.take_completions(t(4)).is_empty());
    d.touch(t(5), UiAction::Exit);
    let done = d.take_completions(t(6));
    assert_eq!(done.len(), 1);
    assert!(Device::is_completed(&done[0]));
    let last = d.observations().last().unwrap();
    assert_eq!(last.observer, "msg");
    assert!(!last.data.label().is_secret());
}

#[test]
fn blocked_sensor_readings_are_dropped() {
    let (_, mut d) = device(true);
    assert!(d.sensor_signal(t(1), Sensor::Mic, "rec").is_some());
    d.press_sak(t(2));
    d.touch(
        t(3),
        UiAction::SetSensor {
            sensor: Sensor::Mic,
            open: false,
        },
    );
    d.touch(t(4), UiAction::Exit);
    assert_eq!(
        d.interrupts().route(Peripheral::Sensor(Sensor::Mic)),
        RouteTarget::Masked
    );
    assert!(d.sensor_signal(t(5), Sensor::Mic, "rec").is_none());
    assert_eq!(
        d.observations()
            .iter()
            .filter(|o| o.channel == Channel::Sensor)
            .count(),
        1
    );

    let r = d
        .api_call(
            t(6),
            "rec",
            &ApiCall::EnableSensor {
                sensor: Sensor::Mic,
            },
        )
        .unwrap();
    d.press_sak(t(7));
    d.touch(
        t(8),
        UiAction::ApproveSensor {
            request_id: r.request_id,
            minutes: 5,
        },
    );
    d.touch(t(9), UiAction::Exit);
    assert!(d.sensor_signal(t(10), Sensor::Mic, "rec").is_some());
    d.tick(t(8 + 5 * MINUTE));
    assert_eq!(d.kernel().sensors().get(Sensor::Mic), SensorPolicy::Blocked);
    assert!(d
        .sensor_signal(t(9 + 5 * MINUTE), Sensor::Mic, "rec")
        .is_none());
}

#[test]
fn repository_changes_are_persisted_sealed() {
    let (_, mut d) = device(true);
    let before = d.blob().unwrap().to_vec();
    d.press_sak(t(1));
    d.touch(
        t(2),
        UiAction::RepoWrite {
            path: "diary.txt".into(),
            content: b"dear diary".to_vec(),
            acl: vec![],
        },
    );
    assert_eq!(d.blob().unwrap(), &before[..], "written on exit");
    d.touch(t(3), UiAction::Exit);
    let after = d.read_storage(t(4), "spy");
    assert_ne!(after.bytes(), &before[..]);
    assert!(!after.bytes().windows(10).any(|w| w == b"dear diary"));
}

#[test]
fn idle_timeout_hands_touch_back() {
    let (_, mut d) = device(true);
    d.press_sak(t(0));
    let deadline = d.next_deadline().unwrap();
    assert_eq!(deadline, t(5 * MINUTE));
    d.tick(deadline);
    assert_eq!(d.kernel().mode(), Mode::Normal);
    assert!(!d.interrupts().touch_claimed());
}

#[test]
fn screen_capture_never_shows_the_secure_screen() {
    let (_, mut d) = device(true);
    d.draw(b"home screen".to_vec());
    d.press_sak(t(1));
    let shot = d.screen_capture(t(2), "spy");
    assert_eq!(shot.bytes(), b"home screen");
}
