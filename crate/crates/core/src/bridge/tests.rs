use std::path::Path;

use super::*;
use crate::apps::Strategy;
use crate::kernel::ROW_HEIGHT;
use crate::trace::TraceEvent;

fn script(name: &str) -> ScenarioScript {
    ScenarioScript::load(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("scenarios")
            .join(name),
    )
    .unwrap()
}

#[test]
fn wire_shapes() {
    let m: ClientMessage =
        serde_json::from_str(r#"{"type":"user_input","input":{"kind":"touch","x":10,"y":20}}"#)
            .unwrap();
    assert_eq!(
        m,
        ClientMessage::UserInput {
            device: None,
            input: UserInput::Touch { x: 10, y: 20 }
        }
    );
    let m: ClientMessage =
        serde_json::from_str(r#"{"type":"user_input","device":"bob","input":{"kind":"sak"}}"#)
            .unwrap();
    assert!(matches!(
        m,
        ClientMessage::UserInput {
            device: Some(_),
            input: UserInput::Sak
        }
    ));
    assert!(serde_json::from_str::<ClientMessage>(
        r#"{"type":"user_input","input":{"kind":"swipe"}}"#
    )
    .is_err());
    assert!(serde_json::from_str::<ClientMessage>(
        r#"{"type":"user_input","input":{"kind":"exit"},"x":1}"#
    )
    .is_err());

    let b = Bridge::from_script(&script("messaging_basic.toml")).unwrap();
    let v = serde_json::to_value(&b.full_state()[0]).unwrap();
    assert_eq!(v["type"], "state_snapshot");
    assert_eq!(v["mode"], "normal");
    assert_eq!(v["led"], false);
    assert_eq!(v["menu"], serde_json::Value::Null);
}

fn state(sim: &Sim, device: &str) -> (Mode, bool) {
    let k = sim.node(device).unwrap().device.kernel();
    (k.mode(), k.led())
}

#[test]
fn recorded_session_mirrors_the_headless_run() {
    let full = script("messaging_basic.toml");
    let mut headless = build(&full).unwrap();

    let mut live = full.clone();
    live.steps
        .retain(|s| !(s.device == "alice" && s.user.is_some()));
    let mut bridge = Bridge::from_script(&live).unwrap();
    assert_eq!(bridge.focus(), "alice");

    // The pending request is the first row after the five built-ins.
    let inputs = [
        (5000, UserInput::Sak),
        (
            6000,
            UserInput::Touch {
                x: 10,
                y: 5 * ROW_HEIGHT + 1,
            },
        ),
        (
            7000,
            UserInput::Text {
                value: "lunch at noon?".into(),
            },
        ),
        (8000, UserInput::Exit),
    ];
    let mut snaps = Vec::new();
    for (t, input) in inputs {
        bridge.advance_to(SimTime(t));
        bridge.input(None, input).unwrap();
        headless.run_until(SimTime(t));
        let snap = bridge.snapshot("alice").unwrap();
        assert_eq!((snap.mode, snap.led), state(&headless, "alice"), "at {t}");
        snaps.push(snap);
    }
    assert!(snaps[1].open_request.is_some());
    assert_eq!(snaps[3].mode, Mode::Normal);

    bridge.advance_to(SimTime(full.duration()));
    headless.run_until(SimTime(full.duration()));
    let shown = bridge.drain().into_iter().any(|m| {
        matches!(m, ServerMessage::TraceEvent { record } if matches!(&record.event, TraceEvent::Display { content, .. } if content == "lunch at noon?"))
    });
    assert!(shown, "bob never saw the message");
    for d in ["alice", "bob"] {
        let a = bridge.sim().node(d).unwrap().device.ledger().total();
        let b = headless.node(d).unwrap().device.ledger().total();
        assert_eq!(a, b, "{d}");
    }
}

#[test]
fn spoofed_screen_never_lights_the_led() {
    let s = script("messaging_basic.toml").with_adversary(Strategy::ScreenSpoof);
    let mut bridge = Bridge::from_script(&s).unwrap();
    let mut drawn = false;
    let mut t = 0;
    while t <= s.duration() {
        bridge.advance_to(SimTime(t));
        for m in bridge.drain() {
            if let ServerMessage::StateSnapshot(snap) = m {
                if snap.mode == Mode::Normal {
                    assert!(!snap.led, "{snap:?}");
                }
                drawn |= !snap.normal_screen.is_empty();
            }
        }
        t += 500;
    }
    assert!(drawn, "the spoof never drew anything");
}

#[test]
fn unknown_device_is_an_error() {
    let mut b = Bridge::from_script(&script("messaging_basic.toml")).unwrap();
    assert!(b.input(Some("mallory"), UserInput::Sak).is_err());
    assert!(b
        .drain()
        .iter()
        .all(|m| !matches!(m, ServerMessage::Error { .. })));
}
