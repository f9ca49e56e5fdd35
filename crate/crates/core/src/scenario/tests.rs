use std::path::PathBuf;

use super::*;

fn bundled() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    out.sort();
    out
}

const MINIMAL: &str = r#"
version = 1
name = "m"
seed = 1

[[devices]]
name = "alice"
credential = "1"
"#;

#[test]
fn every_bundled_scenario_passes() {
    let files = bundled();
    assert!(files.len() >= 12, "{}", files.len());
    for p in files {
        let o = run_file(&p, None).unwrap();
        assert!(o.passed(), "{}: {:#?}", p.display(), o.failures);
        assert!(
            o.warnings().is_empty(),
            "{}: {:#?}",
            p.display(),
            o.warnings()
        );
    }
}

#[test]
fn negative_control_leaks() {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/controls/leak_demo.toml");
    let o = run_file(p, None).unwrap();
    assert!(o.passed(), "{:#?}", o.failures);
    assert_eq!(distinct_leaks(&o.leaks), 1);
    assert!(o.leaks.len() > 1, "the app and the network both saw it");
}

#[test]
fn minimal_script_runs() {
    let s = ScenarioScript::parse(MINIMAL).unwrap();
    assert_eq!(s.duration(), DEFAULT_TAIL);
    let o = run(&s).unwrap();
    assert!(o.passed());
    assert_eq!(o.ledger_cycles(None, None), 1_600);
}

#[test]
fn schema_errors() {
    let cases = [
        (format!("{MINIMAL}\nbogus = 1\n"), "unknown field"),
        (MINIMAL.replace("version = 1", "version = 2"), "version"),
        (format!("{MINIMAL}\n[[steps]]\nat = 1\ndevice = \"alice\"\nuser = {{ action = \"dance\" }}\n"), "unknown variant"),
        (format!("{MINIMAL}\n[[steps]]\nat = 1\ndevice = \"bob\"\nuser = {{ action = \"sak\" }}\n"), "unknown device"),
        (
            format!("{MINIMAL}\n[[steps]]\nat = 1\ndevice = \"alice\"\nuser = {{ action = \"sak\" }}\nsensor = \"gps\"\napp = \"x\"\n"),
            "exactly one",
        ),
        (
            format!("{MINIMAL}\n[[steps]]\nat = 1\ndevice = \"alice\"\napp = \"nav\"\nsensor = \"gps\"\n"),
            "no app",
        ),
        (format!("{MINIMAL}\n[[assert]]\ncheck = \"event\"\nevent = \"led\"\n"), "needs `count`"),
        (format!("{MINIMAL}\n[[assert]]\ncheck = \"vibes\"\n"), "unknown variant"),
    ];
    for (text, want) in cases {
        match ScenarioScript::parse(&text) {
            Err(ScenarioError::Schema(m)) => assert!(m.contains(want), "{want}: {m}"),
            other => panic!("{want}: {other:?}"),
        }
    }
}

#[test]
fn failed_assertion_names_predicate_and_offset() {
    let text = format!("{MINIMAL}\n[[assert]]\ncheck = \"event\"\nevent = \"boot\"\ncount = 0\n");
    let o = run(&ScenarioScript::parse(&text).unwrap()).unwrap();
    let f = o.first_failure().unwrap();
    assert_eq!(f.index, Some(0));
    assert_eq!(f.predicate, "event `boot`");
    let boot = o
        .records()
        .iter()
        .find(|r| r.event.name() == "boot")
        .unwrap();
    assert_eq!(f.seq, boot.seq);
}

#[test]
fn replay_is_byte_identical() {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/payment_honest.toml");
    let a = run_file(&p, None).unwrap();
    let b = run_file(&p, None).unwrap();
    assert_eq!(a.trace_ndjson(), b.trace_ndjson());
    assert_eq!(a.ledger_text(), b.ledger_text());
    assert_eq!(a.audit_json(), b.audit_json());
    let training = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/ceremony_training.toml");
    let x = run_file(&training, None).unwrap();
    let y = run_file(&training, Some(12345)).unwrap();
    assert_ne!(
        x.trace_ndjson(),
        y.trace_ndjson(),
        "the seed drives LED suppression"
    );
}

#[test]
fn adversary_variant_keeps_the_program() {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/messaging_basic.toml");
    let s = ScenarioScript::load(p).unwrap();
    let a = s.with_adversary(Strategy::ApiProbe);
    assert!(a.assertions.is_empty());
    assert!(a.steps.len() > s.steps.len());
    assert!(a
        .devices
        .iter()
        .all(|d| d.apps.iter().any(|x| x.kind == AppKind::Adversary)));
    a.validate().unwrap();
}

#[test]
fn shipped_schema_is_current() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/schema.json");
    let fresh = json_schema();
    if std::env::var_os("UTCB_WRITE_SCHEMA").is_some() {
        fs::write(&path, &fresh).unwrap();
    }
    let shipped = fs::read_to_string(&path).unwrap();
    assert!(
        shipped == fresh,
        "scenarios/schema.json is stale; rerun with UTCB_WRITE_SCHEMA=1"
    );

    let v: serde_json::Value = serde_json::from_str(&shipped).unwrap();
    let props = v["properties"].as_object().unwrap();
    for key in ["version", "devices", "steps", "assert", "kernel", "network"] {
        assert!(props.contains_key(key), "{key}");
    }
    assert_eq!(v["additionalProperties"], serde_json::Value::Bool(false));
}
