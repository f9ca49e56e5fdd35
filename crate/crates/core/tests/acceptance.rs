//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use utcb_core::apps::{PaymentPhase, Strategy};
use utcb_core::authority::CertRequest;
use utcb_core::crypto::{open_traced, seal_traced, verify_countersigned, Primitive};
use utcb_core::fixtures::{provision, standalone_kernel, Pki, UserSpec};
use utcb_core::invariants::{explore, random_walks};
use utcb_core::kernel::{DataItem, ModeCause};
use utcb_core::scenario::{run, run_file, Outcome};
use utcb_core::taint::distinct_leaks;
use utcb_core::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= budget, || {
        format!("took {took:.2?}, budget {budget:?}")
    })
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn bundled() -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(scenario_dir())
        .expect("scenario directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    out.sort();
    out
}

fn load(name: &str) -> Outcome {
    run_file(scenario_dir().join(name), None).unwrap_or_else(|e| panic!("{name}: {e}"))
}

// Costs as stated for the reference platform.
const BOOT: u64 = 1_600;
const SWITCH: u64 = 3_000;
const SAK_BOUND: u64 = 1_000_000;

fn ledger_fidelity() -> Check {
    let start = Instant::now();
    let mut lines = Vec::new();
    for name in [
        "messaging_basic.toml",
        "payment_honest.toml",
        "idle_timeout.toml",
    ] {
        let o = load(name);
        for (device, ledger) in o.sim.ledgers() {
            let mine = o.records().iter().filter(|r| r.device == device);
            let (mut boots, mut switches, mut entries) = (0u64, 0u64, 0u64);
            for r in mine {
                match &r.event {
                    TraceEvent::Boot { .. } => boots += 1,
                    TraceEvent::WorldSwitch { .. } => switches += 1,
                    TraceEvent::ModeChange {
                        to: Mode::Secure,
                        cause: ModeCause::SakPress,
                        ..
                    } => entries += 1,
                    _ => {}
                }
            }
            let sak = ledger.cycles(CostCategory::SakHandling) / entries.max(1);
            ensure(entries == 0 || sak <= SAK_BOUND, || {
                format!("{name}/{device}: sak cost {sak}")
            })?;
            let expected = BOOT * boots + SWITCH * switches + sak * entries;
            ensure(ledger.count(CostCategory::BootInit) == boots, || {
                format!("{name}/{device}: boot count")
            })?;
            ensure(ledger.count(CostCategory::WorldSwitch) == switches, || {
                format!("{name}/{device}: switch count")
            })?;
            ensure(ledger.count(CostCategory::SakHandling) == entries, || {
                format!("{name}/{device}: sak count")
            })?;
            ensure(ledger.total() == expected, || {
                format!(
                    "{name}/{device}: ledger {} vs hand count {expected}",
                    ledger.total()
                )
            })?;
            ensure(ledger.nanos(BOOT) < 3_000, || {
                "boot is not under 3 us".into()
            })?;
            ensure(ledger.nanos(SWITCH) == 5_000, || {
                "world switch is not 5 us".into()
            })?;
            ensure(ledger.nanos(SAK_BOUND) <= 2_000_000, || {
                "SAK handling exceeds 2 ms".into()
            })?;
            lines.push(format!("{device}@{name}={}", ledger.total()));
        }
    }
    let basic = load("messaging_basic.toml");
    // One request_data call on alice and one display_message call on bob.
    for device in ["alice", "bob"] {
        let n = basic.ledger_count(Some(device), Some(CostCategory::WorldSwitch));
        ensure(n == 2, || {
            format!("messaging_basic: {device} made {n} world switches, expected 2")
        })?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(lines.join(" "))
}

fn one_way_sak() -> Check {
    let start = Instant::now();
    let cfg = KernelConfig::default();
    let tree = explore(cfg.clone(), 1, 6);
    let walks = random_walks(cfg, 2, 10_000, 200);
    for report in [&tree, &walks] {
        if let Some((inputs, v)) = report.violations.first() {
            return Err(format!("{v} after {inputs:?}"));
        }
    }
    ensure(tree.secure_exits > 0 && walks.secure_exits > 0, || {
        "no path ever left secure mode".into()
    })?;
    within(start, Duration::from_secs(60))?;
    Ok(format!(
        "exhaustive depth 6: {} sequences, random: {} steps, {} secure exits",
        tree.sequences,
        walks.steps,
        tree.secure_exits + walks.secure_exits
    ))
}

fn confidentiality() -> Check {
    let start = Instant::now();
    let files = bundled();
    ensure(files.len() >= 12, || {
        format!("only {} bundled scenarios", files.len())
    })?;
    let mut runs = 0;
    for p in &files {
        let base = ScenarioScript::load(p).map_err(|e| e.to_string())?;
        for s in Strategy::ALL {
            let o = run(&base.with_adversary(s)).map_err(|e| e.to_string())?;
            runs += 1;
            ensure(o.leaks.is_empty(), || {
                format!("{}: {:?}", o.script.name, o.leaks.first())
            })?;
            ensure(o.violations.is_empty(), || {
                format!("{}: {:?}", o.script.name, o.violations.first())
            })?;
        }
    }
    let control = run_file(scenario_dir().join("controls/leak_demo.toml"), None)
        .map_err(|e| e.to_string())?;
    let n = distinct_leaks(&control.leaks);
    ensure(n >= 1, || "the leaking control went undetected".into())?;
    within(start, Duration::from_secs(120))?;
    Ok(format!(
        "{runs} adversarial runs with 0 leaks, control flagged {n}"
    ))
}

fn crypto_envelope() -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    for suite in [CipherSuite::Test, CipherSuite::Reference] {
        let a = KeyPair::generate(suite, &mut rng);
        let b = KeyPair::generate(suite, &mut rng);
        for i in 0..1000 {
            let mut msg = vec![0u8; rng.gen_range(0..2048)];
            rng.fill_bytes(&mut msg);
            let (env, _) = seal_traced(suite, "a", &a, &b.public(), &msg, &mut rng);
            let env = Envelope::from_bytes(&env.map_err(|e| e.to_string())?.to_bytes())
                .map_err(|e| e.to_string())?;
            let (out, log) = open_traced(suite, &b, "a", &a.public(), &env);
            ensure(out.as_deref() == Ok(&msg[..]), || {
                format!("{suite:?} roundtrip {i} failed")
            })?;
            ensure(
                log.position(Primitive::MacVerify) < log.position(Primitive::Decrypt),
                || format!("{suite:?}: decrypted before the tag was checked"),
            )?;
        }
    }

    let suite = CipherSuite::Test;
    let a = KeyPair::generate(suite, &mut rng);
    let b = KeyPair::generate(suite, &mut rng);
    let bytes = seal_traced(suite, "a", &a, &b.public(), b"sixteen byte msg", &mut rng)
        .0
        .map_err(|e| e.to_string())?
        .to_bytes();
    let mut tried = 0u64;
    for pos in 0..bytes.len() {
        for delta in 1..=255u8 {
            let mut bad = bytes.clone();
            bad[pos] ^= delta;
            tried += 1;
            let Ok(env) = Envelope::from_bytes(&bad) else {
                continue;
            };
            let (out, log) = open_traced(suite, &b, "a", &a.public(), &env);
            ensure(out.is_err(), || {
                format!("byte {pos} ^ {delta:#04x} was accepted")
            })?;
            ensure(log.count(Primitive::Decrypt) == 0, || {
                format!("byte {pos} ^ {delta:#04x} reached decryption")
            })?;
        }
    }
    Ok(format!(
        "2000 roundtrips, {tried} corruptions of {} bytes all rejected",
        bytes.len()
    ))
}

#[derive(Clone, Copy, PartialEq)]
enum R {
    Contact,
    Signatory,
    Ca,
}

struct PeerRow {
    name: &'static str,
    role: R,
    groups: &'static [&'static str],
    docs: &'static [&'static str],
    trusted: bool,
}

const PEERS: [PeerRow; 10] = [
    PeerRow {
        name: "bob",
        role: R::Contact,
        groups: &["friends"],
        docs: &[],
        trusted: true,
    },
    PeerRow {
        name: "carol",
        role: R::Contact,
        groups: &["work"],
        docs: &[],
        trusted: true,
    },
    PeerRow {
        name: "dave",
        role: R::Contact,
        groups: &[],
        docs: &[],
        trusted: true,
    },
    PeerRow {
        name: "broker1",
        role: R::Signatory,
        groups: &["brokers"],
        docs: &["commerce"],
        trusted: true,
    },
    PeerRow {
        name: "bankofa",
        role: R::Signatory,
        groups: &["banks"],
        docs: &["banking"],
        trusted: true,
    },
    PeerRow {
        name: "fakebank",
        role: R::Signatory,
        groups: &["brokers"],
        docs: &["banking"],
        trusted: true,
    },
    PeerRow {
        name: "notary",
        role: R::Signatory,
        groups: &["work"],
        docs: &["commerce", "legal"],
        trusted: true,
    },
    PeerRow {
        name: "corp-ca",
        role: R::Ca,
        groups: &[],
        docs: &[],
        trusted: true,
    },
    PeerRow {
        name: "utcb-root",
        role: R::Ca,
        groups: &[],
        docs: &[],
        trusted: true,
    },
    PeerRow {
        name: "mallory",
        role: R::Contact,
        groups: &["friends"],
        docs: &[],
        trusted: false,
    },
];

const DOC_TYPES: [&str; 3] = ["commerce", "banking", "legal"];

/// The access rules written out directly: contacts exchange data, signatories
/// exchange documents of their own types, and banking documents come only
/// from banks.
fn oracle(p: &PeerRow, kind: ApiKind, doc: Option<&str>) -> bool {
    if !p.trusted {
        return false;
    }
    match kind {
        ApiKind::RequestData | ApiKind::DisplayMessage => p.role == R::Contact,
        ApiKind::RequestSignature | ApiKind::DisplaySignedDoc => {
            let doc = doc.expect("signature calls carry a type");
            p.role == R::Signatory
                && p.docs.contains(&doc)
                && (doc != "banking" || p.groups.contains(&"banks"))
        }
        ApiKind::EnableSensor => unreachable!(),
    }
}

fn rbac_matrix() -> Check {
    let cfg = KernelConfig::default();
    let (pki, base) = standalone_kernel(cfg, 3);
    let suite = pki.suite();
    let alice = pki.keys_for("alice").public();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut cells = 0;
    let mut permitted = 0;
    for p in &PEERS {
        let (cert, keys) = if !p.trusted {
            let keys = KeyPair::from_seed(suite, [7; 32]);
            let cert = CertRequest::new(p.name, keys.public(), Role::Contact)
                .groups(p.groups.iter().copied())
                .self_sign(&keys);
            (cert, keys)
        } else if p.name == pki.root().name {
            (pki.root().clone(), pki.keys_for(p.name))
        } else {
            let role = match p.role {
                R::Contact => Role::Contact,
                R::Signatory => Role::Signatory,
                R::Ca => Role::Ca,
            };
            pki.issue(p.name, role, p.groups, p.docs)
        };
        let cert_bytes = Some(cert.to_bytes());
        let env = seal(
            suite,
            p.name,
            &keys,
            &alice,
            &DataItem::Text("hello".into()).encode(),
            &mut rng,
        )
        .map_err(|e| e.to_string())?
        .to_bytes();
        let mut calls: Vec<(ApiCall, Option<&str>)> = vec![
            (
                ApiCall::RequestData {
                    recipient: p.name.into(),
                    recipient_cert: cert_bytes.clone(),
                },
                None,
            ),
            (
                ApiCall::DisplayMessage {
                    sender: p.name.into(),
                    sender_cert: cert_bytes.clone(),
                    envelope: env,
                },
                None,
            ),
        ];
        for dt in DOC_TYPES {
            let doc =
                SignedDocument::issue(dt, b"terms".to_vec(), vec![], p.name, &keys).to_bytes();
            calls.push((
                ApiCall::RequestSignature {
                    recipient: p.name.into(),
                    recipient_cert: cert_bytes.clone(),
                    document: doc.clone(),
                },
                Some(dt),
            ));
            calls.push((
                ApiCall::DisplaySignedDoc {
                    sender: p.name.into(),
                    sender_cert: cert_bytes.clone(),
                    document: doc,
                },
                Some(dt),
            ));
        }
        for (call, dt) in calls {
            let kind = call.kind();
            let mut k = base.clone();
            let got = k.api_call(SimTime(1), "app", call).status == ApiStatus::Pending;
            let want = oracle(p, kind, dt);
            ensure(got == want, || {
                format!(
                    "{} {kind:?} {dt:?}: kernel says {got}, table says {want}",
                    p.name
                )
            })?;
            cells += 1;
            permitted += want as usize;
        }
    }
    Ok(format!("{cells} cells agree, {permitted} permitted"))
}

fn ceremony_device(compliant: bool, seed: u64) -> Result<(usize, usize, usize), String> {
    let pki = Pki::new(CipherSuite::Test, seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let f = provision(&pki, &UserSpec::new("alice", "0000"), &mut rng);
    let mut cfg = DeviceConfig::new("alice");
    cfg.kernel.training_entries = 1000;
    cfg.kernel.suppression_prob = 0.1;
    cfg.compliant_user = compliant;
    let mut d = Device::boot(cfg, f, seed).map_err(|e| e.to_string())?;
    let (mut suppressed, mut represses, mut negative) = (0, 0, 0);
    let mut t = 0;
    for i in 0..1000 {
        d.press_sak(SimTime(t + 1));
        d.touch(SimTime(t + 2), UiAction::RepoList);
        d.touch(SimTime(t + 3), UiAction::Exit);
        t += 10;
        ensure(d.kernel().mode() == Mode::Normal, || {
            format!("entry {i} did not exit")
        })?;
        for (_, _, e) in d.trace_mut().drain() {
            match e {
                TraceEvent::SakPress {
                    suppressed: true,
                    repress: false,
                    ..
                } => suppressed += 1,
                TraceEvent::SakPress { repress: true, .. } => represses += 1,
                TraceEvent::NegativeFeedback { .. } => negative += 1,
                _ => {}
            }
        }
    }
    Ok((suppressed, represses, negative))
}

fn ceremony() -> Check {
    let (suppressed, _, negative) = ceremony_device(false, 21)?;
    ensure(suppressed > 0, || "no entry was suppressed".into())?;
    ensure(negative == suppressed, || {
        format!("{suppressed} suppressed entries, {negative} negative feedback")
    })?;
    let (c_suppressed, represses, c_negative) = ceremony_device(true, 21)?;
    ensure(c_negative == 0, || {
        format!("compliant user got {c_negative} negative feedback")
    })?;
    ensure(represses == c_suppressed, || {
        format!("{c_suppressed} suppressed, {represses} re-presses")
    })?;
    Ok(format!(
        "careless: {suppressed}/1000 suppressed, {negative} negative; compliant: {c_suppressed} suppressed, 0 negative"
    ))
}

fn payment() -> Check {
    let honest = load("payment_honest.toml");
    ensure(
        honest.payment_phase("alice", "pay", None) == Some(PaymentPhase::Done),
        || {
            format!(
                "honest run ended in {:?}",
                honest.payment_phase("alice", "pay", None)
            )
        },
    )?;
    let pki = Pki::new(honest.script.suite, honest.script.seed);
    let broker = honest.sim.service("broker1").ok_or("no broker1")?;
    let orders = broker.verified_orders();
    ensure(orders.len() == 1, || {
        format!("{} verified orders", orders.len())
    })?;
    let ok = verify_countersigned(
        &pki.keys_for("alice").public(),
        &pki.keys_for("broker1").public(),
        &orders[0].1,
    );
    ensure(ok, || "the order's countersignature does not verify".into())?;

    let revoked = load("payment_revocation.toml");
    let deadline = revoked.script.devices[0].apps[0]
        .receipt_deadline_ms
        .ok_or("no deadline")?;
    let sent = revoked
        .records()
        .iter()
        .find(|r| matches!(&r.event, TraceEvent::NetworkSend { kind, .. } if kind == "order"))
        .ok_or("order never sent")?
        .t;
    let at = revoked
        .records()
        .iter()
        .find(|r| {
            matches!(
                &r.event,
                TraceEvent::PaymentPhase {
                    phase: PaymentPhase::Revoked,
                    ..
                }
            )
        })
        .ok_or("never revoked")?
        .t;
    ensure(at == SimTime(sent.0 + deadline), || {
        format!("revoked at {at:?}, order at {sent:?}")
    })?;

    let mut runs = 0;
    for p in bundled() {
        let base = ScenarioScript::load(&p).map_err(|e| e.to_string())?;
        for s in Strategy::ALL {
            let o = run(&base.with_adversary(s)).map_err(|e| e.to_string())?;
            let verified: usize = o.sim.services().map(|b| b.verified_orders().len()).sum();
            let approved = o
                .records()
                .iter()
                .filter(|r| matches!(&r.event, TraceEvent::Countersigned { doc_type, .. } if doc_type == "commerce"))
                .count();
            ensure(verified <= approved, || {
                format!("{}: {verified} orders, {approved} approvals", o.script.name)
            })?;
            runs += 1;
        }
    }
    Ok(format!(
        "done, revoked at +{deadline} ms, no forged orders in {runs} adversarial runs"
    ))
}

fn determinism() -> Check {
    let mut files = bundled();
    files.push(scenario_dir().join("controls/leak_demo.toml"));
    for p in &files {
        let a = run_file(p, None).map_err(|e| e.to_string())?;
        let b = run_file(p, None).map_err(|e| e.to_string())?;
        let name = p.file_name().unwrap_or_default().to_string_lossy();
        ensure(a.trace_ndjson() == b.trace_ndjson(), || {
            format!("{name}: trace differs")
        })?;
        ensure(a.ledger_text() == b.ledger_text(), || {
            format!("{name}: ledger differs")
        })?;
        ensure(a.audit_json() == b.audit_json(), || {
            format!("{name}: audit differs")
        })?;
    }
    Ok(format!(
        "{} scenarios replayed byte-identically",
        files.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("cycle ledger fidelity", ledger_fidelity),
        ("one-way SAK", one_way_sak),
        ("confidentiality under attack", confidentiality),
        ("envelope integrity", crypto_envelope),
        ("role-based access matrix", rbac_matrix),
        ("LED training ceremony", ceremony),
        ("payment protocol", payment),
        ("deterministic replay", determinism),
    ];
    let mut results = BTreeMap::new();
    for (name, f) in criteria {
        let start = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        match &r {
            Ok(detail) => println!("PASS {name} ({took:.2?}): {detail}"),
            Err(why) => println!("FAIL {name} ({took:.2?}): {why}"),
        }
        results.insert(name, r.is_ok());
    }
    let failed = results.values().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
