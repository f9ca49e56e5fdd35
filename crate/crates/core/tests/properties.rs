use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use utcb_core::device::DeviceConfig;
use utcb_core::fixtures::{provision, Pki, UserSpec};
use utcb_core::gateway::GatewayMessage;
use utcb_core::invariants::{check_ledger, check_trace};
use utcb_core::scenario::run;
use utcb_core::trace::TraceLog;
use utcb_core::*;

fn suite() -> impl Strategy<Value = CipherSuite> {
    prop_oneof![Just(CipherSuite::Test), Just(CipherSuite::Reference)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn messages_roundtrip_only_for_the_recipient(
        suite in suite(),
        seeds in any::<[[u8; 32]; 4]>(),
        msg in proptest::collection::vec(any::<u8>(), 1..600),
        name in "[a-z]{1,12}",
    ) {
        let sender = KeyPair::from_seed(suite, seeds[0]);
        let recipient = KeyPair::from_seed(suite, seeds[1]);
        let other = KeyPair::from_seed(suite, seeds[2]);
        let mut rng = ChaCha20Rng::from_seed(seeds[3]);
        let env = seal(suite, &name, &sender, &recipient.public(), &msg, &mut rng).unwrap();
        let env = Envelope::from_bytes(&env.to_bytes()).unwrap();
        prop_assert_eq!(open(suite, &recipient, &name, &sender.public(), &env).unwrap(), msg);
        if seeds[2] != seeds[1] {
            prop_assert!(open(suite, &other, &name, &sender.public(), &env).is_err());
        }
        if seeds[2] != seeds[0] {
            prop_assert!(open(suite, &recipient, &name, &other.public(), &env).is_err());
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Sak,
    Exit,
    List,
    Sensor,
    Unknown,
    Tick(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Sak),
        Just(Op::Exit),
        Just(Op::List),
        Just(Op::Sensor),
        Just(Op::Unknown),
        (1u64..400_000).prop_map(Op::Tick),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn ledger_total_is_count_times_cost(
        boot in 1u64..10_000,
        switch in 1u64..10_000,
        sak in 1u64..2_000_000,
        ops in proptest::collection::vec(op(), 0..60),
    ) {
        let pki = Pki::new(CipherSuite::Test, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let f = provision(&pki, &UserSpec::new("alice", "0"), &mut rng);
        let mut cfg = DeviceConfig::new("alice");
        cfg.costs = CostTable { boot_init: boot, world_switch: switch, sak_handling: sak };
        let mut d = Device::boot(cfg, f, 4).unwrap();
        let mut log = TraceLog::default();
        let mut now = 0;
        for op in ops {
            now += 1;
            match op {
                Op::Sak => d.press_sak(SimTime(now)),
                Op::Exit => { d.touch(SimTime(now), UiAction::Exit); }
                Op::List => { d.touch(SimTime(now), UiAction::RepoList); }
                Op::Sensor => { let _ = d.api_call(SimTime(now), "app", &ApiCall::EnableSensor { sensor: Sensor::Gps }); }
                Op::Unknown => {
                    let msg = GatewayMessage { kind: "dump_keys".into(), request_id: None, fields: Default::default() };
                    let _ = d.api(SimTime(now), "app", &msg);
                }
                Op::Tick(ms) => { now += ms; d.tick(SimTime(now)); }
            }
            log.absorb("alice", d.trace_mut());
            let l = d.ledger();
            let expect = l.count(CostCategory::BootInit) * boot
                + l.count(CostCategory::WorldSwitch) * switch
                + l.count(CostCategory::SakHandling) * sak;
            prop_assert_eq!(l.total(), expect);
            prop_assert!(check_ledger("alice", l).is_none());
        }
        let violations = check_trace(log.records());
        prop_assert!(violations.is_empty(), "{:?}", violations);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replays_are_identical(seed in any::<u64>(), shift in 0u64..5_000, scenario in 0usize..3) {
        let name = ["messaging_basic.toml", "payment_honest.toml", "ceremony_training.toml"][scenario];
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
        let mut script = ScenarioScript::load(path).unwrap();
        script.seed = seed;
        script.assertions.clear();
        for step in &mut script.steps {
            step.at += shift;
        }
        let a = run(&script).unwrap();
        let b = run(&script).unwrap();
        prop_assert!(a.violations.is_empty(), "{:?}", a.violations);
        prop_assert_eq!(a.trace_ndjson(), b.trace_ndjson());
        prop_assert_eq!(a.ledger_text(), b.ledger_text());
        prop_assert_eq!(a.audit_json(), b.audit_json());
    }
}
