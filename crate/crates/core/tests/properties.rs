//! Whole-run properties over randomly generated adversaries.

use mandator_sporades::audit::{audit, check_liveness};
use mandator_sporades::block::ReplicaId;
use mandator_sporades::netsim::{run, AttackConfig, CrashSpec, Scenario, Window};
use mandator_sporades::sporades::FallbackMode;
use mandator_sporades::workload::ClientConfig;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Adversary {
    seed: u64,
    n_f: (usize, usize),
    crashes: Vec<(u64, u32)>,
    window: Option<(u64, u64)>,
    attack: Option<(usize, u64, u64)>,
    selective: bool,
    disabled: bool,
}

const DURATION: u64 = 5000;

fn adversary(max_crashes: Option<usize>) -> impl Strategy<Value = Adversary> {
    (
        any::<u64>(),
        prop_oneof![Just((3, 1)), Just((5, 2))],
        prop::collection::vec((0u64..3000, 0u32..5), 0..4),
        prop::option::of((500u64..2500, 100u64..1200)),
        prop::option::of((1usize..3, 200u64..1000, 50u64..300)),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(move |(seed, n_f, crashes, window, attack, selective, disabled)| {
            let (n, f) = n_f;
            let mut crashes: Vec<(u64, u32)> = crashes.into_iter().map(|(t, r)| (t, r % n as u32)).collect();
            crashes.sort_by_key(|c| c.1);
            crashes.dedup_by_key(|c| c.1);
            crashes.truncate(max_crashes.map_or(n, |m| m.min(f)));
            let attack = attack.map(|(m, p, d)| (m.min(f), p, d));
            Adversary { seed, n_f, crashes, window, attack, selective, disabled }
        })
}

fn build(a: &Adversary) -> Scenario {
    let (n, f) = a.n_f;
    let mut s = Scenario::basic(n, f, DURATION);
    s.seed = a.seed;
    s.network.bounded_jitter_ms = 10;
    s.selective_broadcast = a.selective;
    s.fallback = if a.disabled { FallbackMode::Disabled } else { FallbackMode::Enabled };
    s.clients = Some(ClientConfig { arrival_rate: 20.0, ..Default::default() });
    s.crashes = a.crashes.iter().map(|&(time_ms, r)| CrashSpec { time_ms, replica: ReplicaId(r) }).collect();
    if let Some((start, len)) = a.window {
        s.network.asynchrony_factor = 10.0;
        s.network.async_windows = vec![Window { start_ms: start, end_ms: start + len }];
    }
    if let Some((minority_size, period, delay)) = a.attack {
        // ends before the drain window so fair runs stay fair
        s.attack = AttackConfig {
            enabled: true,
            minority_size,
            rotation_period_ms: Some(period),
            attack_delay_ms: delay,
            start_ms: 0,
            end_ms: Some(3000),
        };
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn safety_holds_under_any_adversary(a in adversary(None)) {
        let s = build(&a);
        prop_assume!(s.validate().is_ok());
        let rep = audit(&run(&s));
        prop_assert!(rep.safety_passed(), "{:?}", rep.checks);
    }

    #[test]
    fn fair_runs_are_live(a in adversary(Some(usize::MAX))) {
        let s = build(&a);
        prop_assume!(s.validate().is_ok() && DURATION > 3000 + s.drain_window_ms());
        let out = run(&s);
        let live = check_liveness(&out.records, &out.scenario, &out.summaries, &out.crash_times);
        prop_assert!(live.passed && !live.exempt, "{:?}", live.violations.first());
        prop_assert!(out.summaries.iter().all(|r| r.crashed || !r.is_async));
    }
}
