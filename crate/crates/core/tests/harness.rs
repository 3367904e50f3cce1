mod common;

use toxwatch::features::FeatureStats;
use toxwatch::harness::{
    detection_rate, run_episode, DetEtcPolicy, FixedPolicy, LinUcbPolicy, MonitoringPolicy, Parallelism,
    PolicyFamily, ProbEtcPolicy, RunOptions,
};
use toxwatch::linucb::UcbParams;
use toxwatch::synth::{generate_stream, DayBatch, GeneratorConfig};

fn stream(beta0: f64, seed: u64) -> Vec<DayBatch> {
    generate_stream(&GeneratorConfig {
        n_players: 5_000,
        matches_per_day: 600,
        days: 6,
        beta0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn linucb(cost: f64) -> Box<dyn MonitoringPolicy> {
    Box::new(LinUcbPolicy::new(
        UcbParams::new(1.0, cost).unwrap(),
        Some(FeatureStats::table_defaults()),
    ))
}

#[test]
fn prob_etc_share_converges_to_epsilon_without_toxicity() {
    let s = stream(-60.0, 1);
    let n: usize = s.iter().map(|b| b.events.len()).sum();
    for eps in [0.05, 0.3, 0.7] {
        let log = run_episode(
            &mut ProbEtcPolicy::new(eps).unwrap(),
            &s,
            6,
            &RunOptions {
                policy_seed: 9,
                ..Default::default()
            },
        )
        .unwrap();
        let sd = (eps * (1.0 - eps) / n as f64).sqrt();
        assert!((log.share_monitored() - eps).abs() < 4.0 * sd, "{eps}: {}", log.share_monitored());
        assert_eq!(log.totals().toxic_total, 0);
        assert_eq!(detection_rate(&log), None);
    }
}

#[test]
fn prob_etc_share_is_at_least_epsilon_with_toxicity() {
    let s = stream(-3.0, 2);
    for eps in [0.1, 0.4] {
        let log = run_episode(&mut ProbEtcPolicy::new(eps).unwrap(), &s, 6, &RunOptions::default()).unwrap();
        assert!(log.share_monitored() >= eps, "{}", log.share_monitored());
    }
}

#[test]
fn det_etc_share_spans_zero_to_one() {
    let s = stream(-5.0, 3);
    let share = |m| {
        run_episode(&mut DetEtcPolicy::new(m), &s, 6, &RunOptions::default())
            .unwrap()
            .share_monitored()
    };
    assert_eq!(share(0), 0.0);
    assert_eq!(share(1_000), 1.0);
    let mut last = 0.0;
    for m in 0..6 {
        let s = share(m);
        assert!(s >= last);
        last = s;
    }
}

#[test]
fn linucb_share_is_non_increasing_in_cost() {
    let s = stream(-5.0, 4);
    let mut last = f64::INFINITY;
    for cost in [1e-4, 1e-3, 3e-3, 0.01, 0.02, 0.05, 0.1, 0.3, 0.9] {
        let share = PolicyFamily::LinUcb {
            exploration_factor: 1.0,
            stats: Some(FeatureStats::table_defaults()),
        }
        .share(cost, &s, 6, &RunOptions::default())
        .unwrap();
        assert!(share <= last, "cost {cost}: share {share} > {last}");
        last = share;
    }
}

#[test]
fn conservation_holds_for_every_policy_and_day() {
    let s = stream(-4.0, 5);
    let policies: Vec<Box<dyn MonitoringPolicy>> = vec![
        linucb(0.02),
        Box::new(ProbEtcPolicy::new(0.2).unwrap()),
        Box::new(DetEtcPolicy::new(2)),
        Box::new(FixedPolicy::new(true)),
    ];
    for mut p in policies {
        let log = run_episode(p.as_mut(), &s, 6, &RunOptions::default()).unwrap();
        let mut cum = (0, 0, 0, 0);
        for (d, batch) in log.days.iter().zip(&s) {
            assert_eq!(d.observations, batch.events.len() as u64);
            assert_eq!(d.toxic_total, batch.events.iter().filter(|e| e.toxic).count() as u64);
            assert!(d.monitored <= d.observations);
            assert!(d.toxic_detected <= d.monitored.min(d.toxic_total));
            cum = (
                cum.0 + d.observations,
                cum.1 + d.monitored,
                cum.2 + d.toxic_total,
                cum.3 + d.toxic_detected,
            );
        }
        let t = log.totals();
        assert_eq!(cum, (t.observations, t.monitored, t.toxic_total, t.toxic_detected));
    }
}

#[test]
fn worker_count_never_changes_results() {
    let s = stream(-4.0, 6);
    for workers in [2, 4] {
        let par = RunOptions {
            policy_seed: 3,
            parallelism: Parallelism::workers(workers).unwrap(),
        };
        let seq = RunOptions {
            policy_seed: 3,
            parallelism: Parallelism::sequential(),
        };
        let a = common::run_with_decisions(linucb(0.01).as_mut(), &s, &seq);
        let b = common::run_with_decisions(linucb(0.01).as_mut(), &s, &par);
        assert_eq!(a, b);
        let mk = || -> Box<dyn MonitoringPolicy> { Box::new(ProbEtcPolicy::new(0.25).unwrap()) };
        let a = common::run_with_decisions(mk().as_mut(), &s, &seq);
        let b = common::run_with_decisions(mk().as_mut(), &s, &par);
        assert_eq!(a, b);
    }
}

#[test]
fn poisoned_unmonitored_labels_change_nothing() {
    let s = stream(-4.0, 7);
    let opts = RunOptions {
        policy_seed: 1,
        ..Default::default()
    };
    let makers: Vec<Box<dyn Fn() -> Box<dyn MonitoringPolicy>>> = vec![
        Box::new(|| linucb(0.01)),
        Box::new(|| Box::new(ProbEtcPolicy::new(0.2).unwrap())),
        Box::new(|| Box::new(DetEtcPolicy::new(2))),
    ];
    for make in makers {
        let out = common::sentinel_check(make, &s, &opts);
        assert!(out.poisoned_labels > 0);
        assert!(out.decisions_equal);
        assert!(out.monitored_accounting_equal);
    }
}

#[test]
fn replay_statistics_come_from_first_day_only() {
    let s = stream(-4.0, 8);
    let mut p = LinUcbPolicy::new(UcbParams::new(1.0, 0.01).unwrap(), None);
    run_episode(&mut p, &s, 3, &RunOptions::default()).unwrap();
    let expected = FeatureStats::from_records(s[0].events.iter().map(|e| &e.covariates)).unwrap();
    assert_eq!(p.stats(), Some(&expected));
}
