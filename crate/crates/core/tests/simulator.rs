use std::collections::BTreeMap;

use fedsim::aggregation::{Decay, StalenessPolicy};
use fedsim::model_mgmt::Scheme;
use fedsim::simulator::lifecycle::check_trace;
use fedsim::simulator::profile::{ProfileOverride, ValueSpec};
use fedsim::simulator::scenario::GossipMode;
use fedsim::simulator::{run_scenario, AggregatorConfig, RunOutput, Scenario, Summary};
use fedsim::TaskKind;
use proptest::prelude::*;

fn async_policy() -> AggregatorConfig {
    AggregatorConfig::Async {
        staleness: StalenessPolicy::new(Decay::Exponential, 0.5).unwrap(),
        mix: 0.8,
        round_deadline_ms: 60.0,
    }
}

/// Three clients; client-002 needs longer than one round window.
#[test]
fn deferred_async_update_appears_in_the_next_version() {
    let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 3, 3, 4);
    s.data.samples_per_client = 50;
    s.aggregator = async_policy();
    s.profiles.overrides.insert(
        "client-002".into(),
        ProfileOverride { compute_capacity: Some(15.0), ..Default::default() },
    );
    let out = run_scenario(&s).unwrap();
    let lineage = |v: u64| -> Vec<String> {
        out.coversion.query_lineage(v).unwrap().into_iter().map(|(id, _)| id).collect()
    };
    assert_eq!(lineage(1), ["client-000", "client-001"]);
    assert!(lineage(2).contains(&"client-002".to_string()), "{:?}", lineage(2));
    let stale = out.records.iter().find(|r| r.subject == "client-002" && r.event == "aggregate").unwrap();
    assert_eq!(stale.extra["staleness"], 1);
}

#[test]
fn hundred_by_hundred_counts() {
    let mut s = Scenario::minimal(TaskKind::LinearRegression, 100, 100, 1);
    s.data.samples_per_client = 10;
    s.data.probe_samples = 100;
    let out = run_scenario(&s).unwrap();
    assert_eq!(out.coversion.local_entries(), 10_000);
    assert_eq!(out.coversion.global_records(), 100);
    assert_eq!(out.summary.local_entries, 10_000);
}

#[test]
fn regression_runs_learn() {
    let mut s = Scenario::minimal(TaskKind::LinearRegression, 5, 30, 2);
    s.training.learning_rate = 0.05;
    let out = run_scenario(&s).unwrap();
    assert!(out.summary.final_loss < out.records[0].global_loss / 2.0);
    assert!(out.summary.final_accuracy.is_none());
}

#[test]
fn convergence_stop_ends_training_early() {
    let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 4, 500, 6);
    s.convergence.stop = true;
    s.convergence.tolerance = 1e-3;
    let out = run_scenario(&s).unwrap();
    let converged = out.summary.rounds_to_convergence.expect("converges");
    assert_eq!(out.summary.rounds_run, converged);
    assert!(converged < 500);
    assert!(out.lifecycle.contains(&fedsim::simulator::LifecycleState::Converged));
}

fn check_invariants(s: &Scenario, out: &RunOutput) -> Result<(), TestCaseError> {
    check_trace(&out.lifecycle).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for w in out.records.windows(2) {
        prop_assert!(w[1].virtual_time_ms >= w[0].virtual_time_ms);
    }
    for r in &out.records {
        prop_assert!(r.global_loss.is_finite() && r.virtual_time_ms.is_finite());
    }
    prop_assert_eq!(&out.summary, &Summary::fold(&out.records));
    prop_assert_eq!(out.summary.global_records, out.coversion.global_records());
    prop_assert_eq!(out.summary.local_entries, out.coversion.local_entries() as u64);

    // Byte accounting: uploads carry exactly the encoded update sizes.
    let dim = s.model_dim() as u64;
    if matches!(s.aggregator, AggregatorConfig::Fedavg | AggregatorConfig::Async { .. }) {
        let uploads: Vec<u64> = out.records.iter().filter(|r| r.event == "upload_done").map(|r| r.bytes_up).collect();
        prop_assert_eq!(uploads.iter().sum::<u64>(), out.summary.total_bytes_up);
        if s.compression.is_none() {
            prop_assert!(uploads.iter().all(|&b| b == 8 * dim));
        }
    }

    // Participant conservation per round.
    let mut selected: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for r in out.records.iter().filter(|r| r.event == "broadcast" && r.extra.contains_key("selected")) {
        let sel = r.extra["selected"].as_u64().unwrap() as usize;
        prop_assert_eq!(sel, r.participants + r.dropouts);
        selected.insert(r.round, (r.participants, 0));
    }
    if matches!(s.aggregator, AggregatorConfig::Fedavg) {
        for r in out.records.iter().filter(|r| r.event == "aggregate") {
            prop_assert_eq!(r.participants, selected[&r.round].0);
        }
    }
    if matches!(s.aggregator, AggregatorConfig::Async { .. }) {
        let applied = out.records.iter().filter(|r| r.event == "aggregate").count();
        let started: usize = selected.values().map(|(p, _)| p).sum();
        prop_assert!(applied <= started);
    }
    Ok(())
}

fn aggregator_strategy() -> impl Strategy<Value = AggregatorConfig> {
    prop_oneof![
        Just(AggregatorConfig::Fedavg),
        Just(AggregatorConfig::Secure),
        (20.0f64..200.0).prop_map(|d| AggregatorConfig::Async {
            staleness: StalenessPolicy::new(Decay::Inverse, 1.0).unwrap(),
            mix: 0.7,
            round_deadline_ms: d,
        }),
        (1u32..3, 1u32..3, 1usize..3).prop_map(|(k1, k2, e)| AggregatorConfig::Hierarchical {
            k1,
            k2,
            n_edges: Some(e),
            edge_groups: None,
            edge_failures: vec![],
        }),
        (1usize..3, 1usize..4, any::<bool>()).prop_map(|(fanout, segments, leader)| AggregatorConfig::Gossip {
            topology: Default::default(),
            fanout,
            segments,
            mode: if leader { GossipMode::RotatingLeader } else { GossipMode::Symmetric },
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_scenarios_respect_the_invariants(
        seed in any::<u64>(),
        n in 2usize..7,
        rounds in 0u64..6,
        dropout in 0.0f64..0.5,
        skew in 0.0f64..5.0,
        aggregator in aggregator_strategy(),
        topk in proptest::option::of(1u32..4),
    ) {
        let mut s = Scenario::minimal(TaskKind::BinaryLogistic, n, rounds, seed);
        s.data.samples_per_client = 30;
        s.data.skew = skew;
        s.profiles.dropout_prob = ValueSpec::Range { min: 0.0, max: dropout };
        s.profiles.compute_capacity = ValueSpec::Range { min: 10.0, max: 1000.0 };
        let compressible = matches!(aggregator, AggregatorConfig::Fedavg | AggregatorConfig::Async { .. });
        s.aggregator = aggregator;
        if compressible {
            s.compression = topk.map(|k| Scheme::Topk { k });
        }
        let out = run_scenario(&s).unwrap();
        check_invariants(&s, &out)?;
        let again = run_scenario(&s).unwrap();
        prop_assert_eq!(&out.records, &again.records);
    }
}
