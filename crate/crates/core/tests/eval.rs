use std::collections::BTreeSet;

use ndarray::{Array2, ArrayD, IxDyn};
use swm::datastore::EpisodeMeta;
use swm::envs::{PUSH_T_ID, TWO_ROOM_ID};
use swm::eval::{offline_pairs, sample_pairs};
use swm::policy::{DatasetReplayPolicy, SequencePolicy, TwoRoomExpert, ZeroPolicy};
use swm::{
    evaluate, evaluate_from_dataset, ArrayData, Dataset, DatasetWriter, EpisodeRecord, EvalConfig, EvalError,
    OfflineConfig, VariationRequest, World, WorldConfig,
};

fn world(env: &str, n: usize, size: usize) -> World {
    World::with_config(
        env,
        n,
        WorldConfig {
            image_size: size,
            max_steps: None,
        },
    )
    .unwrap()
}

fn expert_dataset(root: &std::path::Path, episodes: usize) -> Dataset {
    let mut w = world(TWO_ROOM_ID, 4, 16);
    w.set_policy(TwoRoomExpert::new());
    let opts = VariationRequest::new(["agent.position", "goal.position"]);
    w.record_dataset(root, "expert", episodes, 0, &opts, false).unwrap();
    Dataset::open(root, "expert").unwrap()
}

#[test]
fn replaying_a_solving_sequence_online_succeeds() {
    let mut probe = world(TWO_ROOM_ID, 1, 16);
    probe.set_policy(TwoRoomExpert::new());
    let task = VariationRequest::new(probe.task_leaves().iter().copied());
    probe.reset(9, &task).unwrap();
    let mut actions = Vec::new();
    while !probe.infos().is_frozen(0) && actions.len() < 50 {
        probe.step().unwrap();
        actions.extend(probe.infos().action.row(0).iter().copied());
    }
    assert!(probe.infos().success[0], "expert must solve the probe episode");
    let seq = Array2::from_shape_vec((actions.len() / 2, 2), actions).unwrap();

    let mut w = world(TWO_ROOM_ID, 1, 16);
    w.set_policy(SequencePolicy::new(seq));
    let config = EvalConfig {
        episodes: 1,
        seed: 9,
        ..EvalConfig::default()
    };
    let report = evaluate(&mut w, &config).unwrap();
    assert_eq!(report.success_rate, 100.0);
    assert_eq!(report.summary(), "Success Rate: 100.0");
}

#[test]
fn zero_policy_never_reaches_a_distant_goal() {
    let mut w = world(TWO_ROOM_ID, 5, 16);
    w.set_policy(ZeroPolicy);
    let config = EvalConfig {
        episodes: 20,
        seed: 0,
        budget: 10,
        ..EvalConfig::default()
    };
    let report = evaluate(&mut w, &config).unwrap();
    assert_eq!(report.results.len(), 20);
    assert_eq!(report.success_rate, 0.0);
    assert!(report.results.iter().all(|r| r.steps == 10));
    // Every episode got its own start and goal.
    let distinct: BTreeSet<String> = report
        .results
        .iter()
        .map(|r| format!("{:?}", r.variation.get("agent.position")))
        .collect();
    assert_eq!(distinct.len(), 20);
}

#[test]
fn online_reports_are_deterministic_and_well_formed() {
    let run = || {
        let mut w = world(TWO_ROOM_ID, 4, 16);
        w.set_policy(TwoRoomExpert::new());
        evaluate(
            &mut w,
            &EvalConfig {
                episodes: 10,
                seed: 3,
                ..EvalConfig::default()
            },
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.episodes, 10);
    assert_eq!(a.success_rate, 100.0 * a.successes as f64 / 10.0);
    let seeds: Vec<u64> = a.results.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, (3..13).collect::<Vec<_>>());
    let parsed: swm::EvalReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(parsed, a);
}

#[test]
fn budget_must_be_positive() {
    let mut w = world(TWO_ROOM_ID, 1, 8);
    w.set_policy(ZeroPolicy);
    let err = evaluate(
        &mut w,
        &EvalConfig {
            budget: 0,
            ..EvalConfig::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, EvalError::Config(_)));
}

#[test]
fn offline_pairs_match_enumeration() {
    for max_gap in 1..=4 {
        let lengths = [10usize, 1, 3, 0, 6];
        let (pairs, skipped) = offline_pairs(&lengths, max_gap);
        assert_eq!(skipped, 2);
        let mut want = Vec::new();
        for (e, &len) in lengths.iter().enumerate() {
            for i in 0..len {
                for j in 0..len {
                    if j > i && j - i <= max_gap {
                        want.push((e, i, j));
                    }
                }
            }
        }
        let got: Vec<_> = pairs.iter().map(|p| (p.episode, p.start, p.goal)).collect();
        assert_eq!(got, want, "max_gap {max_gap}");
    }
}

#[test]
fn pair_sampling_exhausts_before_repeating() {
    let (pairs, _) = offline_pairs(&[10], 3);
    assert_eq!(pairs.len(), 9 + 8 + 7);
    let drawn = sample_pairs(&pairs, 24, 1);
    let unique: BTreeSet<_> = drawn.iter().map(|p| (p.start, p.goal)).collect();
    assert_eq!(unique.len(), 24);
    let more = sample_pairs(&pairs, 60, 1);
    assert_eq!(&more[..24], &drawn[..]);
    assert!(more.iter().all(|p| p.goal > p.start && p.goal - p.start <= 3));
}

#[test]
fn replay_policy_solves_every_offline_episode() {
    let dir = tempfile::tempdir().unwrap();
    let ds = expert_dataset(dir.path(), 8);
    for max_gap in [1, 5, 25] {
        let mut w = world(TWO_ROOM_ID, 3, 16);
        w.set_policy(DatasetReplayPolicy::new(ds.clone()));
        let config = OfflineConfig {
            episodes: 30,
            seed: max_gap as u64,
            max_gap,
            ..OfflineConfig::default()
        };
        let report = evaluate_from_dataset(&mut w, &ds, &config).unwrap();
        assert_eq!(report.results.len(), 30);
        assert_eq!(report.success_rate, 100.0, "max_gap {max_gap}");
        for r in &report.results {
            let src = r.source.unwrap();
            assert!(src.goal > src.start && src.goal - src.start <= max_gap);
            assert!(r.steps <= src.goal - src.start);
            if max_gap == 1 {
                assert_eq!(src.goal, src.start + 1);
            }
            assert_eq!(r.variation, ds.manifest().episodes[src.episode].meta.variation);
        }
    }
}

#[test]
fn offline_rejects_mismatched_or_incomplete_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let ds = expert_dataset(dir.path(), 2);
    let mut w = world(PUSH_T_ID, 1, 16);
    w.set_policy(ZeroPolicy);
    let err = evaluate_from_dataset(&mut w, &ds, &OfflineConfig::default()).unwrap_err();
    assert!(matches!(err, EvalError::EnvMismatch { .. }));

    // A dataset without states.
    let mut writer = DatasetWriter::create(dir.path(), "nostate", TWO_ROOM_ID, false).unwrap();
    let mut rec = EpisodeRecord::default();
    rec.steps
        .insert("action".into(), ArrayData::F32(ArrayD::zeros(IxDyn(&[4, 2]))));
    writer.append(&rec, EpisodeMeta::default()).unwrap();
    writer.finalize().unwrap();
    let ds = Dataset::open(dir.path(), "nostate").unwrap();
    let mut w = world(TWO_ROOM_ID, 1, 16);
    w.set_policy(ZeroPolicy);
    let msg = evaluate_from_dataset(&mut w, &ds, &OfflineConfig::default())
        .unwrap_err()
        .to_string();
    assert!(msg.contains("state") && msg.contains("action"), "{msg}");
}

#[test]
fn short_episodes_are_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let src = expert_dataset(dir.path(), 3);
    // Copy the three expert episodes, then add a single-frame one.
    let mut writer = DatasetWriter::create(dir.path(), "mixed", TWO_ROOM_ID, false).unwrap();
    for i in 0..3 {
        writer
            .append(&src.episode(i).unwrap(), src.manifest().episodes[i].meta.clone())
            .unwrap();
    }
    let mut short = src.episode(0).unwrap();
    for v in short.steps.values_mut() {
        *v = v.rows(0, 1, 1);
    }
    writer.append(&short, src.manifest().episodes[0].meta.clone()).unwrap();
    writer.finalize().unwrap();
    let ds = Dataset::open(dir.path(), "mixed").unwrap();

    let mut w = world(TWO_ROOM_ID, 2, 16);
    w.set_policy(DatasetReplayPolicy::new(ds.clone()));
    let report = evaluate_from_dataset(
        &mut w,
        &ds,
        &OfflineConfig {
            episodes: 7,
            ..OfflineConfig::default()
        },
    )
    .unwrap();
    assert_eq!(report.skipped, 1);
    assert_eq!(report.results.len(), 7);
    assert!(report.results.iter().all(|r| r.source.unwrap().episode != 3));
    assert_eq!(report.success_rate, 100.0);
}
