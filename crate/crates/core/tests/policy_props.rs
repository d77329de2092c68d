mod common;

use common::{replay_model_config, replay_stream_config};
use odl_core::datagen::generate;
use odl_core::event::split_days;
use odl_core::policies::{run_policy, RetrainPolicy};
use odl_core::replay::{batch_holdout_curve, incremental_holdout_curve};

#[test]
fn none_freezes_after_day_one() {
    let stream = generate(&replay_stream_config(3, 0.2, 0.05)).unwrap();
    let config = replay_model_config(3);
    let day1 = split_days(&stream).unwrap()[0].len() as u64;
    let run = run_policy(&RetrainPolicy::none(), &config, &stream, |_, _, _| {}).unwrap();
    assert_eq!(run.state.step_count, day1);
    assert_eq!(run.cost.total_example_updates, day1);
    assert_eq!(run.cost.retrain_sessions, 1);
}

#[test]
fn runs_are_bit_reproducible() {
    let stream = generate(&replay_stream_config(4, 0.2, 0.05)).unwrap();
    let config = replay_model_config(4);
    for policy in [
        RetrainPolicy::stateless(3, 2)
            .with_epochs(2)
            .with_shuffle(true),
        RetrainPolicy::stateful(2),
        RetrainPolicy::online(),
    ] {
        let mut seen_a = Vec::new();
        let mut seen_b = Vec::new();
        let a = run_policy(&policy, &config, &stream, |d, _, p| {
            seen_a.push((d, p.score.to_bits()))
        })
        .unwrap();
        let b = run_policy(&policy, &config, &stream, |d, _, p| {
            seen_b.push((d, p.score.to_bits()))
        })
        .unwrap();
        assert!(a.state.bit_eq(&b.state), "{policy}");
        assert_eq!(a.cost, b.cost);
        assert_eq!(seen_a, seen_b);
    }
}

#[test]
fn stateless_ratio_equals_window_on_uniform_streams() {
    let stream = generate(&replay_stream_config(5, 0.0, 0.0)).unwrap();
    let config = replay_model_config(5);
    for window in [2usize, 3, 5] {
        let stateless = RetrainPolicy::stateless(window, 1);
        let stateful = RetrainPolicy::stateful(1);
        let a = run_policy(&stateless, &config, &stream, |_, _, _| {}).unwrap();
        let b = run_policy(&stateful, &config, &stream, |_, _, _| {}).unwrap();
        let ratio =
            odl_core::policies::common_span_cost_ratio((&stateless, &a.cost), (&stateful, &b.cost))
                .unwrap();
        assert_eq!(ratio, window as f64);
    }
}

/// The recovery half of the incremental-vs-batch property; the convergence
/// speed half is reported by the acceptance gate.
#[test]
fn stateful_recovers_full_history_batch() {
    let stream = generate(&replay_stream_config(7, 0.0, 0.0)).unwrap();
    let config = replay_model_config(7);
    let inc = *incremental_holdout_curve(&config, &stream, 1)
        .unwrap()
        .last()
        .unwrap();
    let batch = *batch_holdout_curve(&config, &stream, 1)
        .unwrap()
        .last()
        .unwrap();
    assert!((inc - batch).abs() / batch <= 0.02, "{inc} vs {batch}");
}
