mod common;

use std::collections::HashSet;

use common::{decay_slope_test, replay_model_config};
use odl_core::datagen::{generate, DriftGenConfig, DriftGenerator};
use odl_core::event::{read_events, split_days, write_events};
use odl_core::model::ModelState;
use odl_core::replay::{
    compute_auc, pretrain_to_convergence, PRETRAIN_MAX_PASSES, PRETRAIN_TOLERANCE,
};

fn base(seed: u64) -> DriftGenConfig {
    DriftGenConfig {
        seed,
        num_users: 60,
        num_items_initial: 40,
        latent_dim: 6,
        days: 6,
        events_per_day: 500,
        drift_rate: 0.2,
        churn_rate: 0.05,
        context_dim: 3,
        label_bias: 0.0,
    }
}

#[test]
fn shape_and_timestamps() {
    let cfg = base(1);
    let events = generate(&cfg).unwrap();
    assert_eq!(events.len(), cfg.days * cfg.events_per_day);
    assert!(events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    assert_eq!(split_days(&events).unwrap().len(), cfg.days);
}

#[test]
fn churn_brings_unseen_items() {
    let events = generate(&base(2)).unwrap();
    let days = split_days(&events).unwrap();
    let first: HashSet<&str> = days[0].iter().map(|e| e.item_id.as_str()).collect();
    assert!(days
        .last()
        .unwrap()
        .iter()
        .any(|e| !first.contains(e.item_id.as_str())));
}

#[test]
fn files_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    write_events(&generate(&base(3)).unwrap(), &a).unwrap();
    write_events(&generate(&base(3)).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_events(&a).unwrap(), generate(&base(3)).unwrap());
}

/// Positive rate under a negative label bias agrees with the ground-truth
/// probabilities of the generated pairs (variance of a sum of Bernoullis).
#[test]
fn label_bias_matches_ground_truth() {
    let cfg = DriftGenConfig {
        drift_rate: 0.0,
        churn_rate: 0.0,
        label_bias: -1.5,
        days: 4,
        events_per_day: 5_000,
        ..base(4)
    };
    let mut g = DriftGenerator::new(cfg).unwrap();
    let (mut positives, mut p_sum, mut var_sum, mut n) = (0.0, 0.0, 0.0, 0.0);
    while let Some(day) = g.next_day() {
        for e in &day {
            let p = g.true_probability(&e.user_id, &e.item_id).unwrap();
            positives += f64::from(e.label);
            p_sum += p;
            var_sum += p * (1.0 - p);
            n += 1.0;
        }
    }
    let (rate, expected, se) = (positives / n, p_sum / n, var_sum.sqrt() / n);
    assert!(expected < 0.3, "bias should push the rate well below 1/2");
    assert!(
        (rate - expected).abs() <= 3.0 * se,
        "{rate:.4} vs {expected:.4} ± {se:.4}"
    );
}

/// Per-day AUC of a model pretrained on day 1 and then frozen.
fn frozen_auc_series(drift_rate: f64, seed: u64) -> Vec<f64> {
    let stream = generate(&DriftGenConfig {
        seed,
        num_users: 40,
        num_items_initial: 20,
        latent_dim: 4,
        days: 14,
        events_per_day: 10_000,
        drift_rate,
        churn_rate: 0.0,
        context_dim: 0,
        label_bias: 0.0,
    })
    .unwrap();
    let days = split_days(&stream).unwrap();
    let config = replay_model_config(seed);
    let mut state = ModelState::init(&config).unwrap();
    pretrain_to_convergence(&mut state, days[0], PRETRAIN_TOLERANCE, PRETRAIN_MAX_PASSES).unwrap();
    days[1..]
        .iter()
        .map(|day| {
            let scored: Vec<(f64, u8)> = day
                .iter()
                .map(|e| (state.predict_event(e).unwrap().score, e.label))
                .collect();
            compute_auc(&scored).unwrap().unwrap()
        })
        .collect()
}

#[test]
fn zero_drift_shows_no_significant_decay() {
    let (slope, p) = decay_slope_test(&frozen_auc_series(0.0, 7));
    assert!(p >= 0.01, "slope {slope:.5}, p = {p:.4}");
}

#[test]
fn drift_shows_significant_decay() {
    let (slope, p) = decay_slope_test(&frozen_auc_series(0.2, 7));
    assert!(slope < 0.0 && p < 0.01, "slope {slope:.5}, p = {p:.4}");
}
