//! Prequential replay: pre-train offline, then walk the remaining log under a
//! retraining policy, scoring every event before any update can use it.
//!
//! The last day of the stream is a hold-out that no policy trains on. It is
//! scored by the final model and also counts towards the prequential series.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{split_days, Event};
use crate::model::{log_loss, ModelConfig, ModelState};
use crate::policies::{
    cost_ratio, run_policy, run_policy_from, train_passes, CostMeter, RetrainPolicy,
};

/// Pre-training stops once a pass improves mean training loss by less than this (relative).
pub const PRETRAIN_TOLERANCE: f64 = 1e-3;
pub const PRETRAIN_MAX_PASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsWindow {
    #[default]
    PerDay,
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySpec {
    pub pretrain_days: usize,
    pub policy: RetrainPolicy,
    pub metrics_window: MetricsWindow,
}

impl ReplaySpec {
    pub fn new(pretrain_days: usize, policy: RetrainPolicy) -> Self {
        ReplaySpec {
            pretrain_days,
            policy,
            metrics_window: MetricsWindow::PerDay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    /// 1-based day within the whole stream.
    pub day: usize,
    pub events: usize,
    pub log_loss: f64,
    /// `None` when the window holds a single label class.
    pub auc: Option<f64>,
}

/// Identifies the evaluated part of a stream; reports are only comparable
/// when these agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSpan {
    pub first_calendar_day: i64,
    pub days: usize,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainOutcome {
    pub passes: usize,
    pub pass_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub policy: RetrainPolicy,
    pub metrics_window: MetricsWindow,
    pub days: Vec<DayMetrics>,
    pub cumulative_auc: Option<f64>,
    pub cumulative_auc_se: Option<f64>,
    pub cumulative_log_loss: f64,
    pub final_holdout_log_loss: f64,
    pub cost: CostMeter,
    pub pretrain: PretrainOutcome,
    pub span: EvalSpan,
    /// Every recorded `(score, label)` pair, in stream order.
    pub scored: Vec<(f64, u8)>,
    pub final_state: ModelState,
}

/// Trains full passes until the relative improvement of mean training loss
/// between consecutive passes drops below `tolerance`, or `max_passes` is hit.
pub fn pretrain_to_convergence(
    state: &mut ModelState,
    events: &[Event],
    tolerance: f64,
    max_passes: usize,
) -> Result<PretrainOutcome> {
    let mut pass_losses: Vec<f64> = Vec::new();
    if events.is_empty() {
        return Ok(PretrainOutcome {
            passes: 0,
            pass_losses,
        });
    }
    while pass_losses.len() < max_passes {
        let loss = train_passes(state, events, 1, None)?;
        let converged = pass_losses
            .last()
            .is_some_and(|&prev| (prev - loss) / prev < tolerance);
        pass_losses.push(loss);
        if converged {
            break;
        }
    }
    Ok(PretrainOutcome {
        passes: pass_losses.len(),
        pass_losses,
    })
}

fn day_offsets(days: &[&[Event]]) -> Vec<usize> {
    let mut offsets = vec![0];
    for d in days {
        offsets.push(offsets.last().unwrap() + d.len());
    }
    offsets
}

#[derive(Default)]
struct DayAccumulator {
    loss_sum: f64,
    scored: Vec<(f64, u8)>,
}

impl DayAccumulator {
    fn push(&mut self, score: f64, probability: f64, label: u8) {
        self.loss_sum += log_loss(probability, label);
        self.scored.push((score, label));
    }
}

pub fn replay(spec: &ReplaySpec, config: &ModelConfig, stream: &[Event]) -> Result<ReplayReport> {
    spec.policy.validate()?;
    let days = split_days(stream)?;
    let total_days = days.len();
    if spec.pretrain_days >= total_days {
        return Err(Error::Config(format!(
            "pretrain_days ({}) must be less than the stream's {} days",
            spec.pretrain_days, total_days
        )));
    }
    let offsets = day_offsets(&days);
    let first_calendar_day = stream[0].day();
    let pretrain_span = &stream[..offsets[spec.pretrain_days]];
    let train_span = &stream[offsets[spec.pretrain_days]..offsets[total_days - 1]];
    let holdout = days[total_days - 1];

    let mut state = ModelState::init(config)?;
    let pretrain = pretrain_to_convergence(
        &mut state,
        pretrain_span,
        PRETRAIN_TOLERANCE,
        PRETRAIN_MAX_PASSES,
    )?;

    let eval_days = total_days - spec.pretrain_days;
    let mut acc: Vec<DayAccumulator> = (0..eval_days).map(|_| DayAccumulator::default()).collect();
    let slot = |e: &Event| (e.day() - first_calendar_day) as usize - spec.pretrain_days;

    let run = run_policy_from(&spec.policy, config, state, train_span, |_, event, p| {
        acc[slot(event)].push(p.score, p.probability, event.label);
    })?;
    let final_state = run.state;

    let holdout_slot = eval_days - 1;
    for event in holdout {
        let p = final_state.predict_event(event)?;
        acc[holdout_slot].push(p.score, p.probability, event.label);
    }
    let final_holdout_log_loss = acc[holdout_slot].loss_sum / holdout.len() as f64;

    let mut series = Vec::with_capacity(eval_days);
    let mut running = DayAccumulator::default();
    for (i, day) in acc.iter().enumerate() {
        let window = match spec.metrics_window {
            MetricsWindow::PerDay => day,
            MetricsWindow::Cumulative => {
                running.loss_sum += day.loss_sum;
                running.scored.extend_from_slice(&day.scored);
                &running
            }
        };
        let events = window.scored.len();
        series.push(DayMetrics {
            day: spec.pretrain_days + i + 1,
            events,
            log_loss: if events == 0 {
                f64::NAN
            } else {
                window.loss_sum / events as f64
            },
            auc: if events == 0 {
                None
            } else {
                compute_auc(&window.scored)?
            },
        });
    }
    if spec.metrics_window == MetricsWindow::Cumulative {
        // cumulative rows report the per-day event count
        for (row, day) in series.iter_mut().zip(&acc) {
            row.events = day.scored.len();
        }
    }

    let scored: Vec<(f64, u8)> = acc.iter().flat_map(|d| d.scored.iter().copied()).collect();
    let total_loss: f64 = acc.iter().map(|d| d.loss_sum).sum();
    let cumulative_auc = compute_auc(&scored)?;
    let cumulative_auc_se = cumulative_auc.map(|a| auc_standard_error(a, &scored));
    Ok(ReplayReport {
        policy: spec.policy,
        metrics_window: spec.metrics_window,
        days: series,
        cumulative_auc,
        cumulative_auc_se,
        cumulative_log_loss: total_loss / scored.len() as f64,
        final_holdout_log_loss,
        cost: run.cost,
        pretrain,
        span: EvalSpan {
            first_calendar_day: first_calendar_day + spec.pretrain_days as i64,
            days: eval_days,
            events: scored.len(),
        },
        scored,
        final_state,
    })
}

/// Mann-Whitney AUC with average ranks for tied scores. `Ok(None)` when only
/// one label class is present.
pub fn compute_auc(scored: &[(f64, u8)]) -> Result<Option<f64>> {
    if scored.is_empty() {
        return Err(Error::Data("AUC of an empty set".into()));
    }
    let positives = scored.iter().filter(|(_, y)| *y == 1).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Ok(None);
    }
    let mut sorted: Vec<(f64, u8)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let rank = (i + j + 2) as f64 / 2.0;
        let tied_positives = sorted[i..=j].iter().filter(|(_, y)| *y == 1).count();
        positive_rank_sum += rank * tied_positives as f64;
        i = j + 1;
    }
    let np = positives as f64;
    let nn = negatives as f64;
    Ok(Some(
        (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn),
    ))
}

/// Hanley-McNeil standard error of an AUC estimate.
pub fn auc_standard_error(auc: f64, scored: &[(f64, u8)]) -> f64 {
    let np = scored.iter().filter(|(_, y)| *y == 1).count() as f64;
    let nn = scored.len() as f64 - np;
    let q1 = auc / (2.0 - auc);
    let q2 = 2.0 * auc * auc / (1.0 + auc);
    let var = (auc * (1.0 - auc) + (np - 1.0) * (q1 - auc * auc) + (nn - 1.0) * (q2 - auc * auc))
        / (np * nn);
    var.max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftRow {
    pub policy: String,
    pub cumulative_auc: f64,
    pub relative_auc_lift_percent: f64,
    pub cost_ratio: f64,
}

/// Relative cumulative-AUC lift and cost ratio of each report against `reports[baseline]`.
pub fn lift_table(reports: &[ReplayReport], baseline: usize) -> Result<Vec<LiftRow>> {
    if reports.len() < 2 {
        return Err(Error::Comparison("need at least two reports".into()));
    }
    let base = reports
        .get(baseline)
        .ok_or_else(|| Error::Comparison(format!("baseline index {baseline} out of range")))?;
    let auc_of = |r: &ReplayReport| {
        r.cumulative_auc
            .ok_or_else(|| Error::Comparison(format!("{} has undefined AUC", r.policy)))
    };
    let base_auc = auc_of(base)?;
    reports
        .iter()
        .map(|r| {
            if r.span != base.span {
                return Err(Error::Comparison(format!(
                    "{} was evaluated on {:?}, baseline on {:?}",
                    r.policy, r.span, base.span
                )));
            }
            let auc = auc_of(r)?;
            Ok(LiftRow {
                policy: r.policy.to_string(),
                cumulative_auc: auc,
                relative_auc_lift_percent: 100.0 * (auc - base_auc) / base_auc,
                cost_ratio: cost_ratio(&r.cost, &base.cost)?,
            })
        })
        .collect()
}

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "NA".to_string(), |a| a.to_string())
}

pub fn write_metrics_csv<W: Write>(report: &ReplayReport, out: &mut W) -> Result<()> {
    writeln!(out, "day,policy,events,log_loss,auc")?;
    for d in &report.days {
        writeln!(
            out,
            "{},{},{},{},{}",
            d.day,
            report.policy,
            d.events,
            d.log_loss,
            fmt_auc(d.auc)
        )?;
    }
    Ok(())
}

pub fn write_lift_csv<W: Write>(rows: &[LiftRow], out: &mut W) -> Result<()> {
    writeln!(
        out,
        "policy,relative_auc_lift_percent,cost_ratio,cumulative_auc"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.policy, r.relative_auc_lift_percent, r.cost_ratio, r.cumulative_auc
        )?;
    }
    Ok(())
}

/// JSON summary written next to the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub policy: RetrainPolicy,
    pub cumulative_auc: Option<f64>,
    pub final_holdout_log_loss: f64,
    pub total_example_updates: u64,
    pub retrain_sessions: u64,
    pub cumulative_auc_se: Option<f64>,
    pub cumulative_log_loss: f64,
    pub evaluated_events: usize,
    pub pretrain_passes: usize,
    pub updates_by_day: Vec<u64>,
}

impl ReplayReport {
    pub fn summary(&self) -> ReplaySummary {
        ReplaySummary {
            policy: self.policy,
            cumulative_auc: self.cumulative_auc,
            final_holdout_log_loss: self.final_holdout_log_loss,
            total_example_updates: self.cost.total_example_updates,
            retrain_sessions: self.cost.retrain_sessions,
            cumulative_auc_se: self.cumulative_auc_se,
            cumulative_log_loss: self.cumulative_log_loss,
            evaluated_events: self.span.events,
            pretrain_passes: self.pretrain.passes,
            updates_by_day: self.cost.updates_by_day.clone(),
        }
    }
}

fn mean_loss(state: &ModelState, events: &[Event]) -> Result<f64> {
    let mut total = 0.0;
    for e in events {
        total += log_loss(state.predict_event(e)?.probability, e.label);
    }
    Ok(total / events.len() as f64)
}

/// Hold-out (last day) log loss of the stateful daily model after each
/// training day `1..T-1`.
pub fn incremental_holdout_curve(
    config: &ModelConfig,
    stream: &[Event],
    epochs: usize,
) -> Result<Vec<f64>> {
    let days = split_days(stream)?;
    let (holdout, train_days) = days
        .split_last()
        .ok_or_else(|| Error::Data("empty stream".into()))?;
    let policy = RetrainPolicy::stateful(1).with_epochs(epochs);
    let mut state = ModelState::init(config)?;
    let mut curve = Vec::with_capacity(train_days.len());
    for day in train_days {
        state = run_policy_from(&policy, config, state, day, |_, _, _| {})?.state;
        curve.push(mean_loss(&state, holdout)?);
    }
    Ok(curve)
}

/// Hold-out log loss of a model retrained from scratch on days `1..=d`, for
/// every training day `d` (a growing batch window).
pub fn batch_holdout_curve(
    config: &ModelConfig,
    stream: &[Event],
    epochs: usize,
) -> Result<Vec<f64>> {
    let days = split_days(stream)?;
    let (holdout, train_days) = days
        .split_last()
        .ok_or_else(|| Error::Data("empty stream".into()))?;
    let offsets = day_offsets(train_days);
    (1..=train_days.len())
        .map(|d| {
            let policy = RetrainPolicy::stateless(d, 1).with_epochs(epochs);
            let state = run_policy(&policy, config, &stream[..offsets[d]], |_, _, _| {})?.state;
            mean_loss(&state, holdout)
        })
        .collect()
}

/// First 1-based index at which `curve` lies within `rel_tol` of its last value.
pub fn days_to_converge(curve: &[f64], rel_tol: f64) -> Option<usize> {
    let last = *curve.last()?;
    curve
        .iter()
        .position(|&x| (x - last).abs() <= rel_tol * last)
        .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::SECONDS_PER_DAY;
    use crate::hashing::HashConfig;

    fn brute_force_auc(scored: &[(f64, u8)]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for &(sp, yp) in scored {
            for &(sn, yn) in scored {
                if yp == 1 && yn == 0 {
                    pairs += 1.0;
                    wins += if sp > sn {
                        1.0
                    } else if sp == sn {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        let perfect = [(0.1, 0), (0.2, 0), (0.8, 1), (0.9, 1)];
        assert_eq!(compute_auc(&perfect).unwrap(), Some(1.0));
        assert_eq!(compute_auc(&[(0.3, 1), (0.4, 1)]).unwrap(), None);
        let given = [(0.1, 0), (0.4, 1), (0.35, 0), (0.8, 1)];
        assert_eq!(brute_force_auc(&given), 1.0);
        assert_eq!(compute_auc(&given).unwrap(), Some(1.0));
        assert!(compute_auc(&[]).is_err());
    }

    #[test]
    fn auc_ties_average() {
        let tied = [(0.5, 0), (0.5, 1), (0.5, 1), (0.2, 0), (0.7, 0)];
        let a = compute_auc(&tied).unwrap().unwrap();
        assert!((a - brute_force_auc(&tied)).abs() < 1e-12);
    }

    #[test]
    fn auc_standard_error_is_small_for_large_samples() {
        let mut scored = Vec::new();
        for i in 0..2000 {
            scored.push((i as f64, (i % 2) as u8));
        }
        let a = compute_auc(&scored).unwrap().unwrap();
        let se = auc_standard_error(a, &scored);
        assert!(se > 0.0 && se < 0.02, "{se}");
    }

    fn balanced_stream(days: usize, per_day: usize) -> Vec<Event> {
        (0..days)
            .flat_map(|d| {
                (0..per_day).map(move |j| Event {
                    timestamp: (d as i64) * SECONDS_PER_DAY + j as i64,
                    user_id: format!("u{}", j % 5),
                    item_id: format!("i{}", j % 3),
                    context: vec![],
                    label: (j % 2) as u8,
                })
            })
            .collect()
    }

    fn zero_config() -> ModelConfig {
        ModelConfig {
            embedding_dim: 2,
            init_scale: 0.0,
            hash_user: HashConfig::single(16, 1),
            hash_item: HashConfig::single(16, 2),
            ..ModelConfig::default()
        }
    }

    #[test]
    fn untrained_zero_model_scores_ln2() {
        let stream = balanced_stream(3, 64);
        let report = replay(
            &ReplaySpec::new(0, RetrainPolicy::none()),
            &zero_config(),
            &stream,
        )
        .unwrap();
        assert!((report.days[0].log_loss - std::f64::consts::LN_2).abs() < 1e-12);
        let single_day = balanced_stream(1, 64);
        let report = replay(
            &ReplaySpec::new(0, RetrainPolicy::none()),
            &zero_config(),
            &single_day,
        )
        .unwrap();
        assert!((report.final_holdout_log_loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(report.cost.total_example_updates, 0);
    }

    #[test]
    fn events_sum_to_evaluated_span() {
        let stream = balanced_stream(5, 20);
        for window in [MetricsWindow::PerDay, MetricsWindow::Cumulative] {
            let spec = ReplaySpec {
                metrics_window: window,
                ..ReplaySpec::new(2, RetrainPolicy::stateful(1))
            };
            let report = replay(&spec, &zero_config(), &stream).unwrap();
            assert_eq!(report.days.len(), 3);
            assert_eq!(report.days.iter().map(|d| d.events).sum::<usize>(), 60);
            assert_eq!(report.days[0].day, 3);
            assert!(report.days.iter().all(|d| d.log_loss >= 0.0));
            // the hold-out day is never trained on
            assert_eq!(report.cost.total_example_updates, 40);
        }
    }

    #[test]
    fn pretrain_days_must_leave_room() {
        let stream = balanced_stream(3, 4);
        let err = replay(
            &ReplaySpec::new(3, RetrainPolicy::none()),
            &zero_config(),
            &stream,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn pretraining_stops_on_plateau() {
        let stream = balanced_stream(1, 50);
        let mut state = ModelState::init(&zero_config()).unwrap();
        let outcome = pretrain_to_convergence(&mut state, &stream, 1e-3, 10).unwrap();
        assert!(outcome.passes >= 2 && outcome.passes <= 10);
        let mut capped = ModelState::init(&zero_config()).unwrap();
        let outcome = pretrain_to_convergence(&mut capped, &stream, -1.0, 3).unwrap();
        assert_eq!(outcome.passes, 3);
    }

    #[test]
    fn lift_table_identity_and_shape() {
        let stream = balanced_stream(4, 30);
        let a = replay(
            &ReplaySpec::new(1, RetrainPolicy::stateful(1)),
            &ModelConfig::default(),
            &stream,
        )
        .unwrap();
        let rows = lift_table(&[a.clone(), a.clone()], 0).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].relative_auc_lift_percent, 0.0);
        assert_eq!(rows[1].cost_ratio, 1.0);
        assert!(lift_table(std::slice::from_ref(&a), 0).is_err());
        assert!(lift_table(&[a.clone(), a.clone()], 5).is_err());
        let b = replay(
            &ReplaySpec::new(2, RetrainPolicy::stateful(1)),
            &ModelConfig::default(),
            &stream,
        )
        .unwrap();
        assert!(matches!(lift_table(&[a, b], 0), Err(Error::Comparison(_))));
    }

    #[test]
    fn csv_layout() {
        let stream = balanced_stream(2, 10);
        let report = replay(
            &ReplaySpec::new(0, RetrainPolicy::online()),
            &zero_config(),
            &stream,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "day,policy,events,log_loss,auc");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,online,10,"));
    }

    #[test]
    fn convergence_index() {
        assert_eq!(days_to_converge(&[1.0, 0.8, 0.62, 0.6], 0.05), Some(3));
        assert_eq!(days_to_converge(&[0.6], 0.05), Some(1));
        assert_eq!(days_to_converge(&[], 0.05), None);
    }
}
