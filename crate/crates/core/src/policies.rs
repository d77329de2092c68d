//! Retraining regimes and the update-count cost meter.
//!
//! A policy run walks an ordered stream one calendar day at a time. Every
//! event is shown to the evaluation hook with the prediction of the model as
//! it stands, before any update that uses the event. Retraining happens at
//! the end of a boundary day, so a model trained through day `d` first
//! serves day `d + 1`.
//!
//! Session boundaries, with `c` the cadence and `n` the window:
//!
//! | policy       | boundary days              | trains on                      |
//! |--------------|----------------------------|--------------------------------|
//! | `none`       | day 1 only                 | day 1                          |
//! | `stateful`   | 1, 1 + c, 1 + 2c, ...      | days since previous boundary   |
//! | `stateless`  | n, n + c, n + 2c, ...      | trailing n days, fresh init    |
//! | `online`     | none (per event)           | each event after its prediction|

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{split_days, Event};
use crate::model::{ModelConfig, ModelState, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    None,
    StatelessWindow,
    StatefulIncremental,
    FullyOnline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RetrainPolicy {
    pub kind: PolicyKind,
    /// Trailing window length; only meaningful for `StatelessWindow`.
    pub window_days: usize,
    pub cadence_days: usize,
    pub epochs_per_retrain: usize,
    /// Shuffle each session's training events (seeded). Off by default.
    pub shuffle: bool,
}

impl RetrainPolicy {
    fn with(kind: PolicyKind, window_days: usize, cadence_days: usize) -> Self {
        RetrainPolicy {
            kind,
            window_days,
            cadence_days,
            epochs_per_retrain: 1,
            shuffle: false,
        }
    }

    pub fn none() -> Self {
        Self::with(PolicyKind::None, 1, 1)
    }

    pub fn stateless(window_days: usize, cadence_days: usize) -> Self {
        Self::with(PolicyKind::StatelessWindow, window_days, cadence_days)
    }

    pub fn stateful(cadence_days: usize) -> Self {
        Self::with(PolicyKind::StatefulIncremental, 1, cadence_days)
    }

    pub fn online() -> Self {
        Self::with(PolicyKind::FullyOnline, 1, 1)
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs_per_retrain = epochs;
        self
    }

    pub fn with_shuffle(mut self, shuffle: bool) -> Self {
        self.shuffle = shuffle;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 {
            return Err(Error::Config("window_days must be at least 1".into()));
        }
        if self.cadence_days == 0 {
            return Err(Error::Config("cadence_days must be at least 1".into()));
        }
        if self.epochs_per_retrain == 0 {
            return Err(Error::Config(
                "epochs_per_retrain must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Whether a retraining session runs at the end of 1-based day `day`.
    pub fn is_boundary(&self, day: usize) -> bool {
        match self.kind {
            PolicyKind::None => day == 1,
            PolicyKind::StatefulIncremental => (day - 1).is_multiple_of(self.cadence_days),
            PolicyKind::StatelessWindow => {
                day >= self.window_days
                    && (day - self.window_days).is_multiple_of(self.cadence_days)
            }
            PolicyKind::FullyOnline => false,
        }
    }

    /// Last day whose events have not yet influenced any model under this policy,
    /// i.e. the first day a trained model can exist after.
    pub fn first_session_day(&self) -> usize {
        match self.kind {
            PolicyKind::StatelessWindow => self.window_days,
            _ => 1,
        }
    }
}

impl fmt::Display for RetrainPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PolicyKind::None => write!(f, "none")?,
            PolicyKind::FullyOnline => write!(f, "online")?,
            PolicyKind::StatefulIncremental => write!(f, "stateful:{}", self.cadence_days)?,
            PolicyKind::StatelessWindow => {
                write!(f, "stateless:{}:{}", self.window_days, self.cadence_days)?
            }
        }
        if self.epochs_per_retrain != 1 {
            write!(f, "x{}", self.epochs_per_retrain)?;
        }
        Ok(())
    }
}

/// Parses `none`, `online`, `stateful[:cadence]`, `stateless:window[:cadence]`,
/// and the aliases `stateful-daily` / `stateful-weekly`, each optionally
/// followed by `xE` for E epochs per session (`stateful:1x3`).
impl FromStr for RetrainPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognized policy `{s}`"));
        let (body, epochs) = match s.rsplit_once('x') {
            Some((body, e))
                if !body.is_empty() && e.chars().all(|c| c.is_ascii_digit()) && !e.is_empty() =>
            {
                (body, e.parse::<usize>().map_err(|_| bad())?)
            }
            _ => (s, 1),
        };
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let parts: Vec<&str> = body.split(':').collect();
        let policy = match parts.as_slice() {
            ["none"] => RetrainPolicy::none(),
            ["online"] => RetrainPolicy::online(),
            ["stateful"] | ["stateful-daily"] => RetrainPolicy::stateful(1),
            ["stateful-weekly"] => RetrainPolicy::stateful(7),
            ["stateful", c] => RetrainPolicy::stateful(num(c)?),
            ["stateless", w] => RetrainPolicy::stateless(num(w)?, 1),
            ["stateless", w, c] => RetrainPolicy::stateless(num(w)?, num(c)?),
            _ => return Err(bad()),
        }
        .with_epochs(epochs);
        policy.validate()?;
        Ok(policy)
    }
}

impl Serialize for RetrainPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RetrainPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Counts every SGD step a policy performs. Totals depend only on the policy
/// and the stream, never on wall-clock time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMeter {
    pub total_example_updates: u64,
    pub retrain_sessions: u64,
    /// Updates attributed to each 1-based day (index 0 is day 1).
    pub updates_by_day: Vec<u64>,
    pub sessions_by_day: Vec<u64>,
}

impl CostMeter {
    fn with_days(days: usize) -> Self {
        CostMeter {
            updates_by_day: vec![0; days],
            sessions_by_day: vec![0; days],
            ..Default::default()
        }
    }

    fn record(&mut self, day: usize, updates: u64, sessions: u64) {
        self.total_example_updates += updates;
        self.retrain_sessions += sessions;
        self.updates_by_day[day - 1] += updates;
        self.sessions_by_day[day - 1] += sessions;
    }

    /// The meter restricted to sessions on days `first_day..`.
    pub fn since_day(&self, first_day: usize) -> CostMeter {
        let skip = first_day.saturating_sub(1);
        let updates_by_day: Vec<u64> = self.updates_by_day.iter().skip(skip).copied().collect();
        let sessions_by_day: Vec<u64> = self.sessions_by_day.iter().skip(skip).copied().collect();
        CostMeter {
            total_example_updates: updates_by_day.iter().sum(),
            retrain_sessions: sessions_by_day.iter().sum(),
            updates_by_day,
            sessions_by_day,
        }
    }
}

/// Ratio of example updates, `numerator / denominator`.
pub fn cost_ratio(numerator: &CostMeter, denominator: &CostMeter) -> Result<f64> {
    if denominator.total_example_updates == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(numerator.total_example_updates as f64 / denominator.total_example_updates as f64)
}

/// Cost ratio over the span where both policies have produced a model: days
/// from the later of the two first-session days onward.
pub fn common_span_cost_ratio(
    numerator: (&RetrainPolicy, &CostMeter),
    denominator: (&RetrainPolicy, &CostMeter),
) -> Result<f64> {
    let from = numerator
        .0
        .first_session_day()
        .max(denominator.0.first_session_day());
    cost_ratio(&numerator.1.since_day(from), &denominator.1.since_day(from))
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub state: ModelState,
    pub cost: CostMeter,
}

/// Runs `epochs` passes of SGD over `events`; returns the mean loss of the last pass.
pub fn train_passes(
    state: &mut ModelState,
    events: &[Event],
    epochs: usize,
    shuffle_seed: Option<u64>,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    let mut rng = shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    let mut mean = 0.0;
    for _ in 0..epochs {
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        let mut total = 0.0;
        for &i in &order {
            total += state.sgd_step(&events[i])?;
        }
        mean = if events.is_empty() {
            0.0
        } else {
            total / events.len() as f64
        };
    }
    Ok(mean)
}

/// [`run_policy_from`] starting at `ModelState::init(config)`.
pub fn run_policy<F>(
    policy: &RetrainPolicy,
    config: &ModelConfig,
    stream: &[Event],
    eval_hook: F,
) -> Result<PolicyRun>
where
    F: FnMut(usize, &Event, &Prediction),
{
    run_policy_from(policy, config, ModelState::init(config)?, stream, eval_hook)
}

/// Walks `stream` day by day under `policy`, starting from `initial`.
///
/// `eval_hook(day, event, prediction)` sees every event, with `day` 1-based
/// relative to the first day of `stream`. Stateless sessions re-initialize
/// from `config` on RNG stream `session + 1`.
pub fn run_policy_from<F>(
    policy: &RetrainPolicy,
    config: &ModelConfig,
    initial: ModelState,
    stream: &[Event],
    mut eval_hook: F,
) -> Result<PolicyRun>
where
    F: FnMut(usize, &Event, &Prediction),
{
    policy.validate()?;
    let days = split_days(stream)?;
    let mut offsets = Vec::with_capacity(days.len() + 1);
    offsets.push(0);
    for day in &days {
        offsets.push(offsets.last().unwrap() + day.len());
    }
    // events of 1-based days first..=last
    let span = |first: usize, last: usize| &stream[offsets[first - 1]..offsets[last]];

    let mut state = initial;
    let mut cost = CostMeter::with_days(days.len());
    let mut trained_through = 0;
    let mut sessions = 0u64;

    for (idx, events) in days.iter().enumerate() {
        let day = idx + 1;
        if policy.kind == PolicyKind::FullyOnline {
            for event in *events {
                let prediction = state.predict_event(event)?;
                eval_hook(day, event, &prediction);
                state.sgd_step(event)?;
            }
            if !events.is_empty() {
                cost.record(day, events.len() as u64, 1);
            }
            continue;
        }

        for event in *events {
            let prediction = state.predict_event(event)?;
            eval_hook(day, event, &prediction);
        }
        if !policy.is_boundary(day) {
            continue;
        }
        let shuffle_seed = policy
            .shuffle
            .then(|| config.seed ^ sessions.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let batch = match policy.kind {
            PolicyKind::StatelessWindow => {
                state = ModelState::init_with_stream(config, sessions + 1)?;
                span(day + 1 - policy.window_days, day)
            }
            _ => span(trained_through + 1, day),
        };
        train_passes(&mut state, batch, policy.epochs_per_retrain, shuffle_seed)?;
        cost.record(day, (batch.len() * policy.epochs_per_retrain) as u64, 1);
        trained_through = day;
        sessions += 1;
    }
    Ok(PolicyRun { state, cost })
}
