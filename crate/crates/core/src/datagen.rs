//! Seeded synthetic interaction streams with concept drift and catalog churn.
//!
//! Users and items carry ground-truth latent vectors. Each day boundary moves
//! every latent by a Gaussian random-walk step and replaces a fraction of the
//! catalog with fresh item ids. Labels are Bernoulli draws from
//! `σ(<θ_u, φ_i> + label_bias)`; context features are pure noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, SECONDS_PER_DAY};
use crate::model::sigmoid;

/// Day 0 of every generated stream: 2021-01-01T00:00:00Z.
pub const STREAM_EPOCH: i64 = 1_609_459_200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftGenConfig {
    pub seed: u64,
    pub num_users: usize,
    pub num_items_initial: usize,
    pub latent_dim: usize,
    pub days: usize,
    pub events_per_day: usize,
    /// Per-day random-walk standard deviation of every latent coordinate.
    pub drift_rate: f64,
    /// Fraction of the catalog retired and replaced each day.
    pub churn_rate: f64,
    pub context_dim: usize,
    pub label_bias: f64,
}

impl Default for DriftGenConfig {
    fn default() -> Self {
        DriftGenConfig {
            seed: 0,
            num_users: 500,
            num_items_initial: 300,
            latent_dim: 8,
            days: 12,
            events_per_day: 2000,
            drift_rate: 0.2,
            churn_rate: 0.05,
            context_dim: 0,
            label_bias: 0.0,
        }
    }
}

impl DriftGenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_users", self.num_users),
            ("num_items_initial", self.num_items_initial),
            ("latent_dim", self.latent_dim),
            ("days", self.days),
            ("events_per_day", self.events_per_day),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.drift_rate.is_finite() && self.drift_rate >= 0.0) {
            return Err(Error::Config("drift_rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.churn_rate) {
            return Err(Error::Config("churn_rate must lie in [0, 1]".into()));
        }
        if !self.label_bias.is_finite() {
            return Err(Error::Config("label_bias must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Item {
    id: String,
    latent: Vec<f64>,
}

/// Day-by-day generator exposing its ground truth, so tests can compare a
/// learner against the process that produced the labels.
#[derive(Debug, Clone)]
pub struct DriftGenerator {
    config: DriftGenConfig,
    rng: ChaCha8Rng,
    users: Vec<Vec<f64>>,
    items: Vec<Item>,
    next_item_id: usize,
    churn_carry: f64,
    day: usize,
}

impl DriftGenerator {
    pub fn new(config: DriftGenConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // latent coordinates have variance 1/sqrt(k), so <θ, φ> has unit variance
        let std = (config.latent_dim as f64).powf(-0.25);
        let init = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let k = config.latent_dim;
        let users = (0..config.num_users)
            .map(|_| (0..k).map(|_| init.sample(&mut rng)).collect())
            .collect();
        let items = (0..config.num_items_initial)
            .map(|i| Item {
                id: format!("item-{i}"),
                latent: (0..k).map(|_| init.sample(&mut rng)).collect(),
            })
            .collect();
        Ok(DriftGenerator {
            next_item_id: config.num_items_initial,
            config,
            rng,
            users,
            items,
            churn_carry: 0.0,
            day: 0,
        })
    }

    pub fn user_id(u: usize) -> String {
        format!("user-{u}")
    }

    /// Days generated so far.
    pub fn day(&self) -> usize {
        self.day
    }

    pub fn user_latents(&self) -> &[Vec<f64>] {
        &self.users
    }

    pub fn item_latents(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.items
            .iter()
            .map(|i| (i.id.as_str(), i.latent.as_slice()))
    }

    pub fn active_item_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.id.as_str())
    }

    /// Ground-truth positive probability for a currently active (user, item) pair.
    pub fn true_probability(&self, user_id: &str, item_id: &str) -> Option<f64> {
        let u: usize = user_id.strip_prefix("user-")?.parse().ok()?;
        let theta = self.users.get(u)?;
        let phi = &self.items.iter().find(|i| i.id == item_id)?.latent;
        let dot: f64 = theta.iter().zip(phi).map(|(a, b)| a * b).sum();
        Some(sigmoid(dot + self.config.label_bias))
    }

    fn advance_day(&mut self) {
        let k = self.config.latent_dim;
        if self.config.drift_rate > 0.0 {
            let step = self.config.drift_rate;
            for latent in self
                .users
                .iter_mut()
                .chain(self.items.iter_mut().map(|i| &mut i.latent))
            {
                for x in latent.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    *x += step * z;
                }
            }
        }
        self.churn_carry += self.config.churn_rate * self.items.len() as f64;
        let retire = (self.churn_carry.floor() as usize).min(self.items.len());
        self.churn_carry -= retire as f64;
        if retire > 0 {
            let std = (k as f64).powf(-0.25);
            let picks = rand::seq::index::sample(&mut self.rng, self.items.len(), retire);
            let mut picks = picks.into_vec();
            picks.sort_unstable();
            for slot in picks {
                let latent = (0..k)
                    .map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut self.rng))
                    .collect::<Vec<f64>>();
                self.items[slot] = Item {
                    id: format!("item-{}", self.next_item_id),
                    latent,
                };
                self.next_item_id += 1;
            }
        }
    }

    /// Generates the next day's events, applying drift and churn first on
    /// every day after the first. Returns `None` once all days are produced.
    pub fn next_day(&mut self) -> Option<Vec<Event>> {
        if self.day >= self.config.days {
            return None;
        }
        if self.day > 0 {
            self.advance_day();
        }
        let n = self.config.events_per_day;
        let day_start = STREAM_EPOCH + self.day as i64 * SECONDS_PER_DAY;
        let mut events = Vec::with_capacity(n);
        for j in 0..n {
            let u = self.rng.random_range(0..self.users.len());
            let i = self.rng.random_range(0..self.items.len());
            let context: Vec<f64> = (0..self.config.context_dim)
                .map(|_| StandardNormal.sample(&mut self.rng))
                .collect();
            let dot: f64 = self.users[u]
                .iter()
                .zip(&self.items[i].latent)
                .map(|(a, b)| a * b)
                .sum();
            let p = sigmoid(dot + self.config.label_bias);
            let label = (self.rng.random::<f64>() < p) as u8;
            events.push(Event {
                timestamp: day_start + (j as i64 * SECONDS_PER_DAY) / n as i64,
                user_id: Self::user_id(u),
                item_id: self.items[i].id.clone(),
                context,
                label,
            });
        }
        self.day += 1;
        Some(events)
    }
}

/// Whole stream for `config`, `days × events_per_day` events in timestamp order.
pub fn generate(config: &DriftGenConfig) -> Result<Vec<Event>> {
    let mut generator = DriftGenerator::new(config.clone())?;
    let mut events = Vec::with_capacity(config.days * config.events_per_day);
    while let Some(day) = generator.next_day() {
        events.extend(day);
    }
    Ok(events)
}
