//! Factorized logistic scorer over hashed user/item embeddings.
//!
//! `score = b + <e_u, e_i> + <w, x>`, trained one example at a time with
//! constant-rate SGD on L2-regularized log loss. Parameters are stored as
//! `f32`; every forward and backward computation is carried out in `f64`
//! and rounded once when written back.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Event;
use crate::hashing::{HashConfig, HashedIndex};

/// Probabilities are clamped to `[LOSS_EPS, 1 - LOSS_EPS]` inside the log loss only.
pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub context_dim: usize,
    pub hash_user: HashConfig,
    pub hash_item: HashConfig,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 8,
            learning_rate: 0.05,
            l2_reg: 1e-4,
            context_dim: 0,
            hash_user: HashConfig::single(1 << 12, crate::hashing::DEFAULT_SEED_A),
            hash_item: HashConfig::single(1 << 12, crate::hashing::DEFAULT_SEED_B),
            init_scale: 0.05,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return Err(Error::Config(format!(
                "l2_reg must be non-negative, got {}",
                self.l2_reg
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config(format!(
                "init_scale must be non-negative, got {}",
                self.init_scale
            )));
        }
        self.hash_user.validate()?;
        self.hash_item.validate()?;
        Ok(())
    }

    /// Number of scalar parameters: `1 + c + Σ tables·B·d`.
    pub fn parameter_count(&self) -> u64 {
        let d = self.embedding_dim as u64;
        1 + self.context_dim as u64
            + (self.hash_user.memory_rows() + self.hash_item.memory_rows()) * d
    }
}

/// Row-major `rows × dim` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingTable {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Logit.
    pub score: f64,
    pub probability: f64,
}

impl Prediction {
    fn from_score(score: f64) -> Self {
        Prediction {
            score,
            probability: sigmoid(score),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary log loss with the probability clamped away from 0 and 1.
pub fn log_loss(probability: f64, label: u8) -> f64 {
    let p = probability.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// All learnable parameters plus the step counter. This is the unit of
/// state carried between training sessions and written to checkpoints.
///
/// Invariants: `user_tables`/`item_tables` hold one table per hash function,
/// each with `buckets` rows of `embedding_dim` entries; every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub bias: f32,
    pub context_weights: Vec<f32>,
    pub user_tables: Vec<EmbeddingTable>,
    pub item_tables: Vec<EmbeddingTable>,
    pub step_count: u64,
}

/// Gradient of the L2-regularized log loss for one example, in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleGradient {
    /// Unclamped objective `logloss + λ/2 (‖w‖² + ‖e_u‖² + ‖e_i‖²)`.
    pub objective: f64,
    pub probability: f64,
    pub bias: f64,
    pub context: Vec<f64>,
    /// Gradient shared by every user row in the lookup (the rows are summed).
    pub user: Vec<f64>,
    pub item: Vec<f64>,
    pub user_index: HashedIndex,
    pub item_index: HashedIndex,
}

impl ModelState {
    /// Fresh state: zero bias and context weights, embeddings uniform on
    /// `[-init_scale, init_scale]` drawn from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        Self::init_with_stream(config, 0)
    }

    /// Like [`ModelState::init`] but drawing from an independent RNG stream
    /// of the same seed, so that repeated re-initializations differ.
    pub fn init_with_stream(config: &ModelConfig, stream: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        let d = config.embedding_dim;
        let scale = config.init_scale as f32;
        let uniform = if scale > 0.0 {
            Some(Uniform::new_inclusive(-scale, scale).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        let mut make_table = |rows: u64| {
            let mut table = EmbeddingTable::zeros(rows as usize, d);
            if let Some(u) = &uniform {
                for x in table.data.iter_mut() {
                    *x = u.sample(&mut rng);
                }
            }
            table
        };
        let user_tables = (0..config.hash_user.table_count())
            .map(|_| make_table(config.hash_user.buckets))
            .collect();
        let item_tables = (0..config.hash_item.table_count())
            .map(|_| make_table(config.hash_item.buckets))
            .collect();
        Ok(ModelState {
            config: config.clone(),
            bias: 0.0,
            context_weights: vec![0.0; config.context_dim],
            user_tables,
            item_tables,
            step_count: 0,
        })
    }

    fn check_context(&self, context: &[f64]) -> Result<()> {
        if context.len() != self.config.context_dim {
            return Err(Error::Dimension {
                expected: self.config.context_dim,
                got: context.len(),
            });
        }
        Ok(())
    }

    /// Summed embedding of the rows an index touches.
    fn lookup(tables: &[EmbeddingTable], index: &HashedIndex) -> Vec<f64> {
        let mut out = vec![0.0; tables[0].dim];
        for (table, row) in tables.iter().zip(index.rows()) {
            for (o, &x) in out.iter_mut().zip(table.row(row as usize)) {
                *o += f64::from(x);
            }
        }
        out
    }

    fn score_parts(&self, user: &[f64], item: &[f64], context: &[f64]) -> f64 {
        let interaction: f64 = user.iter().zip(item).map(|(a, b)| a * b).sum();
        let linear: f64 = self
            .context_weights
            .iter()
            .zip(context)
            .map(|(&w, x)| f64::from(w) * x)
            .sum();
        f64::from(self.bias) + interaction + linear
    }

    pub fn predict(&self, user_id: &str, item_id: &str, context: &[f64]) -> Result<Prediction> {
        self.check_context(context)?;
        let user = Self::lookup(&self.user_tables, &self.config.hash_user.hash_id(user_id)?);
        let item = Self::lookup(&self.item_tables, &self.config.hash_item.hash_id(item_id)?);
        Ok(Prediction::from_score(
            self.score_parts(&user, &item, context),
        ))
    }

    pub fn predict_event(&self, event: &Event) -> Result<Prediction> {
        self.predict(&event.user_id, &event.item_id, &event.context)
    }

    pub fn example_gradient(&self, event: &Event) -> Result<ExampleGradient> {
        if event.label > 1 {
            return Err(Error::Data(format!(
                "label must be 0 or 1, got {}",
                event.label
            )));
        }
        self.check_context(&event.context)?;
        let user_index = self.config.hash_user.hash_id(&event.user_id)?;
        let item_index = self.config.hash_item.hash_id(&event.item_id)?;
        let eu = Self::lookup(&self.user_tables, &user_index);
        let ei = Self::lookup(&self.item_tables, &item_index);
        let score = self.score_parts(&eu, &ei, &event.context);
        let p = sigmoid(score);
        let y = f64::from(event.label);
        let g = p - y;
        let l2 = self.config.l2_reg;

        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let w: Vec<f64> = self.context_weights.iter().map(|&x| f64::from(x)).collect();
        // log(1 + e^s) - y·s, stable for large |s|
        let nll = score.max(0.0) + (-score.abs()).exp().ln_1p() - y * score;
        let objective = nll + 0.5 * l2 * (sq(&w) + sq(&eu) + sq(&ei));

        let context = event
            .context
            .iter()
            .zip(&w)
            .map(|(x, w)| g * x + l2 * w)
            .collect();
        let user = ei.iter().zip(&eu).map(|(i, u)| g * i + l2 * u).collect();
        let item = eu.iter().zip(&ei).map(|(u, i)| g * u + l2 * i).collect();
        Ok(ExampleGradient {
            objective,
            probability: p,
            bias: g,
            context,
            user,
            item,
            user_index,
            item_index,
        })
    }

    /// One SGD step on `event`. Returns the example's (clamped) log loss as
    /// computed before the update. On divergence the state is left untouched.
    pub fn sgd_step(&mut self, event: &Event) -> Result<f64> {
        let grad = self.example_gradient(event)?;
        let lr = self.config.learning_rate;

        let step = |old: f32, g: f64| (f64::from(old) - lr * g) as f32;
        let bias = step(self.bias, grad.bias);
        let context: Vec<f32> = self
            .context_weights
            .iter()
            .zip(&grad.context)
            .map(|(&w, &g)| step(w, g))
            .collect();
        let rows_after = |tables: &[EmbeddingTable], index: &HashedIndex, g: &[f64]| {
            tables
                .iter()
                .zip(index.rows())
                .map(|(t, r)| {
                    t.row(r as usize)
                        .iter()
                        .zip(g)
                        .map(|(&x, &g)| step(x, g))
                        .collect::<Vec<f32>>()
                })
                .collect::<Vec<_>>()
        };
        let user_rows = rows_after(&self.user_tables, &grad.user_index, &grad.user);
        let item_rows = rows_after(&self.item_tables, &grad.item_index, &grad.item);

        let all_finite = bias.is_finite()
            && context.iter().all(|x| x.is_finite())
            && user_rows.iter().flatten().all(|x| x.is_finite())
            && item_rows.iter().flatten().all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::Divergence(format!(
                "non-finite parameter after step {} (user `{}`, item `{}`)",
                self.step_count + 1,
                event.user_id,
                event.item_id
            )));
        }

        self.bias = bias;
        self.context_weights = context;
        for ((table, r), row) in self
            .user_tables
            .iter_mut()
            .zip(grad.user_index.rows())
            .zip(user_rows)
        {
            table.row_mut(r as usize).copy_from_slice(&row);
        }
        for ((table, r), row) in self
            .item_tables
            .iter_mut()
            .zip(grad.item_index.rows())
            .zip(item_rows)
        {
            table.row_mut(r as usize).copy_from_slice(&row);
        }
        self.step_count += 1;
        Ok(log_loss(grad.probability, event.label))
    }

    /// True iff every parameter, counter and config field matches bit for bit.
    pub fn bit_eq(&self, other: &ModelState) -> bool {
        fn bits(v: &[f32]) -> impl Iterator<Item = u32> + '_ {
            v.iter().map(|x| x.to_bits())
        }
        let tables_eq = |a: &[EmbeddingTable], b: &[EmbeddingTable]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.rows == y.rows && x.dim == y.dim && bits(&x.data).eq(bits(&y.data))
                })
        };
        self.config == other.config
            && self.step_count == other.step_count
            && self.bias.to_bits() == other.bias.to_bits()
            && bits(&self.context_weights).eq(bits(&other.context_weights))
            && tables_eq(&self.user_tables, &other.user_tables)
            && tables_eq(&self.item_tables, &other.item_tables)
    }

    pub fn all_finite(&self) -> bool {
        self.bias.is_finite()
            && self.context_weights.iter().all(|x| x.is_finite())
            && self
                .user_tables
                .iter()
                .chain(&self.item_tables)
                .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}
