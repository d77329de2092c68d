#![allow(dead_code)]

use odl_core::datagen::DriftGenConfig;
use odl_core::event::Event;
use odl_core::hashing::HashConfig;
use odl_core::model::{ModelConfig, ModelState, Prediction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Parameters touched by one example, flattened in `f64`:
/// `[bias, w.., user rows.., item rows..]`.
pub struct LocalParams {
    pub values: Vec<f64>,
    pub context_dim: usize,
    pub dim: usize,
    pub user_rows: usize,
    pub item_rows: usize,
}

impl LocalParams {
    pub fn gather(state: &ModelState, event: &Event) -> Self {
        let cfg = &state.config;
        let ui = cfg.hash_user.hash_id(&event.user_id).unwrap();
        let ii = cfg.hash_item.hash_id(&event.item_id).unwrap();
        let mut values = vec![f64::from(state.bias)];
        values.extend(state.context_weights.iter().map(|&x| f64::from(x)));
        for (t, r) in state.user_tables.iter().zip(ui.rows()) {
            values.extend(t.row(r as usize).iter().map(|&x| f64::from(x)));
        }
        for (t, r) in state.item_tables.iter().zip(ii.rows()) {
            values.extend(t.row(r as usize).iter().map(|&x| f64::from(x)));
        }
        LocalParams {
            values,
            context_dim: cfg.context_dim,
            dim: cfg.embedding_dim,
            user_rows: state.user_tables.len(),
            item_rows: state.item_tables.len(),
        }
    }

    /// Independent implementation of the regularized objective.
    pub fn objective(&self, v: &[f64], context: &[f64], label: u8, l2: f64) -> f64 {
        let c = self.context_dim;
        let d = self.dim;
        let b = v[0];
        let w = &v[1..1 + c];
        let mut eu = vec![0.0; d];
        let mut ei = vec![0.0; d];
        let mut off = 1 + c;
        for _ in 0..self.user_rows {
            for k in 0..d {
                eu[k] += v[off + k];
            }
            off += d;
        }
        for _ in 0..self.item_rows {
            for k in 0..d {
                ei[k] += v[off + k];
            }
            off += d;
        }
        let s = b
            + (0..d).map(|k| eu[k] * ei[k]).sum::<f64>()
            + (0..c).map(|j| w[j] * context[j]).sum::<f64>();
        let p = 1.0 / (1.0 + (-s).exp());
        let nll = if label == 1 { -p.ln() } else { -(1.0 - p).ln() };
        let sq = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
        nll + 0.5 * l2 * (sq(w) + sq(&eu) + sq(&ei))
    }

    pub fn central_differences(&self, context: &[f64], label: u8, l2: f64, eps: f64) -> Vec<f64> {
        (0..self.values.len())
            .map(|i| {
                let mut plus = self.values.clone();
                let mut minus = self.values.clone();
                plus[i] += eps;
                minus[i] -= eps;
                (self.objective(&plus, context, label, l2)
                    - self.objective(&minus, context, label, l2))
                    / (2.0 * eps)
            })
            .collect()
    }
}

/// Flattens an analytic gradient in the same layout as [`LocalParams`].
pub fn flatten_gradient(state: &ModelState, event: &Event) -> Vec<f64> {
    let g = state.example_gradient(event).unwrap();
    let mut out = vec![g.bias];
    out.extend(&g.context);
    for _ in 0..state.user_tables.len() {
        out.extend(&g.user);
    }
    for _ in 0..state.item_tables.len() {
        out.extend(&g.item);
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Random small model + event for gradient checks.
pub fn random_instance(seed: u64) -> (ModelState, Event) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..6);
    let c = rng.random_range(0..4);
    let double = rng.random_bool(0.5);
    let hash = |b: u64, s: u64| {
        if double {
            HashConfig::double(b, s, s + 100)
        } else {
            HashConfig::single(b, s)
        }
    };
    let config = ModelConfig {
        embedding_dim: d,
        learning_rate: 0.1,
        l2_reg: rng.random_range(0.0..0.1),
        context_dim: c,
        hash_user: hash(7, 1),
        hash_item: hash(5, 2),
        init_scale: 0.8,
        seed,
    };
    let mut state = ModelState::init(&config).unwrap();
    state.bias = rng.random_range(-1.0..1.0);
    for w in state.context_weights.iter_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    let event = Event {
        timestamp: 0,
        user_id: format!("user-{}", rng.random_range(0..1000)),
        item_id: format!("item-{}", rng.random_range(0..1000)),
        context: (0..c).map(|_| rng.random_range(-2.0..2.0)).collect(),
        label: rng.random_range(0..2),
    };
    (state, event)
}

/// Max relative error between analytic and finite-difference gradients for one instance.
pub fn gradient_check(seed: u64) -> f64 {
    let (state, event) = random_instance(seed);
    let params = LocalParams::gather(&state, &event);
    let numeric =
        params.central_differences(&event.context, event.label, state.config.l2_reg, 1e-5);
    let analytic = flatten_gradient(&state, &event);
    assert_eq!(numeric.len(), analytic.len());
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Prediction for `stream[t]` from a model trained step by step on `stream[..t]`.
pub fn prefix_oracle_prediction(config: &ModelConfig, stream: &[Event], t: usize) -> Prediction {
    let mut state = ModelState::init(config).unwrap();
    for e in &stream[..t] {
        state.sgd_step(e).unwrap();
    }
    state.predict_event(&stream[t]).unwrap()
}

/// OLS slope of `ys` against `1..=n` with its one-sided p-value for slope < 0.
pub fn decay_slope_test(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let xm = (n + 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = (1..=ys.len()).map(|i| (i as f64 - xm).powi(2)).sum();
    let sxy: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (i as f64 + 1.0 - xm) * (y - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (y - intercept - slope * (i as f64 + 1.0)).powi(2))
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0).unwrap();
    (slope, t.cdf(slope / se))
}

/// Small, learnable drifting stream used by the replay checks.
pub fn replay_stream_config(seed: u64, drift_rate: f64, churn_rate: f64) -> DriftGenConfig {
    DriftGenConfig {
        seed,
        num_users: 50,
        num_items_initial: 30,
        latent_dim: 8,
        days: 12,
        events_per_day: 2000,
        drift_rate,
        churn_rate,
        context_dim: 0,
        label_bias: 0.0,
    }
}

pub fn replay_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        embedding_dim: 8,
        learning_rate: 0.1,
        l2_reg: 1e-4,
        seed,
        ..ModelConfig::default()
    }
}

pub fn random_ids(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    while ids.len() < n {
        let id = format!("id-{:016x}", rng.random::<u64>());
        if seen.insert(id.clone()) {
            ids.push(id);
        }
    }
    ids
}
