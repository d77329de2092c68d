use std::collections::HashSet;
use std::path::{Path, PathBuf};

use odl_core::checkpoint;
use odl_core::datagen::{generate, DriftGenConfig};
use odl_core::event::{read_events_from, write_events_to, Event};
use odl_core::hashing::{CollisionReport, HashConfig, HashMode, DEFAULT_SEED_A, DEFAULT_SEED_B};
use odl_core::model::ModelConfig;
use odl_core::policies::RetrainPolicy;
use odl_core::replay::{self as rp, MetricsWindow, ReplayReport, ReplaySpec, ReplaySummary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::{read_input, resolve, FileDigest, OutputSet};
use crate::{
    CliError, CollisionArgs, CompareArgs, GenArgs, ModelArgs, PolicyName, ReplayArgs, WindowName,
};

fn manifest_path(out_dir: &Path, stem: &str) -> PathBuf {
    out_dir.join(format!("{stem}.manifest.json"))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

pub fn gen(args: GenArgs) -> Result<(), CliError> {
    let config = DriftGenConfig {
        seed: args.seed,
        num_users: args.users,
        num_items_initial: args.items,
        latent_dim: args.latent_dim,
        days: args.days,
        events_per_day: args.events_per_day,
        drift_rate: args.drift_rate,
        churn_rate: args.churn_rate,
        context_dim: args.context_dim,
        label_bias: args.label_bias,
    };
    let events = generate(&config)?;
    let mut bytes = Vec::new();
    write_events_to(&events, &mut bytes)?;

    let out_dir = &args.out_dir.out_dir;
    let path = resolve(out_dir, &args.out);
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("--out {} has no file name", args.out.display())))?
        .to_string_lossy()
        .into_owned();
    let manifest = path.with_file_name(format!("{file_name}.manifest.json"));
    let mut outputs = OutputSet::default();
    outputs.add(path, bytes);
    outputs.commit_with_manifest("gen", config, Vec::new(), manifest)
}

fn model_config(m: &ModelArgs, context_dim: usize) -> ModelConfig {
    let hash = |seed: u64| {
        let single = HashConfig::single(m.buckets, seed);
        if m.double_hash {
            HashConfig {
                mode: HashMode::Double,
                ..single
            }
        } else {
            single
        }
    };
    ModelConfig {
        embedding_dim: m.dim,
        learning_rate: m.lr,
        l2_reg: m.l2,
        context_dim,
        hash_user: hash(DEFAULT_SEED_A),
        hash_item: hash(DEFAULT_SEED_B),
        init_scale: m.init_scale,
        seed: m.seed,
    }
}

/// Loads an event log, inferring the context dimension from its first event.
fn load_stream(path: &Path, inputs: &mut Vec<FileDigest>) -> Result<(Vec<Event>, usize), CliError> {
    let bytes = read_input(path, inputs)?;
    let events = read_events_from(bytes.as_slice(), path)?;
    let first = events
        .first()
        .ok_or_else(|| odl_core::Error::Data(format!("{}: no events", path.display())))?;
    let context_dim = first.context.len();
    if let Some((i, e)) = events
        .iter()
        .enumerate()
        .find(|(_, e)| e.context.len() != context_dim)
    {
        return Err(odl_core::Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!(
                "context has {} values, first event has {context_dim}",
                e.context.len()
            ),
        }
        .into());
    }
    Ok((events, context_dim))
}

fn policy_from_args(a: &ReplayArgs) -> RetrainPolicy {
    match a.policy {
        PolicyName::None => RetrainPolicy::none(),
        PolicyName::Online => RetrainPolicy::online(),
        PolicyName::Stateful => RetrainPolicy::stateful(a.cadence_days),
        PolicyName::Stateless => RetrainPolicy::stateless(a.window_days, a.cadence_days),
    }
    .with_epochs(a.epochs)
    .with_shuffle(a.shuffle)
}

/// Policy label usable as a file stem.
fn file_label(policy: &RetrainPolicy) -> String {
    policy.to_string().replace(':', "-")
}

#[derive(Serialize)]
struct ReplayRun<'a> {
    spec: &'a ReplaySpec,
    model: &'a ModelConfig,
}

fn metrics_csv(report: &ReplayReport) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    rp::write_metrics_csv(report, &mut out)?;
    Ok(out)
}

pub fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let mut inputs = Vec::new();
    let (events, context_dim) = load_stream(&args.input, &mut inputs)?;
    let config = model_config(&args.model, context_dim);
    let spec = ReplaySpec {
        pretrain_days: args.pretrain_days,
        policy: policy_from_args(&args),
        metrics_window: match args.metrics_window {
            WindowName::PerDay => MetricsWindow::PerDay,
            WindowName::Cumulative => MetricsWindow::Cumulative,
        },
    };
    let report = rp::replay(&spec, &config, &events)?;

    let out_dir = &args.out_dir.out_dir;
    let name = args
        .name
        .clone()
        .unwrap_or_else(|| file_label(&spec.policy));
    let mut outputs = OutputSet::default();
    outputs.add(
        out_dir.join(format!("{name}.metrics.csv")),
        metrics_csv(&report)?,
    );
    outputs.add(
        out_dir.join(format!("{name}.summary.json")),
        json_bytes(&report.summary()),
    );
    if let Some(path) = &args.save_model {
        let bytes = checkpoint::encode(&report.final_state).map_err(odl_core::Error::from)?;
        outputs.add(resolve(out_dir, path), bytes);
    }
    let run = ReplayRun {
        spec: &spec,
        model: &config,
    };
    outputs.commit_with_manifest("replay", run, inputs, manifest_path(out_dir, &name))
}

#[derive(Serialize)]
struct CompareRun<'a> {
    pretrain_days: usize,
    policies: &'a [RetrainPolicy],
    baseline: usize,
    model: &'a ModelConfig,
}

pub fn compare(args: CompareArgs) -> Result<(), CliError> {
    if args.policies.len() < 2 {
        return Err(CliError::Usage(
            "compare needs at least two policies".into(),
        ));
    }
    let policies = args
        .policies
        .iter()
        .map(|p| p.trim().parse::<RetrainPolicy>())
        .collect::<Result<Vec<_>, _>>()?;
    let baseline = match &args.baseline {
        None => 0,
        Some(b) => {
            let b: RetrainPolicy = b.parse()?;
            policies
                .iter()
                .position(|p| *p == b)
                .ok_or_else(|| CliError::Usage(format!("baseline `{b}` is not among --policies")))?
        }
    };
    let mut inputs = Vec::new();
    let (events, context_dim) = load_stream(&args.input, &mut inputs)?;
    let config = model_config(&args.model, context_dim);

    let reports: Vec<ReplayReport> = std::thread::scope(|scope| {
        let handles: Vec<_> = policies
            .iter()
            .map(|&policy| {
                let (config, events) = (&config, &events);
                scope.spawn(move || {
                    rp::replay(&ReplaySpec::new(args.pretrain_days, policy), config, events)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replay worker panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let rows = rp::lift_table(&reports, baseline)?;
    let mut lift = Vec::new();
    rp::write_lift_csv(&rows, &mut lift)?;
    let summaries: Vec<ReplaySummary> = reports.iter().map(ReplayReport::summary).collect();

    let out_dir = &args.out_dir.out_dir;
    let mut outputs = OutputSet::default();
    outputs.add(out_dir.join(format!("{}.lift.csv", args.name)), lift);
    outputs.add(
        out_dir.join(format!("{}.summaries.json", args.name)),
        json_bytes(&summaries),
    );
    let run = CompareRun {
        pretrain_days: args.pretrain_days,
        policies: &policies,
        baseline,
        model: &config,
    };
    outputs.commit_with_manifest("compare", run, inputs, manifest_path(out_dir, &args.name))
}

/// `n` distinct ids drawn from a seeded generator.
fn random_ids(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    while ids.len() < n {
        let id = format!("id-{:016x}", rng.random::<u64>());
        if seen.insert(id.clone()) {
            ids.push(id);
        }
    }
    ids
}

#[derive(Serialize)]
struct CollisionRun<'a> {
    num_ids: usize,
    ids_source: &'a str,
    buckets: &'a [u64],
    modes: Vec<HashMode>,
    seed_a: u64,
    seed_b: u64,
}

fn collision_csv(reports: &[CollisionReport]) -> Vec<u8> {
    let mut out =
        String::from("buckets,mode,num_ids,empirical_rate,expected_rate,colliding_ids,standard_error,memory_rows\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.buckets,
            r.mode,
            r.num_ids,
            r.collision_rate,
            r.expected_rate,
            r.colliding_ids,
            r.standard_error(),
            r.memory_rows
        ));
    }
    out.into_bytes()
}

pub fn collisions(args: CollisionArgs) -> Result<(), CliError> {
    let mut inputs = Vec::new();
    let (ids, source) = match (&args.num_ids, &args.ids_file) {
        (Some(n), None) => {
            if *n == 0 {
                return Err(CliError::Usage("--num-ids must be positive".into()));
            }
            (random_ids(*n, args.seed), "random")
        }
        (None, Some(path)) => {
            let bytes = read_input(path, &mut inputs)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| odl_core::Error::Data(format!("{}: not UTF-8", path.display())))?;
            let ids: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            (ids, "file")
        }
        _ => unreachable!("clap enforces exactly one id source"),
    };
    let single = HashConfig::single(1, args.seed);
    let mut modes = vec![HashMode::Single];
    let mut reports = single.collision_sweep(&ids, &args.buckets)?;
    if args.double {
        let double = HashConfig {
            mode: HashMode::Double,
            ..single
        };
        reports.extend(double.collision_sweep(&ids, &args.buckets)?);
        modes.push(HashMode::Double);
    }

    let out_dir = &args.out_dir.out_dir;
    let mut outputs = OutputSet::default();
    outputs.add(
        out_dir.join(format!("{}.csv", args.name)),
        collision_csv(&reports),
    );
    let run = CollisionRun {
        num_ids: ids.len(),
        ids_source: source,
        buckets: &args.buckets,
        modes,
        seed_a: single.seed_a,
        seed_b: single.seed_b,
    };
    outputs.commit_with_manifest(
        "collisions",
        run,
        inputs,
        manifest_path(out_dir, &args.name),
    )
}
