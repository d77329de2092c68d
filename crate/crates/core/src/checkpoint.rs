//! Fixed little-endian binary checkpoints of [`ModelState`].
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "ODLC"
//!      4     2  version (u16) = 1
//!      6     2  reserved, zero
//!      8     4  embedding_dim (u32)
//!     12     4  context_dim (u32)
//!     16     1  user hash mode (0 single, 1 double)
//!     17     1  item hash mode
//!     18     6  reserved, zero
//!     24     8  user buckets (u64)
//!     32     8  user seed_a
//!     40     8  user seed_b
//!     48     8  item buckets
//!     56     8  item seed_a
//!     64     8  item seed_b
//!     72     8  learning_rate (f64)
//!     80     8  l2_reg (f64)
//!     88     8  init_scale (f64)
//!     96     8  model seed (u64)
//!    104     8  step_count (u64)
//!    112     8  payload length in bytes (u64)
//!    120     4  CRC-32 (IEEE) of the payload
//!    124     4  CRC-32 (IEEE) of header bytes 0..124
//!    128        payload: bias, context weights, user tables, item tables,
//!               each table row-major, every value an f32
//! ```
//!
//! File size is therefore `128 + 4·(1 + c + Σ tables·B·d)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::event::Event;
use crate::hashing::{HashConfig, HashMode};
use crate::model::{EmbeddingTable, ModelConfig, ModelState};
use crate::policies::{run_policy_from, RetrainPolicy};

pub const MAGIC: [u8; 4] = *b"ODLC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 128;

fn mode_byte(mode: HashMode) -> u8 {
    match mode {
        HashMode::Single => 0,
        HashMode::Double => 1,
    }
}

fn mode_from_byte(b: u8) -> std::result::Result<HashMode, CheckpointError> {
    match b {
        0 => Ok(HashMode::Single),
        1 => Ok(HashMode::Double),
        other => Err(CheckpointError::Inconsistent(format!(
            "unknown hash mode byte {other}"
        ))),
    }
}

/// Expected payload size for a config, in bytes.
pub fn payload_len(config: &ModelConfig) -> u64 {
    4 * config.parameter_count()
}

pub fn encode(state: &ModelState) -> std::result::Result<Vec<u8>, CheckpointError> {
    if !state.bias.is_finite() {
        return Err(CheckpointError::NonFinite("bias"));
    }
    if !state.context_weights.iter().all(|x| x.is_finite()) {
        return Err(CheckpointError::NonFinite("context weights"));
    }
    if !state
        .user_tables
        .iter()
        .all(|t| t.data.iter().all(|x| x.is_finite()))
    {
        return Err(CheckpointError::NonFinite("user embeddings"));
    }
    if !state
        .item_tables
        .iter()
        .all(|t| t.data.iter().all(|x| x.is_finite()))
    {
        return Err(CheckpointError::NonFinite("item embeddings"));
    }

    let cfg = &state.config;
    let mut payload = Vec::with_capacity(payload_len(cfg) as usize);
    payload.extend_from_slice(&state.bias.to_le_bytes());
    for table in std::iter::once(&state.context_weights)
        .chain(state.user_tables.iter().map(|t| &t.data))
        .chain(state.item_tables.iter().map(|t| &t.data))
    {
        for x in table {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[0; 2]);
    out.extend_from_slice(&(cfg.embedding_dim as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.context_dim as u32).to_le_bytes());
    out.push(mode_byte(cfg.hash_user.mode));
    out.push(mode_byte(cfg.hash_item.mode));
    out.extend_from_slice(&[0; 6]);
    for h in [&cfg.hash_user, &cfg.hash_item] {
        out.extend_from_slice(&h.buckets.to_le_bytes());
        out.extend_from_slice(&h.seed_a.to_le_bytes());
        out.extend_from_slice(&h.seed_b.to_le_bytes());
    }
    out.extend_from_slice(&cfg.learning_rate.to_le_bytes());
    out.extend_from_slice(&cfg.l2_reg.to_le_bytes());
    out.extend_from_slice(&cfg.init_scale.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&state.step_count.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    let header_crc = crc32fast::hash(&out);
    out.extend_from_slice(&header_crc.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn f32s(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| f32::from_le_bytes(self.take())).collect()
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<ModelState, CheckpointError> {
    let found = bytes.len() as u64;
    if bytes.len() < 6 {
        return Err(CheckpointError::Truncated {
            expected: HEADER_LEN as u64,
            found,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16();
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            expected: HEADER_LEN as u64,
            found,
        });
    }
    let stored = u32::from_le_bytes(bytes[124..128].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..124]);
    if stored != actual {
        return Err(CheckpointError::HeaderChecksumMismatch {
            expected: stored,
            actual,
        });
    }
    r.pos = 8;
    let embedding_dim = r.u32() as usize;
    let context_dim = r.u32() as usize;
    let user_mode = mode_from_byte(r.u8())?;
    let item_mode = mode_from_byte(r.u8())?;
    r.pos = 24;
    let mut hash = |mode| HashConfig {
        buckets: r.u64(),
        mode,
        seed_a: r.u64(),
        seed_b: r.u64(),
    };
    let hash_user = hash(user_mode);
    let hash_item = hash(item_mode);
    let config = ModelConfig {
        embedding_dim,
        learning_rate: r.f64(),
        l2_reg: r.f64(),
        context_dim,
        hash_user,
        hash_item,
        init_scale: r.f64(),
        seed: r.u64(),
    };
    let step_count = r.u64();
    let declared = r.u64();
    let checksum = r.u32();

    config
        .validate()
        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
    let expected_payload = payload_len(&config);
    if declared != expected_payload {
        return Err(CheckpointError::Inconsistent(format!(
            "header declares {declared} payload bytes but its dimensions imply {expected_payload}"
        )));
    }
    let expected_len = HEADER_LEN as u64 + expected_payload;
    if found < expected_len {
        return Err(CheckpointError::Truncated {
            expected: expected_len,
            found,
        });
    }
    if found > expected_len {
        return Err(CheckpointError::Inconsistent(format!(
            "{} trailing bytes after payload",
            found - expected_len
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let actual = crc32fast::hash(payload);
    if actual != checksum {
        return Err(CheckpointError::ChecksumMismatch {
            expected: checksum,
            actual,
        });
    }

    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let bias = f32::from_le_bytes(r.take());
    let context_weights = r.f32s(context_dim);
    let mut tables = |h: &HashConfig| -> Vec<EmbeddingTable> {
        (0..h.table_count())
            .map(|_| EmbeddingTable {
                rows: h.buckets as usize,
                dim: embedding_dim,
                data: r.f32s(h.buckets as usize * embedding_dim),
            })
            .collect()
    };
    let user_tables = tables(&config.hash_user);
    let item_tables = tables(&config.hash_item);
    let state = ModelState {
        config,
        bias,
        context_weights,
        user_tables,
        item_tables,
        step_count,
    };
    if !state.all_finite() {
        return Err(CheckpointError::Inconsistent(
            "non-finite parameter in payload".into(),
        ));
    }
    Ok(state)
}

/// Writes `state` to `path` via a temporary file in the same directory and
/// an atomic rename, so a failed save never leaves a partial checkpoint.
pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    let bytes = encode(state)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path)?;
    Ok(decode(&bytes)?)
}

/// Trains stateful-daily through every day of `stream` twice: once without
/// interruption under `uninterrupted`, and once under `resumed` with a
/// save/load round trip through `dir` after `split_day`. True iff the two
/// final states are bit-identical.
pub fn resume_equivalence_between(
    uninterrupted: &ModelConfig,
    resumed: &ModelConfig,
    stream: &[Event],
    split_day: usize,
    dir: &Path,
) -> Result<bool> {
    let policy = RetrainPolicy::stateful(1);
    let days = crate::event::split_days(stream)?;
    if split_day == 0 || split_day >= days.len() {
        return Err(Error::Config(format!(
            "split_day must lie in 1..{}, got {split_day}",
            days.len()
        )));
    }
    let straight = run_policy_from(
        &policy,
        uninterrupted,
        ModelState::init(uninterrupted)?,
        stream,
        |_, _, _| {},
    )?
    .state;

    let cut: usize = days[..split_day].iter().map(|d| d.len()).sum();
    let first = run_policy_from(
        &policy,
        resumed,
        ModelState::init(resumed)?,
        &stream[..cut],
        |_, _, _| {},
    )?
    .state;
    let path = dir.join(format!("resume-split-{split_day}.odlc"));
    save(&first, &path)?;
    let restored = load(&path)?;
    let second = run_policy_from(&policy, resumed, restored, &stream[cut..], |_, _, _| {})?.state;
    Ok(straight.bit_eq(&second))
}

/// [`resume_equivalence_between`] with a single config and a scratch directory.
pub fn resume_equivalence_check(
    config: &ModelConfig,
    stream: &[Event],
    split_day: usize,
) -> Result<bool> {
    let dir = tempfile::tempdir()?;
    resume_equivalence_between(config, config, stream, split_day, dir.path())
}
