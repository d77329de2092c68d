//! Hashing trick for unbounded id vocabularies.
//!
//! Ids are mapped to embedding rows with seeded XXH64 (`xxh64(seed, utf8 bytes) mod B`).
//! The function is fixed so that checkpoints stay portable: a row index
//! computed today must address the same row after a reload on any machine.
//!
//! Double mode indexes each id into two tables with two seeds of the same
//! family. Two ids only fully collide when both rows coincide, so the
//! effective index space is `B²` at twice the table memory.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashMode {
    Single,
    Double,
}

impl HashMode {
    pub fn table_count(self) -> usize {
        match self {
            HashMode::Single => 1,
            HashMode::Double => 2,
        }
    }
}

impl fmt::Display for HashMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HashMode::Single => "single",
            HashMode::Double => "double",
        })
    }
}

impl FromStr for HashMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(HashMode::Single),
            "double" => Ok(HashMode::Double),
            other => Err(Error::Config(format!("unknown hash mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashConfig {
    pub buckets: u64,
    pub mode: HashMode,
    pub seed_a: u64,
    /// Only consulted in double mode.
    pub seed_b: u64,
}

/// Default seeds for the two hash functions. Any distinct pair works.
pub const DEFAULT_SEED_A: u64 = 0x5EED_0000_0000_0001;
pub const DEFAULT_SEED_B: u64 = 0x5EED_0000_0000_0002;

impl HashConfig {
    pub fn single(buckets: u64, seed: u64) -> Self {
        HashConfig {
            buckets,
            mode: HashMode::Single,
            seed_a: seed,
            seed_b: seed.wrapping_add(1),
        }
    }

    pub fn double(buckets: u64, seed_a: u64, seed_b: u64) -> Self {
        HashConfig {
            buckets,
            mode: HashMode::Double,
            seed_a,
            seed_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 {
            return Err(Error::Config("hash buckets must be at least 1".into()));
        }
        if self.mode == HashMode::Double && self.seed_a == self.seed_b {
            return Err(Error::Config(
                "double hashing needs two distinct seeds".into(),
            ));
        }
        Ok(())
    }

    pub fn table_count(&self) -> usize {
        self.mode.table_count()
    }

    /// Rows allocated across all tables for one side of the model.
    pub fn memory_rows(&self) -> u64 {
        self.buckets * self.table_count() as u64
    }

    /// Maps an id to its row (or row pair). Deterministic, with no inverse.
    pub fn hash_id(&self, id: &str) -> Result<HashedIndex> {
        if id.is_empty() {
            return Err(Error::Data("cannot hash an empty id".into()));
        }
        Ok(self.index_unchecked(id.as_bytes()))
    }

    fn index_unchecked(&self, bytes: &[u8]) -> HashedIndex {
        let primary_row = xxh64(bytes, self.seed_a) % self.buckets;
        let secondary_row = match self.mode {
            HashMode::Single => None,
            HashMode::Double => Some(xxh64(bytes, self.seed_b) % self.buckets),
        };
        HashedIndex {
            primary_row,
            secondary_row,
        }
    }

    /// Analytic id-level collision probability for `num_ids` ids drawn into
    /// this configuration: `1 - (1 - 1/S)^(N-1)` with `S = B` or `B²`.
    pub fn expected_collision_rate(&self, num_ids: u64) -> f64 {
        if num_ids <= 1 {
            return 0.0;
        }
        let b = self.buckets as f64;
        let space_inv = match self.mode {
            HashMode::Single => 1.0 / b,
            HashMode::Double => 1.0 / (b * b),
        };
        if space_inv >= 1.0 {
            return 1.0;
        }
        let others = (num_ids - 1) as f64;
        -(others * (-space_inv).ln_1p()).exp_m1()
    }

    /// Hashes every id and reports the fraction whose full index is shared
    /// with at least one other id.
    pub fn measure_collisions<S: AsRef<str>>(&self, ids: &[S]) -> Result<CollisionReport> {
        self.validate()?;
        if ids.is_empty() {
            return Err(Error::Data(
                "collision measurement needs at least one id".into(),
            ));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        let mut occupancy: HashMap<HashedIndex, u32> = HashMap::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            if !seen.insert(id) {
                return Err(Error::Data(format!("duplicate id `{id}`")));
            }
            *occupancy.entry(self.hash_id(id)?).or_insert(0) += 1;
        }
        let colliding: u64 = occupancy
            .values()
            .filter(|&&n| n > 1)
            .map(|&n| u64::from(n))
            .sum();
        let num_ids = ids.len() as u64;
        Ok(CollisionReport {
            num_ids,
            buckets: self.buckets,
            mode: self.mode,
            colliding_ids: colliding,
            collision_rate: colliding as f64 / num_ids as f64,
            expected_rate: self.expected_collision_rate(num_ids),
            memory_rows: self.memory_rows(),
        })
    }

    /// One report per bucket count, in input order.
    pub fn collision_sweep<S: AsRef<str> + Sync>(
        &self,
        ids: &[S],
        bucket_list: &[u64],
    ) -> Result<Vec<CollisionReport>> {
        if bucket_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "bucket list must be strictly increasing".into(),
            ));
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = bucket_list
                .iter()
                .map(|&buckets| {
                    let config = HashConfig { buckets, ..*self };
                    scope.spawn(move || config.measure_collisions(ids))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("collision worker panicked"))
                .collect()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashedIndex {
    pub primary_row: u64,
    /// Present iff the config is in double mode.
    pub secondary_row: Option<u64>,
}

impl HashedIndex {
    pub fn rows(&self) -> impl Iterator<Item = u64> {
        std::iter::once(self.primary_row).chain(self.secondary_row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub num_ids: u64,
    pub buckets: u64,
    pub mode: HashMode,
    pub colliding_ids: u64,
    pub collision_rate: f64,
    pub expected_rate: f64,
    /// Total table rows (`tables × B`), so double mode reports twice the memory.
    pub memory_rows: u64,
}

impl CollisionReport {
    /// Binomial standard error of the empirical rate around the analytic rate.
    pub fn standard_error(&self) -> f64 {
        let p = self.expected_rate;
        (p * (1.0 - p) / self.num_ids as f64).sqrt()
    }
}
