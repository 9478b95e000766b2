//! The belief substrate: a FIFO bank of `(key, payload, action, reward)`
//! records with exact top-K cosine retrieval and softmax-weighted pooling.
//!
//! Keys and payloads are stored as `f32`, the precision of the bank file, so a
//! bank written to disk and read back is bit-identical to the one in memory.
//! Similarities are computed in `f64` as true cosines of the stored vectors.

mod persist;

use std::collections::VecDeque;

use crate::numerics::{dot, l2_norm, softmax};
use crate::{Error, Result};

pub use persist::{load_bank, save_bank, BANK_MAGIC, BANK_VERSION};

pub const DEFAULT_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    /// Unit-norm key embedding `z_k`.
    pub key: Vec<f32>,
    /// Context payload `c_k` pooled into the belief.
    pub value: Vec<f32>,
    pub action: u32,
    pub reward: f32,
    pub insert_index: u64,
}

/// Retrieval parameters: neighbour count and softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    pub k: usize,
    pub temperature: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            temperature: 1.0,
        }
    }
}

/// Top-K neighbours of a query, best first.
///
/// `indices` are entry `insert_index` values, so a result stays meaningful
/// (or detectably stale) across later inserts and evictions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub indices: Vec<u64>,
    pub similarities: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Retrieval against an empty bank.
    pub fn is_cold_start(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Pooled context `b = Σ w_k c_k` plus the retrieval that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    pub values: Vec<f64>,
    pub provenance: RetrievalResult,
    pub is_cold_start: bool,
}

impl BeliefVector {
    /// The all-zero belief used for cold starts and belief-disabled runs.
    pub fn zeros(d_c: usize) -> Self {
        Self {
            values: vec![0.0; d_c],
            provenance: RetrievalResult::default(),
            is_cold_start: true,
        }
    }
}

/// Cosine similarity of two `f64` vectors, clamped to `[-1, 1]`.
///
/// Callers guarantee both norms are nonzero.
pub fn cosine_similarity(key: &[f64], query: &[f64]) -> f64 {
    cosine_parts(dot(key, query), l2_norm(key), l2_norm(query))
}

pub(crate) fn cosine_parts(dot: f64, key_norm: f64, query_norm: f64) -> f64 {
    (dot / (key_norm * query_norm)).clamp(-1.0, 1.0)
}

/// Softmax of `similarities / temperature`.
pub fn similarity_weights(similarities: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if temperature == 1.0 {
        softmax(similarities)
    } else {
        let scaled: Vec<f64> = similarities.iter().map(|s| s / temperature).collect();
        softmax(&scaled)
    }
}

/// Accumulate `weight · payload` into `out`, coordinate by coordinate.
pub(crate) fn pool_into(out: &mut [f64], weight: f64, payload: impl IntoIterator<Item = f64>) {
    for (o, c) in out.iter_mut().zip(payload) {
        *o += weight * c;
    }
}

fn to_f32(op: &'static str, values: &[f64]) -> Result<Vec<f32>> {
    values
        .iter()
        .map(|&v| {
            let x = v as f32;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(Error::numeric(format!("{op}: value {v} is not representable")))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    entries: VecDeque<MemoryEntry>,
    d_z: usize,
    d_c: usize,
    capacity: usize,
    scope_id: u64,
    next_index: u64,
}

impl MemoryBank {
    pub fn new(d_z: usize, d_c: usize, capacity: usize, scope_id: u64) -> Result<Self> {
        if d_z == 0 || d_c == 0 {
            return Err(Error::config("memory dimensions must be positive"));
        }
        if capacity == 0 {
            return Err(Error::config("memory capacity must be at least 1"));
        }
        Ok(Self {
            entries: VecDeque::new(),
            d_z,
            d_c,
            capacity,
            scope_id,
            next_index: 0,
        })
    }

    /// Rebuild from stored entries, which must be in strictly increasing
    /// `insert_index` order and match the dimensions.
    pub fn from_entries(
        d_z: usize,
        d_c: usize,
        capacity: usize,
        scope_id: u64,
        entries: Vec<MemoryEntry>,
    ) -> Result<Self> {
        let mut bank = Self::new(d_z, d_c, capacity.max(entries.len()), scope_id)?;
        for e in &entries {
            if e.key.len() != d_z || e.value.len() != d_c {
                return Err(Error::shape(
                    "MemoryBank::from_entries",
                    format!("key[{d_z}], value[{d_c}]"),
                    format!("key[{}], value[{}]", e.key.len(), e.value.len()),
                ));
            }
        }
        if entries.windows(2).any(|w| w[0].insert_index >= w[1].insert_index) {
            return Err(Error::Consistency(
                "insert indices must be strictly increasing".into(),
            ));
        }
        bank.next_index = entries.last().map_or(0, |e| e.insert_index + 1);
        bank.entries = entries.into();
        Ok(bank)
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn d_c(&self) -> usize {
        self.d_c
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn scope_id(&self) -> u64 {
        self.scope_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    /// Entry with the given `insert_index`, if it has not been evicted.
    pub fn get(&self, insert_index: u64) -> Option<&MemoryEntry> {
        // Storage is ordered by insert index; fall back to a scan if it is not.
        let (a, b) = self.entries.as_slices();
        for part in [a, b] {
            if let Ok(pos) = part.binary_search_by_key(&insert_index, |e| e.insert_index) {
                return Some(&part[pos]);
            }
        }
        self.entries.iter().find(|e| e.insert_index == insert_index)
    }

    /// Drop all entries and start a new scope.
    pub fn reset(&mut self, scope_id: u64) {
        self.entries.clear();
        self.scope_id = scope_id;
        self.next_index = 0;
    }

    /// Append a record, normalizing the key and evicting the oldest entry when full.
    /// Returns the new entry's `insert_index`.
    pub fn insert(&mut self, key: &[f64], value: &[f64], action: usize, reward: f64) -> Result<u64> {
        if key.len() != self.d_z || value.len() != self.d_c {
            return Err(Error::shape(
                "MemoryBank::insert",
                format!("key[{}], value[{}]", self.d_z, self.d_c),
                format!("key[{}], value[{}]", key.len(), value.len()),
            ));
        }
        crate::numerics::ensure_finite("MemoryBank::insert key", key)?;
        crate::numerics::ensure_finite("MemoryBank::insert value", value)?;
        if !reward.is_finite() {
            return Err(Error::numeric(format!("reward {reward} is not finite")));
        }
        let norm = l2_norm(key);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::numeric("cannot store a zero-norm key"));
        }
        let unit: Vec<f64> = key.iter().map(|k| k / norm).collect();
        let action = u32::try_from(action)
            .map_err(|_| Error::config(format!("action {action} does not fit in u32")))?;
        let entry = MemoryEntry {
            key: to_f32("MemoryBank::insert key", &unit)?,
            value: to_f32("MemoryBank::insert value", value)?,
            action,
            reward: reward as f32,
            insert_index: self.next_index,
        };
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
        self.next_index += 1;
        Ok(self.next_index - 1)
    }

    /// Exact top-K retrieval with `temperature = 1`.
    pub fn retrieve_topk(&self, query: &[f64], k: usize) -> Result<RetrievalResult> {
        self.retrieve(
            query,
            &RetrievalConfig {
                k,
                temperature: 1.0,
            },
        )
    }

    /// The `min(k, len)` entries with the highest cosine similarity to `query`,
    /// ties broken by ascending `insert_index`, with softmax weights over the
    /// returned similarities.
    pub fn retrieve(&self, query: &[f64], cfg: &RetrievalConfig) -> Result<RetrievalResult> {
        if query.len() != self.d_z {
            return Err(Error::shape("MemoryBank::retrieve", self.d_z, query.len()));
        }
        if cfg.k == 0 {
            return Err(Error::Contract("retrieval K must be at least 1".into()));
        }
        if !(cfg.temperature > 0.0) {
            return Err(Error::config(format!(
                "retrieval temperature must be > 0, got {}",
                cfg.temperature
            )));
        }
        crate::numerics::ensure_finite("MemoryBank::retrieve query", query)?;
        let query_norm = l2_norm(query);
        if query_norm == 0.0 {
            return Err(Error::numeric("zero-norm retrieval query"));
        }
        if self.entries.is_empty() {
            return Ok(RetrievalResult::default());
        }

        // Bounded best-first list; `ranks_before` is the retrieval order.
        let ranks_before =
            |a: (f64, u64), b: (f64, u64)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
        let k = cfg.k.min(self.entries.len());
        let mut top: Vec<(f64, u64)> = Vec::with_capacity(k + 1);
        for entry in &self.entries {
            let candidate = (self.similarity(entry, query, query_norm), entry.insert_index);
            if top.len() == k && !ranks_before(candidate, top[k - 1]) {
                continue;
            }
            let pos = top
                .iter()
                .position(|&t| ranks_before(candidate, t))
                .unwrap_or(top.len());
            top.insert(pos, candidate);
            top.truncate(k);
        }
        let similarities: Vec<f64> = top.iter().map(|t| t.0).collect();
        let weights = similarity_weights(&similarities, cfg.temperature)?;
        Ok(RetrievalResult {
            indices: top.iter().map(|t| t.1).collect(),
            similarities,
            weights,
        })
    }

    fn similarity(&self, entry: &MemoryEntry, query: &[f64], query_norm: f64) -> f64 {
        // Same summation order as `cosine_similarity` on an upcast key.
        let d: f64 = entry.key.iter().zip(query).map(|(&k, q)| k as f64 * q).sum();
        let n: f64 = entry.key.iter().map(|&k| k as f64 * k as f64).sum();
        cosine_parts(d, n.sqrt(), query_norm)
    }

    /// `b = Σ w_k c_k` over a retrieval from this bank; zero and flagged when
    /// the retrieval is empty.
    pub fn aggregate_belief(&self, result: &RetrievalResult) -> Result<BeliefVector> {
        if result.weights.len() != result.indices.len() {
            return Err(Error::Consistency(format!(
                "{} weights for {} retrieved entries",
                result.weights.len(),
                result.indices.len()
            )));
        }
        if result.is_empty() {
            return Ok(BeliefVector::zeros(self.d_c));
        }
        let mut values = vec![0.0; self.d_c];
        for (&idx, &w) in result.indices.iter().zip(&result.weights) {
            let entry = self.get(idx).ok_or_else(|| {
                Error::Consistency(format!("entry {idx} is no longer in the bank"))
            })?;
            pool_into(&mut values, w, entry.value.iter().map(|&c| c as f64));
        }
        Ok(BeliefVector {
            values,
            provenance: result.clone(),
            is_cold_start: false,
        })
    }

    #[cfg(test)]
    pub(crate) fn shuffle_storage<R: rand::Rng>(&mut self, rng: &mut R) {
        use rand::seq::SliceRandom;
        self.entries.make_contiguous().shuffle(rng);
    }
}
