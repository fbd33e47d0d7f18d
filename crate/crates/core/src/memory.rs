//! Bucketed-priority experience store.
//!
//! Each stored tuple carries a priority: the absolute value of the mean
//! per-triage-action TD error. The priority picks one of four buckets with
//! fixed sampling probabilities; every time a tuple is sampled its priority
//! decays by a constant factor, slowly displacing it toward buckets that are
//! sampled less often. No importance weighting is applied.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::agent::ExperienceTuple;
use crate::nn::QNetwork;
use crate::rewards::terminal_target;
use crate::types::TriageLevel;
use crate::{Error, Result};

/// Memory shape: bucket thresholds on priority, per-bucket sampling
/// probabilities, the decay factor, and a capacity bound.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    /// Ascending priority thresholds dividing the four buckets.
    pub bucket_thresholds: [f64; 3],
    /// Sampling probability per bucket, summing to 1.
    pub bucket_probs: [f64; 4],
    /// Multiplicative priority decay applied on every sampling.
    pub decay: f64,
    pub capacity: usize,
    /// Take the mean of absolute errors instead of the absolute mean.
    /// The literal priority formula lets signed errors cancel; this switch
    /// selects the non-cancelling variant.
    pub mean_of_abs: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            bucket_thresholds: [0.02, 0.1, 0.3],
            bucket_probs: [0.01, 0.04, 0.15, 0.8],
            decay: 0.999,
            capacity: 100_000,
            mean_of_abs: false,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        let [t0, t1, t2] = self.bucket_thresholds;
        if !(t0 < t1 && t1 < t2) {
            return Err(Error::ConfigError(
                "bucket thresholds must be strictly ascending".into(),
            ));
        }
        let sum: f64 = self.bucket_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.bucket_probs.iter().any(|p| *p < 0.0) {
            return Err(Error::ConfigError(
                "bucket probabilities must be non-negative and sum to 1".into(),
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::ConfigError("decay must lie in (0,1]".into()));
        }
        if self.capacity == 0 {
            return Err(Error::ConfigError("capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Priority of an experience tuple: `|mean over triage actions of
/// (target - Q)|`, where triage targets are the reward entries.
///
/// `triage_q` must come from whatever source the agent uses for its triage
/// heads (the network for the full agent, the frozen classifier for the
/// partially-observed ones).
pub fn priority_from_q(
    tuple: &ExperienceTuple,
    triage_q: &[f64; 4],
    config: &MemoryConfig,
) -> f64 {
    let mut acc = 0.0;
    for level in TriageLevel::ALL {
        let err = terminal_target(&tuple.reward, level) - triage_q[level.index()];
        acc += if config.mean_of_abs { err.abs() } else { err };
    }
    (acc / 4.0).abs()
}

/// Priority computed against a network's own triage heads.
pub fn priority(tuple: &ExperienceTuple, net: &QNetwork, config: &MemoryConfig) -> Result<f64> {
    let q = net.forward(&tuple.state)?;
    let triage_q = [q[0], q[1], q[2], q[3]];
    Ok(priority_from_q(tuple, &triage_q, config))
}

struct Entry {
    tuple: Arc<ExperienceTuple>,
    /// Current priority: the stored value times one decay factor per
    /// sampling, applied multiplicatively so k samplings give exactly
    /// the k-fold product.
    priority: f64,
    decays: u32,
    seq: u64,
}

/// Diagnostic view of one stored tuple.
#[derive(Debug, Clone, Serialize)]
pub struct MemoryDiag {
    pub priority: f64,
    pub bucket: usize,
    pub step_stored: u64,
}

/// The four-bucket prioritized replay memory.
pub struct PrioritizedMemory {
    config: MemoryConfig,
    buckets: [VecDeque<Entry>; 4],
    next_seq: u64,
}

impl PrioritizedMemory {
    pub fn new(config: MemoryConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            buckets: Default::default(),
            next_seq: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(VecDeque::is_empty)
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn bucket_len(&self, bucket: usize) -> usize {
        self.buckets[bucket].len()
    }

    fn bucket_for(&self, priority: f64) -> usize {
        let [t0, t1, t2] = self.config.bucket_thresholds;
        if priority < t0 {
            0
        } else if priority < t1 {
            1
        } else if priority < t2 {
            2
        } else {
            3
        }
    }

    /// Append a tuple under its priority; evicts the oldest tuple from the
    /// lowest-probability non-empty bucket once over capacity.
    pub fn store(&mut self, tuple: Arc<ExperienceTuple>, priority: f64) {
        debug_assert!(priority >= 0.0);
        let bucket = self.bucket_for(priority);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.buckets[bucket].push_back(Entry {
            tuple,
            priority,
            decays: 0,
            seq,
        });
        if self.len() > self.config.capacity {
            self.evict_one();
        }
    }

    fn evict_one(&mut self) {
        let victim = (0..4)
            .filter(|b| !self.buckets[*b].is_empty())
            .min_by(|a, b| {
                self.config.bucket_probs[*a]
                    .partial_cmp(&self.config.bucket_probs[*b])
                    .unwrap()
            });
        if let Some(bucket) = victim {
            // Re-bucketed entries land at the back, so the oldest is found
            // by sequence number rather than position.
            let oldest = self.buckets[bucket]
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.seq)
                .map(|(i, _)| i)
                .unwrap();
            self.buckets[bucket].remove(oldest);
        }
    }

    /// Draw `n` tuples with replacement by two-stage sampling: a bucket by
    /// its renormalised probability, then uniformly within the bucket. Each
    /// draw decays the chosen tuple's priority and re-buckets it.
    pub fn sample<R: Rng>(&mut self, n: usize, rng: &mut R) -> Result<Vec<Arc<ExperienceTuple>>> {
        if self.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let decay = self.config.decay;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let bucket = self.draw_bucket(rng);
            let index = rng.random_range(0..self.buckets[bucket].len());
            let effective = {
                let entry = &mut self.buckets[bucket][index];
                out.push(Arc::clone(&entry.tuple));
                entry.decays += 1;
                entry.priority *= decay;
                entry.priority
            };
            let new_bucket = self.bucket_for(effective);
            if new_bucket != bucket {
                let entry = self.buckets[bucket].swap_remove_back(index).unwrap();
                self.buckets[new_bucket].push_back(entry);
            }
        }
        Ok(out)
    }

    fn draw_bucket<R: Rng>(&self, rng: &mut R) -> usize {
        let total: f64 = (0..4)
            .filter(|b| !self.buckets[*b].is_empty())
            .map(|b| self.config.bucket_probs[b])
            .sum();
        let mut u = rng.random::<f64>() * total;
        let mut last = 0;
        for b in 0..4 {
            if self.buckets[b].is_empty() {
                continue;
            }
            last = b;
            u -= self.config.bucket_probs[b];
            if u < 0.0 {
                return b;
            }
        }
        last
    }

    /// Current (priority, bucket, step-stored) triples for diagnostics.
    pub fn diagnostics(&self) -> Vec<MemoryDiag> {
        let mut records: Vec<MemoryDiag> = self
            .buckets
            .iter()
            .enumerate()
            .flat_map(|(bucket, entries)| {
                entries.iter().map(move |e| MemoryDiag {
                    priority: e.priority,
                    bucket,
                    step_stored: e.seq,
                })
            })
            .collect();
        records.sort_by_key(|r| r.step_stored);
        records
    }

    #[cfg(test)]
    fn assert_bucket_invariant(&self) {
        for (bucket, entries) in self.buckets.iter().enumerate() {
            for entry in entries {
                assert_eq!(self.bucket_for(entry.priority), bucket);
            }
        }
    }
}
