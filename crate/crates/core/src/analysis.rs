//! Miss probability of the length-1 local priority queue.
//!
//! `C` candidates are split into `T = C / I` threads of `I` items. The top `N`
//! results land on uniformly random slots. A thread keeps only its best item,
//! so a result is lost whenever it shares a thread with a better one and the
//! number of misses is `L = N - M`, with `M` the number of threads holding at
//! least one result.
//!
//! `P(M) = C(T, M) * Σ_compositions Π C(I, n_j) / C(C, N)`, where the sum runs
//! over compositions of `N` into `M` positive parts. Compositions are grouped
//! by the partition of the excess `L = Σ (n_j - 1)`, which keeps enumeration
//! tiny for small `L`. Everything is evaluated in log space.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest miss count handled by the exact formula.
pub const MAX_EXACT_MISSES: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MissModel {
    pub candidates: u64,
    pub relevant: u64,
    pub per_thread: u64,
    pub threads: u64,
}

impl MissModel {
    pub fn new(candidates: u64, relevant: u64, per_thread: u64) -> Result<Self> {
        if per_thread == 0 || candidates == 0 {
            return Err(Error::invalid("candidates and items per thread must be positive"));
        }
        if !candidates.is_multiple_of(per_thread) {
            return Err(Error::invalid(format!(
                "candidate count {candidates} is not divisible by items per thread {per_thread}"
            )));
        }
        if relevant == 0 || relevant > candidates {
            return Err(Error::invalid(format!(
                "relevant count {relevant} must be in 1..={candidates}"
            )));
        }
        Ok(Self {
            candidates,
            relevant,
            per_thread,
            threads: candidates / per_thread,
        })
    }

    pub fn max_occupied(&self) -> u64 {
        self.relevant.min(self.threads)
    }

    /// `ln P(M)`; `-inf` when the event is impossible.
    fn ln_p_m(&self, occupied: u64) -> Result<f64> {
        if occupied == 0 || occupied > self.max_occupied() {
            return Err(Error::invalid(format!(
                "occupied thread count {occupied} must be in 1..={}",
                self.max_occupied()
            )));
        }
        let missed = self.relevant - occupied;
        if missed > MAX_EXACT_MISSES {
            return Err(Error::invalid(format!(
                "exact miss probability is only available for L <= {MAX_EXACT_MISSES}, got {missed}"
            )));
        }
        let ln_i = (self.per_thread as f64).ln();
        let mut terms = Vec::new();
        for parts in partitions(missed, missed) {
            let k = parts.len() as u64;
            if k > occupied {
                continue;
            }
            let mut ln_term = ln_falling(occupied, k);
            let mut mult: BTreeMap<u64, u64> = BTreeMap::new();
            for &e in &parts {
                *mult.entry(e).or_default() += 1;
                ln_term += ln_binomial(self.per_thread, e + 1);
            }
            for &m in mult.values() {
                ln_term -= ln_factorial(m);
            }
            ln_term += (occupied - k) as f64 * ln_i;
            if ln_term.is_finite() {
                terms.push(ln_term);
            }
        }
        if terms.is_empty() {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(ln_binomial(self.threads, occupied) + log_sum_exp(&terms)
            - ln_binomial(self.candidates, self.relevant))
    }

    pub fn p_m(&self, occupied: u64) -> Result<f64> {
        Ok(self.ln_p_m(occupied)?.exp())
    }

    /// `P(L = missed)`, zero when `N - missed` threads cannot be occupied.
    pub fn p_l(&self, missed: u64) -> Result<f64> {
        if missed >= self.relevant {
            return Ok(0.0);
        }
        let occupied = self.relevant - missed;
        if occupied > self.threads {
            if missed > MAX_EXACT_MISSES {
                return Err(Error::invalid(format!(
                    "exact miss probability is only available for L <= {MAX_EXACT_MISSES}"
                )));
            }
            return Ok(0.0);
        }
        self.p_m(occupied)
    }

    pub fn p_l_at_most(&self, max_missed: u64) -> Result<f64> {
        if max_missed > MAX_EXACT_MISSES {
            return Err(Error::invalid(format!(
                "exact miss probability is only available for l <= {MAX_EXACT_MISSES}"
            )));
        }
        (0..=max_missed).map(|l| self.p_l(l)).sum()
    }
}

/// Integer partitions of `total` with parts no larger than `max_part`, in
/// non-increasing order.
fn partitions(total: u64, max_part: u64) -> Vec<Vec<u64>> {
    if total == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in (1..=max_part.min(total)).rev() {
        for mut rest in partitions(total - first, first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + compensated_sum(terms.iter().map(|t| (t - max).exp())).ln()
}

pub(crate) fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    compensated_sum((0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()))
}

fn ln_falling(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    compensated_sum((0..k).map(|i| ((n - i) as f64).ln()))
}

fn ln_factorial(n: u64) -> f64 {
    compensated_sum((2..=n).map(|i| (i as f64).ln()))
}

pub fn exact_p_m(candidates: u64, relevant: u64, per_thread: u64, occupied: u64) -> Result<f64> {
    MissModel::new(candidates, relevant, per_thread)?.p_m(occupied)
}

pub fn p_l_at_most(candidates: u64, relevant: u64, per_thread: u64, max_missed: u64) -> Result<f64> {
    MissModel::new(candidates, relevant, per_thread)?.p_l_at_most(max_missed)
}

/// Number of results lost by per-thread queues of `queue_len`, given the
/// thread that holds each result.
pub fn overflow_misses(thread_ids: impl IntoIterator<Item = u64>, queue_len: usize) -> u64 {
    let mut ids: Vec<u64> = thread_ids.into_iter().collect();
    ids.sort_unstable();
    ids.chunk_by(|a, b| a == b)
        .map(|run| run.len().saturating_sub(queue_len) as u64)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MissDistribution {
    pub trials: u64,
    /// `counts[l]` is the number of trials that missed exactly `l` results.
    pub counts: Vec<u64>,
}

impl MissDistribution {
    pub fn probability(&self, missed: usize) -> f64 {
        self.counts.get(missed).copied().unwrap_or(0) as f64 / self.trials as f64
    }

    pub fn at_most(&self, missed: usize) -> f64 {
        let hits: u64 = self.counts.iter().take(missed + 1).sum();
        hits as f64 / self.trials as f64
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = self.counts.iter().enumerate().map(|(l, &c)| l as f64 * c as f64).sum();
        total / self.trials as f64
    }
}

/// Binomial standard error of an empirical frequency `p` over `trials`.
pub fn binomial_std_error(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Monte Carlo estimate of the miss distribution. Threads are contiguous runs
/// of `per_thread` slots; a trailing partial thread is allowed. Trial `t`
/// draws from stream `t` of a generator keyed by `seed`.
pub fn simulate_miss(
    candidates: u64,
    relevant: u64,
    per_thread: u64,
    queue_len: usize,
    trials: u64,
    seed: u64,
) -> Result<MissDistribution> {
    if relevant > candidates {
        return Err(Error::invalid(format!(
            "relevant count {relevant} exceeds candidate count {candidates}"
        )));
    }
    if relevant == 0 || per_thread == 0 || queue_len == 0 || trials == 0 {
        return Err(Error::invalid(
            "relevant, items per thread, queue length and trials must be positive",
        ));
    }
    let misses: Vec<u64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let slots = sample(&mut rng, candidates as usize, relevant as usize);
            overflow_misses(slots.iter().map(|s| s as u64 / per_thread), queue_len)
        })
        .collect();
    let max = misses.iter().copied().max().unwrap_or(0) as usize;
    let mut counts = vec![0u64; max + 1];
    for l in misses {
        counts[l as usize] += 1;
    }
    Ok(MissDistribution { trials, counts })
}

/// Expected recall of the length-1 queue pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecallPrediction {
    /// `E[M] / N` from linearity of expectation over threads.
    pub recall: f64,
    /// Bounds from the exact `L <= 2` distribution with the remaining mass
    /// placed at the smallest and largest possible miss counts.
    pub truncated_lower: f64,
    pub truncated_upper: f64,
    /// `1 - P(L <= 2)`.
    pub truncation_mass: f64,
}

/// Probability that a thread of `size` slots holds none of `relevant` results
/// placed uniformly among `candidates`.
fn ln_thread_empty(candidates: u64, relevant: u64, size: u64) -> f64 {
    if candidates - size < relevant {
        return f64::NEG_INFINITY;
    }
    compensated_sum((0..relevant).map(|i| (-(size as f64) / (candidates - i) as f64).ln_1p()))
}

/// `E[M] / N` for an arbitrary list of thread sizes.
pub fn expected_recall_for_threads(thread_sizes: &[u64], relevant: u64) -> Result<f64> {
    let candidates: u64 = thread_sizes.iter().sum();
    if relevant == 0 || relevant > candidates {
        return Err(Error::invalid(format!(
            "relevant count {relevant} must be in 1..={candidates}"
        )));
    }
    let mut by_size: BTreeMap<u64, u64> = BTreeMap::new();
    for &s in thread_sizes.iter().filter(|&&s| s > 0) {
        *by_size.entry(s).or_default() += 1;
    }
    let occupied = compensated_sum(by_size.iter().map(|(&size, &count)| {
        count as f64 * -ln_thread_empty(candidates, relevant, size).exp_m1()
    }));
    Ok(occupied / relevant as f64)
}

pub fn expected_recall(candidates: u64, relevant: u64, per_thread: u64) -> Result<RecallPrediction> {
    let model = MissModel::new(candidates, relevant, per_thread)?;
    let sizes = vec![per_thread; model.threads as usize];
    let recall = expected_recall_for_threads(&sizes, relevant)?;

    let cut = 2.min(relevant - 1);
    let mut known_mass = 0.0;
    let mut known_misses = 0.0;
    for l in 0..=cut {
        let p = model.p_l(l)?;
        known_mass += p;
        known_misses += l as f64 * p;
    }
    let rest = (1.0 - known_mass).max(0.0);
    let n = relevant as f64;
    let worst = (relevant - relevant.div_ceil(per_thread).max(1)) as f64;
    let best = (cut + 1) as f64;
    Ok(RecallPrediction {
        recall,
        truncated_lower: (n - known_misses - rest * worst) / n,
        truncated_upper: (n - known_misses - rest * best.min(worst)) / n,
        truncation_mass: rest,
    })
}

/// One row of the CLI table: `P(L <= l)` for each requested `l`.
pub fn miss_table(candidates: u64, relevant: u64, per_thread: u64, max_missed: u64) -> Result<Vec<f64>> {
    let model = MissModel::new(candidates, relevant, per_thread)?;
    (0..=max_missed).map(|l| model.p_l_at_most(l)).collect()
}
