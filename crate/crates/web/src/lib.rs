//! Browser explorers built on `rbe-core`.
//!
//! Each explorer is a plain function returning a serializable report, so it
//! runs and tests natively. The `#[wasm_bindgen]` wrappers at the bottom take
//! JavaScript numbers and return the same reports as JSON strings.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbe::analysis::{
    binomial_std_error, expected_recall_for_threads, overflow_misses, simulate_miss, MissModel, MAX_EXACT_MISSES,
};
use rbe::bench::binary_planes;
use rbe::binvec::plane_weight;
use rbe::engine::ScanGeometry;
use rbe::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest plane count the refined-value explorer enumerates.
pub const MAX_LEVEL_PLANES: usize = 12;

/// Largest candidate count the scan map draws slot by slot.
pub const MAX_MAP_SLOTS: usize = 16_384;

/// Largest trial count one simulation request may run.
pub const MAX_TRIALS: u64 = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissRow {
    pub missed: u64,
    /// Exact `P(L = l)`, absent where the closed form does not apply.
    pub exact: Option<f64>,
    /// Exact `P(L <= l)`.
    pub exact_at_most: Option<f64>,
    pub simulated: Option<f64>,
    pub simulated_at_most: Option<f64>,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissReport {
    pub candidates: u64,
    pub relevant: u64,
    pub per_thread: u64,
    pub threads: u64,
    pub expected_recall: f64,
    /// Why the exact columns are empty, when they are.
    pub exact_note: Option<String>,
    pub trials: u64,
    pub simulated_mean_missed: Option<f64>,
    pub rows: Vec<MissRow>,
}

/// Miss probabilities for `relevant` results among `candidates` slots split
/// into threads of `per_thread`, each keeping one result.
///
/// Exact values cover `l <= 3` on evenly divided candidates. With `trials > 0`
/// a seeded simulation fills the remaining columns, including ragged threads.
pub fn miss_report(
    candidates: u64,
    relevant: u64,
    per_thread: u64,
    max_missed: u64,
    trials: u64,
    seed: u64,
) -> Result<MissReport> {
    if per_thread == 0 || relevant == 0 || relevant > candidates {
        return Err(invalid("need 1 <= relevant <= candidates and per_thread >= 1"));
    }
    if trials > MAX_TRIALS {
        return Err(invalid(format!("at most {MAX_TRIALS} trials per request")));
    }
    let threads = candidates.div_ceil(per_thread);
    let sizes: Vec<u64> = (0..threads)
        .map(|t| per_thread.min(candidates - t * per_thread))
        .collect();
    let expected_recall = expected_recall_for_threads(&sizes, relevant)?;
    let (model, exact_note) = match MissModel::new(candidates, relevant, per_thread) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let simulated = if trials > 0 {
        Some(simulate_miss(candidates, relevant, per_thread, 1, trials, seed)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for l in 0..=max_missed.min(relevant) {
        let exact_model = model.as_ref().filter(|_| l <= MAX_EXACT_MISSES);
        let (exact, exact_at_most) = match exact_model {
            Some(m) => (Some(m.p_l(l)?), Some(m.p_l_at_most(l)?)),
            None => (None, None),
        };
        let sim = simulated.as_ref();
        rows.push(MissRow {
            missed: l,
            exact,
            exact_at_most,
            simulated: sim.map(|d| d.probability(l as usize)),
            simulated_at_most: sim.map(|d| d.at_most(l as usize)),
            std_error: sim.map(|d| binomial_std_error(d.at_most(l as usize), d.trials)),
        });
    }
    let exact_note = exact_note.or_else(|| {
        (max_missed > MAX_EXACT_MISSES).then(|| format!("exact values stop at l = {MAX_EXACT_MISSES}"))
    });
    Ok(MissReport {
        candidates,
        relevant,
        per_thread,
        threads,
        expected_recall,
        exact_note,
        trials,
        simulated_mean_missed: simulated.as_ref().map(|d| d.mean()),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Level {
    pub value: f64,
    /// Sign patterns that produce `value`.
    pub patterns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub planes: usize,
    pub residual_weights: bool,
    pub weights: Vec<f64>,
    /// Distinct per-coordinate values of `Σ w_t b_t` over `b ∈ {-1, +1}^t`.
    pub levels: Vec<Level>,
    pub sign_patterns: u64,
}

/// Every value one coordinate of a refined vector can take.
pub fn refined_levels(planes: usize, residual_weights: bool) -> Result<LevelReport> {
    if planes == 0 || planes > MAX_LEVEL_PLANES {
        return Err(invalid(format!("planes must be in 1..={MAX_LEVEL_PLANES}")));
    }
    let weights: Vec<f64> = (0..planes).map(|t| plane_weight(t, residual_weights)).collect();
    let mut values: Vec<f64> = (0u64..1 << planes)
        .map(|bits| {
            weights
                .iter()
                .enumerate()
                .map(|(t, w)| if bits >> t & 1 == 1 { *w } else { -*w })
                .sum()
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let mut levels: Vec<Level> = Vec::new();
    for v in values {
        match levels.last_mut() {
            Some(last) if last.value == v => last.patterns += 1,
            _ => levels.push(Level { value: v, patterns: 1 }),
        }
    }
    Ok(LevelReport {
        planes,
        residual_weights,
        weights,
        levels,
        sign_patterns: 1 << planes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Approximation {
    /// Sign planes, base plane first.
    pub planes: Vec<Vec<i8>>,
    /// Refined vector after each added plane, in the units of the input.
    pub refined: Vec<Vec<f64>>,
    /// Cosine between the input and each refined vector.
    pub cosines: Vec<f64>,
}

/// Greedy residual binarization of `values`: the base plane is `sign(x)`
/// and each further plane is the sign of what the weighted planes so far
/// leave unexplained.
pub fn approximate(values: &[f64], planes: usize, residual_weights: bool) -> Result<Approximation> {
    if values.is_empty() {
        return Err(Error::Empty("vector"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("vector"));
    }
    if planes == 0 || planes > MAX_LEVEL_PLANES {
        return Err(invalid(format!("planes must be in 1..={MAX_LEVEL_PLANES}")));
    }
    let x: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    let scale = x.iter().map(|v| v.abs() as f64).sum::<f64>() / x.len() as f64;
    let packed = binary_planes(&x, planes, residual_weights)?;
    let signs: Vec<Vec<i8>> = packed.iter().map(|p| (0..p.dim()).map(|i| p.get(i)).collect()).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut refined = Vec::with_capacity(planes);
    let mut cosines = Vec::with_capacity(planes);
    let mut current = vec![0.0; values.len()];
    for (t, plane) in signs.iter().enumerate() {
        let w = plane_weight(t, residual_weights) * scale;
        for (c, &b) in current.iter_mut().zip(plane) {
            *c += w * b as f64;
        }
        let dot: f64 = current.iter().zip(values).map(|(a, b)| a * b).sum();
        let cnorm = current.iter().map(|v| v * v).sum::<f64>().sqrt();
        cosines.push(if norm > 0.0 && cnorm > 0.0 { dot / (norm * cnorm) } else { 0.0 });
        refined.push(current.clone());
    }
    Ok(Approximation {
        planes: signs,
        refined,
        cosines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanMap {
    pub geometry: ScanGeometry,
    pub candidates: usize,
    /// Ordinal of the thread that visits each slot.
    pub thread_of: Vec<u32>,
    pub thread_sizes: Vec<u64>,
    /// Slots holding the sampled relevant results, ascending.
    pub relevant_slots: Vec<usize>,
    /// Relevant results lost to threads that hold more than one.
    pub missed: u64,
    pub expected_recall: f64,
}

/// Thread layout of `candidates` slots under a covering geometry, with
/// `relevant` results placed by a seeded uniform draw.
pub fn scan_map(
    candidates: usize,
    threads_per_block: usize,
    items_per_thread: usize,
    relevant: usize,
    seed: u64,
) -> Result<ScanMap> {
    if candidates == 0 || candidates > MAX_MAP_SLOTS {
        return Err(invalid(format!("candidates must be in 1..={MAX_MAP_SLOTS}")));
    }
    if relevant == 0 || relevant > candidates {
        return Err(invalid("need 1 <= relevant <= candidates"));
    }
    let geometry = ScanGeometry::covering(candidates, threads_per_block, items_per_thread, 1)?;
    let thread_of: Vec<u32> = (0..candidates).map(|s| geometry.thread_of(s) as u32).collect();
    let thread_sizes = geometry.thread_sizes(candidates);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut relevant_slots = sample(&mut rng, candidates, relevant).into_vec();
    relevant_slots.sort_unstable();
    let missed = overflow_misses(relevant_slots.iter().map(|&s| thread_of[s] as u64), 1);
    let expected_recall = expected_recall_for_threads(&thread_sizes, relevant as u64)?;
    Ok(ScanMap {
        geometry,
        candidates,
        thread_of,
        thread_sizes,
        relevant_slots,
        missed,
        expected_recall,
    })
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn count(name: &str, v: f64) -> Result<u64> {
    if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= 2f64.powi(53)) {
        return Err(invalid(format!("{name} must be a non-negative integer, got {v}")));
    }
    Ok(v as u64)
}

fn to_json<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = missReport)]
pub fn miss_report_json(
    candidates: f64,
    relevant: f64,
    per_thread: f64,
    max_missed: f64,
    trials: f64,
    seed: f64,
) -> std::result::Result<String, JsError> {
    to_json((|| {
        miss_report(
            count("candidates", candidates)?,
            count("relevant", relevant)?,
            count("per_thread", per_thread)?,
            count("max_missed", max_missed)?,
            count("trials", trials)?,
            count("seed", seed)?,
        )
    })())
}

#[wasm_bindgen(js_name = refinedLevels)]
pub fn refined_levels_json(planes: u32, residual_weights: bool) -> std::result::Result<String, JsError> {
    to_json(refined_levels(planes as usize, residual_weights))
}

#[wasm_bindgen(js_name = approximate)]
pub fn approximate_json(values: &[f64], planes: u32, residual_weights: bool) -> std::result::Result<String, JsError> {
    to_json(approximate(values, planes as usize, residual_weights))
}

#[wasm_bindgen(js_name = scanMap)]
pub fn scan_map_json(
    candidates: u32,
    threads_per_block: u32,
    items_per_thread: u32,
    relevant: u32,
    seed: f64,
) -> std::result::Result<String, JsError> {
    to_json((|| {
        scan_map(
            candidates as usize,
            threads_per_block as usize,
            items_per_thread as usize,
            relevant as usize,
            count("seed", seed)?,
        )
    })())
}

#[cfg(test)]
mod tests;
