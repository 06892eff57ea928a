//! Bit-packed {-1,+1} vectors and the similarity arithmetic built on them.
//!
//! A logical value of +1 is stored as a set bit, -1 as a cleared bit. Bits past
//! `dim` in the last word are always zero, so two vectors with equal words are
//! equal vectors and XOR of two canonical vectors is zero in the padding.
//!
//! The dot product of two sign vectors is `n - 2 * popcount(x ^ y)`.
//! Multi-plane (base + residual) scores are accumulated as exact integers scaled
//! by `2^(u+v)` and divided once at the end.

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

#[inline]
pub fn words_for(dim: usize) -> usize {
    dim.div_ceil(WORD_BITS)
}

#[inline]
fn tail_mask(dim: usize) -> u64 {
    match dim % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// One ingredient plane: `dim` signs packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedBinaryVector {
    dim: usize,
    words: Vec<u64>,
}

impl PackedBinaryVector {
    /// Packs a slice of -1/+1 values.
    pub fn pack(values: &[i8]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("binary vector"));
        }
        let mut words = vec![0u64; words_for(values.len())];
        for (i, &v) in values.iter().enumerate() {
            match v {
                1 => words[i / WORD_BITS] |= 1 << (i % WORD_BITS),
                -1 => {}
                other => {
                    return Err(Error::NotBinary {
                        index: i,
                        value: other as f64,
                    })
                }
            }
        }
        Ok(Self {
            dim: values.len(),
            words,
        })
    }

    /// Packs the signs of real values: `x > 0` becomes +1, everything else -1.
    pub fn from_signs(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("binary vector"));
        }
        let mut words = vec![0u64; words_for(values.len())];
        for (i, &v) in values.iter().enumerate() {
            if v > 0.0 {
                words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        Ok(Self {
            dim: values.len(),
            words,
        })
    }

    /// Wraps raw words. Rejects a wrong word count or set padding bits.
    pub fn from_words(dim: usize, words: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("binary vector"));
        }
        if words.len() != words_for(dim) {
            return Err(Error::DimensionMismatch {
                expected: words_for(dim),
                actual: words.len(),
            });
        }
        let last = words[words.len() - 1];
        if last & !tail_mask(dim) != 0 {
            return Err(Error::Format(format!(
                "padding bits set past dimension {dim}"
            )));
        }
        Ok(Self { dim, words })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> i8 {
        if self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn unpack(&self) -> Vec<i8> {
        (0..self.dim).map(|i| self.get(i)).collect()
    }

    /// Flips every sign, keeping the padding canonical.
    pub fn negated(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(self.dim);
        }
        Self {
            dim: self.dim,
            words,
        }
    }
}

/// Dot product of two sign vectors stored as canonical word slices.
#[inline(always)]
pub fn dot_words(dim: usize, x: &[u64], y: &[u64]) -> i64 {
    let differing: u32 = x.iter().zip(y).map(|(a, b)| (a ^ b).count_ones()).sum();
    dim as i64 - 2 * differing as i64
}

pub fn binary_dot(x: &PackedBinaryVector, y: &PackedBinaryVector) -> Result<i64> {
    if x.dim != y.dim {
        return Err(Error::DimensionMismatch {
            expected: x.dim,
            actual: y.dim,
        });
    }
    Ok(dot_words(x.dim, &x.words, &y.words))
}

/// Combines plane-pair dot products into the weighted RBE inner product.
///
/// `dot(j, i)` must return the dot product of query plane `j` with keyword
/// plane `i`. With residual weights the pair `(j, i)` carries weight
/// `2^-(j+i)`; the result is the exact integer obtained by scaling with
/// `2^(qp+kp-2)`. Levels are folded highest-weight first with one doubling
/// per level, which is at most `u+v` shifts. Without weights every pair has
/// weight 1 and the scale is 1.
#[inline(always)]
pub fn accumulate_plane_dots(
    query_planes: usize,
    keyword_planes: usize,
    residual_weights: bool,
    mut dot: impl FnMut(usize, usize) -> i64,
) -> i64 {
    let mut acc = 0i64;
    if !residual_weights {
        for j in 0..query_planes {
            for i in 0..keyword_planes {
                acc += dot(j, i);
            }
        }
        return acc;
    }
    let top = query_planes + keyword_planes - 2;
    for level in 0..=top {
        if level > 0 {
            acc <<= 1;
        }
        let lo = level.saturating_sub(keyword_planes - 1);
        let hi = level.min(query_planes - 1);
        for j in lo..=hi {
            acc += dot(j, level - j);
        }
    }
    acc
}

/// Denominator that undoes the integer scaling of [`accumulate_plane_dots`].
#[inline]
pub fn accumulation_scale(query_planes: usize, keyword_planes: usize, residual_weights: bool) -> f64 {
    if residual_weights {
        (1u64 << (query_planes + keyword_planes - 2)) as f64
    } else {
        1.0
    }
}

/// Scale applied to plane `t` in the refined vector.
#[inline]
pub fn plane_weight(t: usize, residual_weights: bool) -> f64 {
    if residual_weights {
        0.5f64.powi(t as i32)
    } else {
        1.0
    }
}

/// Base plane plus residual planes, with the norm of the refined vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RbeEmbedding {
    planes: Vec<PackedBinaryVector>,
    magnitude: f64,
}

impl RbeEmbedding {
    /// Builds an embedding and computes its magnitude from the refined vector.
    pub fn new(planes: Vec<PackedBinaryVector>, residual_weights: bool) -> Result<Self> {
        Self::check_planes(&planes)?;
        let magnitude = norm(&reconstruct(&planes, residual_weights));
        if magnitude <= 0.0 {
            return Err(Error::ZeroMagnitude);
        }
        Ok(Self { planes, magnitude })
    }

    /// Builds an embedding with a stored magnitude.
    pub fn with_magnitude(planes: Vec<PackedBinaryVector>, magnitude: f64) -> Result<Self> {
        Self::check_planes(&planes)?;
        if !magnitude.is_finite() {
            return Err(Error::NonFinite("magnitude"));
        }
        if magnitude <= 0.0 {
            return Err(Error::ZeroMagnitude);
        }
        Ok(Self { planes, magnitude })
    }

    fn check_planes(planes: &[PackedBinaryVector]) -> Result<()> {
        let first = planes.first().ok_or(Error::Empty("embedding planes"))?;
        for p in &planes[1..] {
            if p.dim != first.dim {
                return Err(Error::DimensionMismatch {
                    expected: first.dim,
                    actual: p.dim,
                });
            }
        }
        Ok(())
    }

    pub fn planes(&self) -> &[PackedBinaryVector] {
        &self.planes
    }

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn dim(&self) -> usize {
        self.planes[0].dim
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }
}

fn reconstruct(planes: &[PackedBinaryVector], residual_weights: bool) -> Vec<f64> {
    let dim = planes[0].dim;
    let mut out = vec![0.0; dim];
    for (t, plane) in planes.iter().enumerate() {
        let w = plane_weight(t, residual_weights);
        for (i, o) in out.iter_mut().enumerate() {
            *o += w * plane.get(i) as f64;
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Float reconstruction of the refined vector.
pub fn refined_vector(e: &RbeEmbedding, residual_weights: bool) -> Vec<f64> {
    reconstruct(&e.planes, residual_weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityConfig {
    pub query_planes: usize,
    pub keyword_planes: usize,
    pub residual_weights: bool,
    /// Divide by the query norm too. Off for ranking, where it is constant.
    pub normalize_query: bool,
}

impl SimilarityConfig {
    pub fn new(query_planes: usize, keyword_planes: usize, residual_weights: bool) -> Result<Self> {
        if query_planes == 0 || keyword_planes == 0 {
            return Err(Error::invalid("plane counts must be at least 1"));
        }
        Ok(Self {
            query_planes,
            keyword_planes,
            residual_weights,
            normalize_query: true,
        })
    }

    pub fn ranking(mut self) -> Self {
        self.normalize_query = false;
        self
    }
}

/// Cosine (or query-unnormalized cosine) of two RBE embeddings.
pub fn rbe_score(q: &RbeEmbedding, k: &RbeEmbedding, cfg: &SimilarityConfig) -> Result<f64> {
    if q.plane_count() != cfg.query_planes {
        return Err(Error::PlaneMismatch {
            expected: cfg.query_planes,
            actual: q.plane_count(),
        });
    }
    if k.plane_count() != cfg.keyword_planes {
        return Err(Error::PlaneMismatch {
            expected: cfg.keyword_planes,
            actual: k.plane_count(),
        });
    }
    if q.dim() != k.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            actual: k.dim(),
        });
    }
    if k.magnitude <= 0.0 {
        return Err(Error::ZeroMagnitude);
    }
    let dim = q.dim();
    let scaled = accumulate_plane_dots(
        cfg.query_planes,
        cfg.keyword_planes,
        cfg.residual_weights,
        |j, i| dot_words(dim, q.planes[j].words(), k.planes[i].words()),
    );
    let dot = scaled as f64
        / accumulation_scale(cfg.query_planes, cfg.keyword_planes, cfg.residual_weights);
    let mut score = dot / k.magnitude;
    if cfg.normalize_query {
        score /= q.magnitude;
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signs(rng: &mut impl Rng, dim: usize) -> Vec<i8> {
        (0..dim).map(|_| if rng.gen() { 1 } else { -1 }).collect()
    }

    fn random_embedding(rng: &mut impl Rng, dim: usize, planes: usize, weighted: bool) -> RbeEmbedding {
        let planes = (0..planes)
            .map(|_| PackedBinaryVector::pack(&random_signs(rng, dim)).unwrap())
            .collect();
        RbeEmbedding::new(planes, weighted).unwrap()
    }

    fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (norm(a) * norm(b))
    }

    #[test]
    fn pack_all_ones_and_all_minus() {
        let v = PackedBinaryVector::pack(&[1, 1, 1, 1]).unwrap();
        assert_eq!(v.words(), &[0b1111]);
        assert_eq!(v.dim(), 4);
        let v = PackedBinaryVector::pack(&[-1, -1, -1, -1]).unwrap();
        assert_eq!(v.words(), &[0]);
    }

    #[test]
    fn pack_alternating_five() {
        let values = [1, -1, 1, -1, 1];
        let v = PackedBinaryVector::pack(&values).unwrap();
        assert_eq!(v.words(), &[0b10101]);
        assert_eq!(v.words()[0] >> 5, 0);
        assert_eq!(v.unpack(), values);
    }

    #[test]
    fn pack_rejects_bad_input() {
        assert!(matches!(PackedBinaryVector::pack(&[]), Err(Error::Empty(_))));
        assert!(matches!(
            PackedBinaryVector::pack(&[1, 0, -1]),
            Err(Error::NotBinary { index: 1, .. })
        ));
    }

    #[test]
    fn from_words_rejects_dirty_padding() {
        assert!(PackedBinaryVector::from_words(5, vec![0b100000]).is_err());
        assert!(PackedBinaryVector::from_words(5, vec![0b11111]).is_ok());
        assert!(PackedBinaryVector::from_words(64, vec![u64::MAX]).is_ok());
        assert!(PackedBinaryVector::from_words(65, vec![0]).is_err());
    }

    #[test]
    fn dot_identical_and_antipodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = PackedBinaryVector::pack(&random_signs(&mut rng, 64)).unwrap();
        assert_eq!(binary_dot(&x, &x).unwrap(), 64);
        assert_eq!(binary_dot(&x, &x.negated()).unwrap(), -64);
    }

    #[test]
    fn dot_half_agreement() {
        let x = PackedBinaryVector::pack(&[1, 1, 1, 1, -1, -1, -1, -1]).unwrap();
        let y = PackedBinaryVector::pack(&[1, -1, 1, -1, 1, -1, 1, -1]).unwrap();
        assert_eq!(binary_dot(&x, &y).unwrap(), 0);
    }

    #[test]
    fn dot_dimension_mismatch() {
        let x = PackedBinaryVector::pack(&[1, 1]).unwrap();
        let y = PackedBinaryVector::pack(&[1, 1, 1]).unwrap();
        assert!(matches!(binary_dot(&x, &y), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn dot_matches_product_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &dim in &[1usize, 63, 64, 65, 128] {
            for _ in 0..20_000 {
                let a = random_signs(&mut rng, dim);
                let b = random_signs(&mut rng, dim);
                let oracle: i64 = a.iter().zip(&b).map(|(x, y)| (*x as i64) * (*y as i64)).sum();
                let x = PackedBinaryVector::pack(&a).unwrap();
                let y = PackedBinaryVector::pack(&b).unwrap();
                let got = binary_dot(&x, &y).unwrap();
                assert_eq!(got, oracle);
                assert_eq!((got - dim as i64).rem_euclid(2), 0);
            }
        }
    }

    #[test]
    fn refined_vector_examples() {
        let one = RbeEmbedding::new(vec![PackedBinaryVector::pack(&[1, -1]).unwrap()], true).unwrap();
        assert_eq!(refined_vector(&one, true), vec![1.0, -1.0]);

        let planes = vec![
            PackedBinaryVector::pack(&[1, 1]).unwrap(),
            PackedBinaryVector::pack(&[1, -1]).unwrap(),
        ];
        let e = RbeEmbedding::new(planes, true).unwrap();
        assert_eq!(refined_vector(&e, true), vec![1.5, 0.5]);
        assert_eq!(refined_vector(&e, false), vec![2.0, 0.0]);
        assert!((e.magnitude() - (1.5f64 * 1.5 + 0.25).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unweighted_embedding_can_have_zero_magnitude() {
        let planes = vec![
            PackedBinaryVector::pack(&[1, -1]).unwrap(),
            PackedBinaryVector::pack(&[-1, 1]).unwrap(),
        ];
        assert!(matches!(RbeEmbedding::new(planes, false), Err(Error::ZeroMagnitude)));
    }

    #[test]
    fn self_cosine_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_embedding(&mut rng, 100, 3, true);
        let cfg = SimilarityConfig::new(3, 3, true).unwrap();
        assert!((rbe_score(&e, &e, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn base_only_score_example() {
        let q = RbeEmbedding::new(vec![PackedBinaryVector::pack(&[1, 1, 1, 1]).unwrap()], true).unwrap();
        let k = RbeEmbedding::new(vec![PackedBinaryVector::pack(&[1, 1, -1, -1]).unwrap()], true).unwrap();
        let cfg = SimilarityConfig::new(1, 1, true).unwrap().ranking();
        assert_eq!(k.magnitude(), 2.0);
        assert_eq!(rbe_score(&q, &k, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn score_matches_float_reconstruction_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for weighted in [true, false] {
            for qp in 1..=3 {
                for kp in 1..=3 {
                    let cfg = SimilarityConfig::new(qp, kp, weighted).unwrap();
                    let mut done = 0;
                    while done < 1000 {
                        let dim = rng.gen_range(1..=130);
                        let q = random_embedding(&mut rng, dim, qp, true);
                        let planes = (0..kp)
                            .map(|_| PackedBinaryVector::pack(&random_signs(&mut rng, dim)).unwrap())
                            .collect::<Vec<_>>();
                        let Ok(k) = RbeEmbedding::new(planes, weighted) else { continue };
                        let Ok(q) = RbeEmbedding::new(q.planes().to_vec(), weighted) else { continue };
                        let oracle = oracle_cosine(&refined_vector(&q, weighted), &refined_vector(&k, weighted));
                        let got = rbe_score(&q, &k, &cfg).unwrap();
                        assert!((got - oracle).abs() < 1e-6, "qp={qp} kp={kp} {got} vs {oracle}");
                        done += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn score_rejects_plane_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_embedding(&mut rng, 16, 2, true);
        let k = random_embedding(&mut rng, 16, 1, true);
        let cfg = SimilarityConfig::new(2, 2, true).unwrap();
        assert!(matches!(rbe_score(&q, &k, &cfg), Err(Error::PlaneMismatch { .. })));
        let k = random_embedding(&mut rng, 17, 2, true);
        assert!(matches!(rbe_score(&q, &k, &cfg), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn accumulation_uses_at_most_u_plus_v_doublings() {
        // Every pair dot = 1 isolates the weights: Σ_{j,i} 2^{top-(j+i)}.
        for qp in 1..=4 {
            for kp in 1..=4 {
                let mut calls = 0;
                let got = accumulate_plane_dots(qp, kp, true, |_, _| {
                    calls += 1;
                    1
                });
                assert_eq!(calls, qp * kp);
                let top = (qp + kp - 2) as i32;
                let mut expect = 0i64;
                for j in 0..qp as i32 {
                    for i in 0..kp as i32 {
                        expect += 1 << (top - j - i);
                    }
                }
                assert_eq!(got, expect);
            }
        }
    }

    #[test]
    fn refined_value_cardinality() {
        for j in 1..=5usize {
            let mut weighted = std::collections::BTreeSet::new();
            let mut plain = std::collections::BTreeSet::new();
            for pattern in 0..(1u32 << j) {
                let planes: Vec<_> = (0..j)
                    .map(|t| PackedBinaryVector::pack(&[if pattern >> t & 1 == 1 { 1 } else { -1 }]).unwrap())
                    .collect();
                let w = reconstruct(&planes, true)[0];
                let p = reconstruct(&planes, false)[0];
                weighted.insert((w * 1024.0) as i64);
                plain.insert(p as i64);
                assert!(w.abs() < 2.0 && w != 0.0);
            }
            assert_eq!(weighted.len(), 1 << j);
            assert_eq!(plain.len(), j + 1);
            if j == 2 {
                let vals: Vec<f64> = weighted.iter().map(|&v| v as f64 / 1024.0).collect();
                assert_eq!(vals, vec![-1.5, -0.5, 0.5, 1.5]);
            }
        }
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(values in prop::collection::vec(prop::bool::ANY, 1..300)) {
            let signs: Vec<i8> = values.iter().map(|&b| if b { 1 } else { -1 }).collect();
            let v = PackedBinaryVector::pack(&signs).unwrap();
            prop_assert_eq!(v.words().len(), words_for(signs.len()));
            prop_assert_eq!(v.words().last().unwrap() & !tail_mask(signs.len()), 0);
            prop_assert_eq!(v.unpack(), signs);
        }

        #[test]
        fn ranking_is_query_norm_invariant(seed in any::<u64>(), dim in 1usize..100, qp in 1usize..4, kp in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_embedding(&mut rng, dim, qp, true);
            let keys: Vec<_> = (0..20).map(|_| random_embedding(&mut rng, dim, kp, true)).collect();
            let full = SimilarityConfig::new(qp, kp, true).unwrap();
            let rank = full.ranking();
            let order = |cfg: &SimilarityConfig| {
                let mut idx: Vec<usize> = (0..keys.len()).collect();
                let scores: Vec<f64> = keys.iter().map(|k| rbe_score(&q, k, cfg).unwrap()).collect();
                idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
                idx
            };
            prop_assert_eq!(order(&full), order(&rank));
        }
    }
}
