//! Synthetic click logs drawn from latent topic clusters.
//!
//! Every cluster owns a private vocabulary of pseudo-words. A click pair
//! picks a cluster and writes its query and keyword from that vocabulary,
//! occasionally mixing in shared filler words, so related texts may share no
//! surface form and the towers must learn which words co-occur.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClickPair;
use crate::error::{Error, Result};

const FILLER: &[&str] = &["best", "cheap", "buy", "online", "near", "me", "sale", "top", "new", "free"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub clusters: usize,
    pub words_per_cluster: usize,
    pub pairs: usize,
    /// Words per text are drawn uniformly from `1..=max_words`.
    pub max_words: usize,
    /// Chance that a text gets one filler word appended.
    pub filler_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clusters: 400,
            words_per_cluster: 6,
            pairs: 12_000,
            max_words: 3,
            filler_prob: 0.3,
            seed: 2024,
        }
    }
}

fn pseudo_word(rng: &mut impl Rng) -> String {
    const CONSONANTS: &[u8] = b"bcdfghjklmnprstvwz";
    const VOWELS: &[u8] = b"aeiou";
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
        w.push(*VOWELS.choose(rng).unwrap() as char);
    }
    if rng.gen_bool(0.5) {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
    }
    w
}

fn text(rng: &mut impl Rng, vocab: &[String], cfg: &SynthConfig) -> String {
    let count = rng.gen_range(1..=cfg.max_words.min(vocab.len()));
    let mut words: Vec<&str> = vocab.choose_multiple(rng, count).map(String::as_str).collect();
    if rng.gen_bool(cfg.filler_prob) {
        words.push(FILLER.choose(rng).unwrap());
    }
    words.join(" ")
}

/// Generates `cfg.pairs` click pairs, each tagged with its cluster.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<(usize, ClickPair)>> {
    if cfg.clusters == 0 || cfg.words_per_cluster == 0 || cfg.max_words == 0 {
        return Err(Error::invalid("clusters, words per cluster and max words must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.filler_prob) {
        return Err(Error::invalid("filler probability must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen: HashSet<String> = FILLER.iter().map(|s| s.to_string()).collect();
    let vocab: Vec<Vec<String>> = (0..cfg.clusters)
        .map(|_| {
            let mut words = Vec::with_capacity(cfg.words_per_cluster);
            while words.len() < cfg.words_per_cluster {
                let w = pseudo_word(&mut rng);
                if seen.insert(w.clone()) {
                    words.push(w);
                }
            }
            words
        })
        .collect();
    Ok((0..cfg.pairs)
        .map(|_| {
            let c = rng.gen_range(0..cfg.clusters);
            let query = text(&mut rng, &vocab[c], cfg);
            let keyword = text(&mut rng, &vocab[c], cfg);
            (c, ClickPair { query, keyword })
        })
        .collect())
}

/// Writes one `query<TAB>keyword` line per pair.
pub fn write_pairs<W: Write>(w: &mut W, pairs: &[ClickPair]) -> Result<()> {
    for p in pairs {
        writeln!(w, "{}\t{}", p.query, p.keyword)?;
    }
    Ok(())
}

/// Parses `query<TAB>keyword` lines. Blank lines are skipped.
pub fn read_pairs<R: BufRead>(r: R) -> Result<Vec<ClickPair>> {
    let mut pairs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(q), Some(k), None) if !q.trim().is_empty() && !k.trim().is_empty() => {
                pairs.push(ClickPair::new(q.trim(), k.trim()));
            }
            _ => {
                return Err(Error::Format(format!(
                    "line {}: expected a non-empty query and keyword separated by one tab",
                    i + 1
                )))
            }
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let cfg = SynthConfig {
            pairs: 50,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn texts_come_from_their_cluster() {
        let cfg = SynthConfig {
            clusters: 5,
            pairs: 200,
            filler_prob: 0.0,
            ..SynthConfig::default()
        };
        let data = generate(&cfg).unwrap();
        for c in 0..5 {
            let words: HashSet<&str> = data
                .iter()
                .filter(|(k, _)| *k == c)
                .flat_map(|(_, p)| p.query.split(' ').chain(p.keyword.split(' ')))
                .collect();
            assert!(words.len() <= cfg.words_per_cluster);
        }
    }

    #[test]
    fn tsv_round_trip_and_errors() {
        let pairs = vec![ClickPair::new("best roses", "rose delivery"), ClickPair::new("q", "k")];
        let mut buf = Vec::new();
        write_pairs(&mut buf, &pairs).unwrap();
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), pairs);
        assert!(read_pairs("only one field\n".as_bytes()).is_err());
        assert!(read_pairs("a\tb\tc\n".as_bytes()).is_err());
        assert_eq!(read_pairs("\n a \t b \n\n".as_bytes()).unwrap(), vec![ClickPair::new("a", "b")]);
    }
}
