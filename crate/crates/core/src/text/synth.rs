//! Synthetic keyword corpora with a source/target domain shift.
//!
//! Each label owns a disjoint set of keyword ids. A sample is positive for a
//! label exactly when it contains one of that label's keywords. By default the
//! target domain swaps every keyword for a synonym id the source never uses;
//! `shared_keywords` keeps the first few of each label in common.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Domain, LabelMatrix, PUDataset, Sample};
use super::vocab::Vocab;
use crate::error::{invalid, Result};

/// Positives guaranteed per label.
pub const MIN_POSITIVES: usize = 5;
const MIN_NOISE_TOKENS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub labels: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub keywords_per_label: usize,
    /// Keywords per label used by both domains.
    pub shared_keywords: usize,
    /// Label `l` is picked with weight `1 / (l + 1)^skew`.
    pub skew: f64,
}

impl SynthConfig {
    pub fn new(n: usize, labels: usize, vocab_size: usize, max_len: usize) -> Self {
        Self {
            n,
            labels,
            vocab_size,
            max_len,
            keywords_per_label: 4,
            shared_keywords: 0,
            skew: 1.0,
        }
    }

    fn keyword_block(&self) -> usize {
        self.labels * self.keywords_per_label
    }

    /// Keyword ids of label `l` in `domain`.
    pub fn keywords(&self, l: usize, domain: Domain) -> Vec<u32> {
        let k = self.keywords_per_label;
        let base = 2 + l * k;
        let start = match domain {
            Domain::Source => k,
            Domain::Target => self.shared_keywords.min(k),
        };
        (0..k)
            .map(|j| {
                let offset = if j < start { 0 } else { self.keyword_block() };
                (base + offset + j) as u32
            })
            .collect()
    }

    fn noise_range(&self) -> std::ops::Range<u32> {
        (2 + 2 * self.keyword_block()) as u32..self.vocab_size as u32
    }

    fn validate(&self) -> Result<()> {
        if self.labels < 2 {
            return Err(invalid("synthetic data needs at least 2 labels"));
        }
        if self.n < 50 {
            return Err(invalid("synthetic data needs at least 50 samples"));
        }
        if self.keywords_per_label == 0 {
            return Err(invalid("keywords_per_label must be positive"));
        }
        if self.shared_keywords > self.keywords_per_label {
            return Err(invalid("shared_keywords cannot exceed keywords_per_label"));
        }
        if self.max_len < 4 {
            return Err(invalid("synthetic data needs max_len >= 4"));
        }
        let needed = 2 + 2 * self.keyword_block() + MIN_NOISE_TOKENS;
        if self.vocab_size < needed {
            return Err(invalid(format!(
                "vocab size {} too small for {} labels x {} keywords in two domains (need {needed})",
                self.vocab_size, self.labels, self.keywords_per_label
            )));
        }
        Ok(())
    }
}

/// The vocabulary all synthetic corpora of a given size share: id `i` is
/// the word `w{i}`.
pub fn synth_vocab(vocab_size: usize) -> Result<Vocab> {
    Vocab::from_words((2..vocab_size).map(|i| format!("w{i}")).collect())
}

pub fn synth_dataset(cfg: &SynthConfig, domain: Domain, seed: u64) -> Result<PUDataset> {
    cfg.validate()?;
    let domain_salt = match domain {
        Domain::Source => 0x5eed_0001,
        Domain::Target => 0x5eed_0002,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain_salt);
    let weights: Vec<f64> = (0..cfg.labels)
        .map(|l| 1.0 / ((l + 1) as f64).powf(cfg.skew))
        .collect();
    let noise = cfg.noise_range();
    let keywords: Vec<Vec<u32>> = (0..cfg.labels).map(|l| cfg.keywords(l, domain)).collect();

    let mut label_sets: Vec<Vec<usize>> = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let k = match rng.random::<f64>() {
            p if p < 0.5 => 1,
            p if p < 0.8 => 2,
            _ => 3,
        }
        .min(cfg.labels);
        let mut chosen = Vec::with_capacity(k);
        while chosen.len() < k {
            let total: f64 = (0..cfg.labels)
                .filter(|l| !chosen.contains(l))
                .map(|l| weights[l])
                .sum();
            let mut r = rng.random::<f64>() * total;
            for l in (0..cfg.labels).filter(|l| !chosen.contains(l)) {
                r -= weights[l];
                if r <= 0.0 {
                    chosen.push(l);
                    break;
                }
            }
            if r > 0.0 {
                // rounding left the draw just past the last candidate
                let last = (0..cfg.labels).rev().find(|l| !chosen.contains(l)).unwrap();
                chosen.push(last);
            }
        }
        label_sets.push(chosen);
    }

    // Top up rare labels so every label has MIN_POSITIVES positives.
    let min_pos = MIN_POSITIVES.min(cfg.n);
    for l in 0..cfg.labels {
        let mut count = label_sets.iter().filter(|s| s.contains(&l)).count();
        let mut order: Vec<usize> = (0..cfg.n).collect();
        order.shuffle(&mut rng);
        for &i in &order {
            if count >= min_pos {
                break;
            }
            if !label_sets[i].contains(&l) && label_sets[i].len() < 3 {
                label_sets[i].push(l);
                count += 1;
            }
        }
    }

    let vocab = synth_vocab(cfg.vocab_size)?;
    let mut samples = Vec::with_capacity(cfg.n);
    let mut full = LabelMatrix::zeros(cfg.n, cfg.labels);
    for (i, set) in label_sets.iter().enumerate() {
        let mut ids: Vec<u32> = Vec::with_capacity(cfg.max_len);
        for &l in set {
            full.set(i, l, true);
            let reps = rng.random_range(1..=2);
            for _ in 0..reps {
                ids.push(*keywords[l].choose(&mut rng).unwrap());
            }
        }
        let len = rng
            .random_range(cfg.max_len / 2..=cfg.max_len)
            .max(ids.len() + 1)
            .min(cfg.max_len);
        while ids.len() < len {
            ids.push(rng.random_range(noise.clone()));
        }
        ids.shuffle(&mut rng);
        let text = vocab.detokenize(&ids);
        samples.push(Sample {
            id: i as u64,
            tokens: vocab.tokenize(&text, cfg.max_len),
            text,
        });
    }
    let label_names = (0..cfg.labels).map(|l| format!("label_{l}")).collect();
    PUDataset::new(samples, label_names, full.clone(), Some(full), domain)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn every_label_has_five_positives() {
        let cfg = SynthConfig::new(100, 5, 200, 16);
        for seed in 0..10 {
            let ds = synth_dataset(&cfg, Domain::Target, seed).unwrap();
            for l in 0..5 {
                assert!(ds.positives(l).len() >= 5, "seed {seed} label {l}");
            }
        }
    }

    #[test]
    fn domains_share_only_the_configured_keywords() {
        let mut cfg = SynthConfig::new(100, 5, 200, 16);
        for shared in 0..=4 {
            cfg.shared_keywords = shared;
            let src: HashSet<u32> = (0..5).flat_map(|l| cfg.keywords(l, Domain::Source)).collect();
            let tgt: HashSet<u32> = (0..5).flat_map(|l| cfg.keywords(l, Domain::Target)).collect();
            assert_eq!(src.len(), 20);
            assert_eq!(tgt.len(), 20);
            assert_eq!(src.intersection(&tgt).count(), 5 * shared);
            for l in 0..5 {
                for m in 0..5 {
                    if l != m {
                        let a = cfg.keywords(l, Domain::Target);
                        assert!(cfg.keywords(m, Domain::Source).iter().all(|k| !a.contains(k)));
                    }
                }
            }
        }
    }

    #[test]
    fn default_domains_have_disjoint_keywords() {
        let cfg = SynthConfig::new(100, 5, 200, 16);
        let src: HashSet<u32> = (0..5).flat_map(|l| cfg.keywords(l, Domain::Source)).collect();
        assert!((0..5).flat_map(|l| cfg.keywords(l, Domain::Target)).all(|k| !src.contains(&k)));
    }

    #[test]
    fn labels_match_keyword_presence() {
        let cfg = SynthConfig::new(200, 5, 200, 16);
        for domain in [Domain::Source, Domain::Target] {
            let ds = synth_dataset(&cfg, domain, 3).unwrap();
            let full = ds.full.as_ref().unwrap();
            for (i, s) in ds.samples.iter().enumerate() {
                for l in 0..5 {
                    let kw = cfg.keywords(l, domain);
                    let present = s.tokens.iter().any(|t| kw.contains(t));
                    assert_eq!(present, full.get(i, l), "sample {i} label {l}");
                }
            }
        }
    }

    #[test]
    fn deterministic_and_rejects_small_vocab() {
        let cfg = SynthConfig::new(60, 3, 100, 12);
        assert_eq!(
            synth_dataset(&cfg, Domain::Source, 1).unwrap(),
            synth_dataset(&cfg, Domain::Source, 1).unwrap()
        );
        let tiny = SynthConfig::new(60, 20, 50, 12);
        assert!(synth_dataset(&tiny, Domain::Source, 1).is_err());
        assert!(synth_dataset(&SynthConfig::new(10, 3, 100, 12), Domain::Source, 1).is_err());
    }
}
