//! Generated corpora with a known type structure.
//!
//! Each sentence holds one mention. Mention tokens are embedded near a
//! per-leaf center, so contextual mention embeddings cluster by type; the
//! surrounding context tokens are pure noise. A fraction of training
//! mentions additionally carry a sibling leaf, which makes them noisy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_dataset, Corpus, RawMention, RawRecord};
use crate::embed::TokenEmbeddingTable;
use crate::Result;

const ROOT_NAMES: [&str; 4] = ["person", "organization", "location", "product"];
const CHILD_NAMES: [[&str; 3]; 4] = [
    ["artist", "athlete", "politician"],
    ["company", "government", "team"],
    ["city", "country", "river"],
    ["car", "software", "weapon"],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub mentions: usize,
    pub roots: usize,
    pub children: usize,
    pub dim: usize,
    /// Spread of leaf centers around their root center.
    pub leaf_spread: f64,
    /// Per-dimension noise on mention tokens.
    pub mention_noise: f64,
    /// Per-dimension scale of context tokens.
    pub context_noise: f64,
    /// Context tokens on each side are drawn from `0..=max_context`.
    pub max_context: usize,
    /// Fraction of training mentions given an extra sibling label.
    pub noisy_rate: f64,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            mentions: 500,
            roots: 2,
            children: 2,
            dim: 32,
            leaf_spread: 0.8,
            mention_noise: 0.3,
            context_noise: 2.0,
            max_context: 6,
            noisy_rate: 0.2,
            dev_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn type_count(&self) -> usize {
        self.roots * (1 + self.children)
    }
}

fn root_name(r: usize) -> String {
    match ROOT_NAMES.get(r) {
        Some(n) => format!("/{n}"),
        None => format!("/root{r}"),
    }
}

fn leaf_name(r: usize, c: usize) -> String {
    match CHILD_NAMES.get(r).and_then(|row| row.get(c)) {
        Some(n) => format!("{}/{n}", root_name(r)),
        None => format!("{}/sub{c}", root_name(r)),
    }
}

/// Generated records and their token embeddings.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub records: Vec<RawRecord>,
    pub table: TokenEmbeddingTable,
}

impl SyntheticData {
    pub fn jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn corpus(&self) -> Result<Corpus> {
        Ok(parse_dataset(self.jsonl().as_bytes(), None)?.corpus)
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticData {
    assert!(
        cfg.roots > 0 && cfg.children > 0 && cfg.dim > 0,
        "empty synthetic schema"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let gaussian = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..cfg.dim).map(|_| scale * unit.sample(rng)).collect()
    };

    let root_centers: Vec<Vec<f64>> = (0..cfg.roots).map(|_| gaussian(&mut rng, 1.0)).collect();
    let leaf_centers: Vec<Vec<Vec<f64>>> = root_centers
        .iter()
        .map(|rc| {
            (0..cfg.children)
                .map(|_| {
                    let off = gaussian(&mut rng, cfg.leaf_spread);
                    rc.iter().zip(off).map(|(a, b)| a + b).collect()
                })
                .collect()
        })
        .collect();

    let n = cfg.mentions;
    let n_test = (cfg.test_fraction * n as f64).round() as usize;
    let n_dev = (cfg.dev_fraction * n as f64).round() as usize;
    let mut splits: Vec<&str> = (0..n)
        .map(|i| {
            if i < n_test {
                "test"
            } else if i < n_test + n_dev {
                "dev"
            } else {
                "train"
            }
        })
        .collect();
    splits.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n);
    let mut table = TokenEmbeddingTable::new(cfg.dim);
    for (i, split) in splits.into_iter().enumerate() {
        let root = rng.random_range(0..cfg.roots);
        let child = rng.random_range(0..cfg.children);
        let mut labels = vec![root_name(root), leaf_name(root, child)];
        if split == "train" && cfg.children > 1 && rng.random_bool(cfg.noisy_rate) {
            let mut other = rng.random_range(0..cfg.children - 1);
            if other >= child {
                other += 1;
            }
            labels.push(leaf_name(root, other));
        }

        let left = rng.random_range(0..=cfg.max_context);
        let right = rng.random_range(0..=cfg.max_context);
        let width = rng.random_range(1..=2usize);
        let mut tokens = Vec::with_capacity(left + width + right);
        let mut vectors = Vec::with_capacity(tokens.capacity());
        for k in 0..left + width + right {
            let in_mention = (left..left + width).contains(&k);
            if in_mention {
                tokens.push(format!("e{i}_{}", k - left));
                let noise = gaussian(&mut rng, cfg.mention_noise);
                vectors.push(
                    leaf_centers[root][child]
                        .iter()
                        .zip(noise)
                        .map(|(c, e)| c + e)
                        .collect::<Vec<_>>(),
                );
            } else {
                tokens.push(format!("w{}", rng.random_range(0..1000u32)));
                vectors.push(gaussian(&mut rng, cfg.context_noise));
            }
        }
        for (t, v) in vectors.iter().enumerate() {
            let v32: Vec<f32> = v.iter().map(|&x| x as f32).collect();
            table
                .insert(i as u32, t as u32, &v32)
                .expect("fresh keys and finite values");
        }
        records.push(RawRecord {
            tokens,
            mentions: vec![RawMention {
                start: left,
                end: left + width,
                labels,
            }],
            split: Some(split.to_string()),
        });
    }
    SyntheticData { records, table }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Cleanliness, Split};

    #[test]
    fn shape_and_splits() {
        let cfg = SyntheticConfig::default();
        let data = generate(&cfg);
        let corpus = data.corpus().unwrap();
        assert_eq!(corpus.mentions.len(), 500);
        assert_eq!(corpus.type_count(), 6);
        assert_eq!(corpus.ids_in(Split::Test).len(), 100);
        assert_eq!(corpus.ids_in(Split::Dev).len(), 50);
        assert_eq!(corpus.hierarchy.max_depth(), 2);
        let tags = corpus.cleanliness().unwrap();
        let train = tags.iter().flatten().count();
        let noisy = tags
            .iter()
            .flatten()
            .filter(|t| **t == Cleanliness::Noisy)
            .count();
        let rate = noisy as f64 / train as f64;
        assert!((rate - 0.2).abs() < 0.06, "{rate}");
        for m in &corpus.mentions {
            if m.split != Split::Train {
                assert_eq!(m.labels.len(), 2);
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SyntheticConfig {
            mentions: 40,
            ..SyntheticConfig::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.jsonl(), b.jsonl());
        assert_eq!(a.table, b.table);
        let c = generate(&SyntheticConfig { seed: 1, ..cfg });
        assert_ne!(a.jsonl(), c.jsonl());
    }

    #[test]
    fn every_token_has_an_embedding() {
        let data = generate(&SyntheticConfig {
            mentions: 30,
            roots: 3,
            children: 3,
            ..SyntheticConfig::default()
        });
        let corpus = data.corpus().unwrap();
        for m in &corpus.mentions {
            for t in 0..corpus.sentence(m).len() {
                assert!(data.table.get(m.record, t).is_some());
            }
        }
        assert_eq!(corpus.type_count(), 12);
    }
}
