//! Synthetic parallel corpus with aligned embeddings.
//!
//! Concepts are grouped into clusters. Every concept has one source word
//! (`s<id>`) and one target word (`t<id>`) whose vectors are noisy copies of
//! the concept vector, so a word is close to its translation and loosely
//! close to the other members of its cluster. Sentences are random concept
//! sequences translated word for word, which gives the equal-length,
//! near-monotone alignment the Gaussian mask assumes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SentencePair};
use crate::embeddings::EmbeddingTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub pairs: usize,
    pub clusters: usize,
    pub concepts_per_cluster: usize,
    pub dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Spread of concepts around their cluster center.
    pub cluster_spread: f64,
    /// Spread of words around their concept.
    pub word_noise: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            pairs: 3000,
            clusters: 6,
            concepts_per_cluster: 8,
            dim: 16,
            min_len: 4,
            max_len: 15,
            cluster_spread: 0.6,
            word_noise: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyData {
    pub corpus: Corpus,
    pub table: EmbeddingTable,
}

fn gaussian_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    // Box–Muller; isotropic directions only need a symmetric distribution.
    (0..dim)
        .map(|_| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let v: f64 = rng.random();
            (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        })
        .collect()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn perturbed(rng: &mut impl Rng, base: &[f64], scale: f64) -> Vec<f64> {
    let noise = normalized(gaussian_vector(rng, base.len()));
    normalized(base.iter().zip(noise).map(|(b, n)| b + scale * n).collect())
}

pub fn generate(config: &ToyConfig) -> Result<ToyData> {
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(Error::Config(format!(
            "toy sentence lengths {}..={} are invalid",
            config.min_len, config.max_len
        )));
    }
    if config.clusters == 0 || config.concepts_per_cluster == 0 || config.dim == 0 {
        return Err(Error::Config("toy clusters, concepts and dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut source_rows = Vec::new();
    let mut target_rows = Vec::new();
    for _ in 0..config.clusters {
        let center = normalized(gaussian_vector(&mut rng, config.dim));
        for _ in 0..config.concepts_per_cluster {
            let concept = perturbed(&mut rng, &center, config.cluster_spread);
            let id = source_rows.len();
            source_rows.push((format!("s{id}"), perturbed(&mut rng, &concept, config.word_noise)));
            target_rows.push((format!("t{id}"), perturbed(&mut rng, &concept, config.word_noise)));
        }
    }
    let concepts = source_rows.len();
    let pairs = (0..config.pairs)
        .map(|_| {
            let len = rng.random_range(config.min_len..=config.max_len);
            let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..concepts)).collect();
            SentencePair {
                source: ids.iter().map(|i| format!("s{i}")).collect(),
                target: ids.iter().map(|i| format!("t{i}")).collect(),
            }
        })
        .collect();
    source_rows.extend(target_rows);
    Ok(ToyData {
        corpus: Corpus::from_pairs(pairs),
        table: EmbeddingTable::from_rows(config.dim, source_rows)?,
    })
}

impl ToyData {
    /// Tab-separated pairs, one per line.
    pub fn corpus_tsv(&self) -> String {
        let mut out = String::new();
        for pair in &self.corpus.pairs {
            writeln!(out, "{}\t{}", pair.source.join(" "), pair.target.join(" ")).expect("writing to a String");
        }
        out
    }

    pub fn write(&self, corpus_path: &Path, embeddings_path: &Path) -> Result<()> {
        fs::write(corpus_path, self.corpus_tsv()).map_err(|e| Error::io(corpus_path, e))?;
        self.table.write_word2vec(embeddings_path)
    }
}
