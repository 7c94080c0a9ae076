//! Parallel corpus ingestion: tokenization, the equal-length filter,
//! vocabularies and deterministic splits.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicode_normalization::UnicodeNormalization;

use crate::embeddings::EmbeddingTable;
use crate::{Error, Result};

/// One source/target sentence pair with identical token counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl SentencePair {
    /// Tokenizes both sides and keeps the pair only when the token counts
    /// agree and are nonzero.
    pub fn from_raw(source: &str, target: &str) -> Option<Self> {
        let source = tokenize(source);
        let target = tokenize(target);
        (!source.is_empty() && source.len() == target.len()).then_some(Self { source, target })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Bijective token ↔ id map with ids contiguous from zero, assigned in
/// first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, usize>,
    id_to_word: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<'a, I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut vocab = Self::new();
        for token in tokens {
            vocab.insert(token);
        }
        vocab
    }

    /// Returns the id of `token`, inserting it if absent.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.word_to_id.get(token) {
            return id;
        }
        let id = self.id_to_word.len();
        self.word_to_id.insert(token.to_owned(), id);
        self.id_to_word.push(token.to_owned());
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.word_to_id.get(token).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.id_to_word.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.word_to_id.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    /// Tokens in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.id_to_word.iter().map(String::as_str)
    }

    /// Union of two vocabularies; `self`'s ids are preserved and the new
    /// tokens of `other` follow in `other`'s id order.
    pub fn union(&self, other: &Vocabulary) -> Vocabulary {
        let mut merged = self.clone();
        for word in other.words() {
            merged.insert(word);
        }
        merged
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<SentencePair>,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
}

impl Corpus {
    /// Builds a corpus whose vocabularies cover exactly the given pairs.
    pub fn from_pairs(pairs: Vec<SentencePair>) -> Self {
        let source_vocab =
            Vocabulary::from_tokens(pairs.iter().flat_map(|p| p.source.iter().map(String::as_str)));
        let target_vocab =
            Vocabulary::from_tokens(pairs.iter().flat_map(|p| p.target.iter().map(String::as_str)));
        Self {
            pairs,
            source_vocab,
            target_vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Source and target vocabularies merged, source ids first.
    pub fn joint_vocab(&self) -> Vocabulary {
        self.source_vocab.union(&self.target_vocab)
    }

    /// Drops every pair containing a token without an embedding and rebuilds
    /// the vocabularies. Returns the filtered corpus and the number of pairs
    /// dropped.
    pub fn retain_embedded(&self, table: &EmbeddingTable) -> (Corpus, usize) {
        let kept: Vec<SentencePair> = self
            .pairs
            .iter()
            .filter(|p| p.source.iter().chain(&p.target).all(|t| table.contains(t)))
            .cloned()
            .collect();
        let dropped = self.pairs.len() - kept.len();
        if dropped > 0 {
            log::info!("dropped {dropped} pairs with tokens missing from the embedding table");
        }
        (Corpus::from_pairs(kept), dropped)
    }

    /// A corpus over a subset of pairs that keeps this corpus' vocabularies.
    fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            pairs: indices.iter().map(|&i| self.pairs[i].clone()).collect(),
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
        }
    }
}

/// Lowercases, NFC-normalizes, removes every character that is neither
/// alphanumeric nor whitespace, and splits on whitespace.
pub fn tokenize(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .to_lowercase()
        .nfc()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned
        .split_whitespace()
        .map(|t| t.nfc().collect::<String>())
        .collect()
}

/// Reads a `<source>\t<target>[\t<attribution>]` file. Blank lines are
/// skipped; `max_pairs` caps the number of pairs kept after filtering.
pub fn load_parallel_corpus(path: &Path, max_pairs: Option<usize>) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let mut rejected = 0usize;
    for (index, line) in text.lines().enumerate() {
        if max_pairs.is_some_and(|max| pairs.len() >= max) {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(source), Some(target)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: index + 1,
                message: "expected at least two tab-separated fields".into(),
            });
        };
        match SentencePair::from_raw(source, target) {
            Some(pair) => pairs.push(pair),
            None => rejected += 1,
        }
    }
    log::info!(
        "{}: kept {} pairs, rejected {rejected} with unequal or empty token counts",
        path.display(),
        pairs.len()
    );
    Ok(Corpus::from_pairs(pairs))
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let ratios = Self { train, val, test };
        ratios.validate()?;
        Ok(ratios)
    }

    fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!(
                "split ratios must be positive, got {all:?}"
            )));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Sizes of the three splits for `n` pairs: train and validation are the
/// rounded exact fractions, test takes the remainder.
pub fn split_sizes(n: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    let train = ((n as f64) * ratios.train).round() as usize;
    let val = (((n as f64) * ratios.val).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    (train, val, n - train - val)
}

/// Seeded shuffle into train/validation/test. Each split keeps the original
/// file order of its pairs and the parent corpus' vocabularies.
pub fn split_corpus(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    ratios.validate()?;
    let n = corpus.len();
    let (n_train, n_val, _) = split_sizes(n, ratios);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    for part in &mut parts {
        part.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok((corpus.subset(&train), corpus.subset(&val), corpus.subset(&test)))
}
