//! Greedy equal-length decoding under three weighting regimes: learned
//! Bahdanau attention, a fixed Gaussian mask, and the Gaussian mask plus a
//! bonus for positions holding words the Q-agent's walk visits.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::embeddings::{nearest_word, EmbeddingTable, SimilarityGraph};
use crate::gaussmask::{gaussian_weights, SigmaRule};
use crate::qagent::{walk, CachedQ, QNetwork};
use crate::seq2seq::{context, decode_step, embed, encode_embedded, Seq2SeqModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    Attention,
    Gaussian,
    GaussianRl,
}

impl InferenceMode {
    pub const ALL: [InferenceMode; 3] = [InferenceMode::Attention, InferenceMode::Gaussian, InferenceMode::GaussianRl];

    pub fn as_str(self) -> &'static str {
        match self {
            InferenceMode::Attention => "attention",
            InferenceMode::Gaussian => "gaussian",
            InferenceMode::GaussianRl => "gaussian_rl",
        }
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected attention, gaussian or gaussian_rl)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationResult {
    pub source_tokens: Vec<String>,
    pub output_tokens: Vec<String>,
    /// Row `j` holds the position weights used at decode step `j`.
    pub per_step_weights: Array2<f64>,
    /// Time spent in the decode loop; the encoder pass is excluded.
    pub wall_time: Duration,
}

struct Agent<'a> {
    q: CachedQ,
    graph: &'a SimilarityGraph,
    horizon: usize,
}

/// A frozen model ready to translate. Holds the output-word table and, for
/// the RL mode, the Q-network evaluated once per word.
pub struct Translator<'a> {
    model: &'a Seq2SeqModel,
    table: &'a EmbeddingTable,
    outputs: EmbeddingTable,
    // outputs id -> table id
    output_ids: Vec<usize>,
    agent: Option<Agent<'a>>,
    sigma: SigmaRule,
    bonus: f64,
}

/// Words a decode run produced, as ids into the full table.
struct Decoded {
    result: TranslationResult,
    outputs: Vec<usize>,
}

impl<'a> Translator<'a> {
    /// `table` must cover the source words; decoded words are restricted to
    /// `target_vocab`.
    pub fn new(model: &'a Seq2SeqModel, table: &'a EmbeddingTable, target_vocab: &Vocabulary) -> Result<Self> {
        if model.dims().embedding != table.dim() {
            return Err(Error::Domain(format!(
                "model expects {}-dimensional embeddings, table has {}",
                model.dims().embedding,
                table.dim()
            )));
        }
        let outputs = table.restricted(target_vocab);
        if outputs.is_empty() {
            return Err(Error::Domain("no target word has an embedding".into()));
        }
        let output_ids = outputs
            .words()
            .iter()
            .map(|w| table.id(w).expect("restricted table is a subset"))
            .collect();
        Ok(Self {
            model,
            table,
            outputs,
            output_ids,
            agent: None,
            sigma: SigmaRule::default(),
            bonus: 0.25,
        })
    }

    /// Enables the RL mode. `graph` must be built over `table`.
    pub fn with_agent(mut self, qnet: &QNetwork, graph: &'a SimilarityGraph, horizon: usize) -> Result<Self> {
        if graph.len() != self.table.len() {
            return Err(Error::Domain("similarity graph was built over a different table".into()));
        }
        self.agent = Some(Agent {
            q: qnet.tabulate(self.table)?,
            graph,
            horizon,
        });
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: SigmaRule) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_bonus(mut self, bonus: f64) -> Self {
        self.bonus = bonus;
        self
    }

    pub fn has_agent(&self) -> bool {
        self.agent.is_some()
    }

    pub fn translate(&self, sentence: &[String], mode: InferenceMode) -> Result<TranslationResult> {
        Ok(self.decode(sentence, mode)?.result)
    }

    fn decode(&self, sentence: &[String], mode: InferenceMode) -> Result<Decoded> {
        let agent = match (mode, &self.agent) {
            (InferenceMode::GaussianRl, None) => {
                return Err(Error::Config("gaussian_rl mode needs a trained Q-network".into()))
            }
            (InferenceMode::GaussianRl, Some(agent)) => Some(agent),
            _ => None,
        };
        let p = sentence.len();
        let source_ids = sentence
            .iter()
            .map(|t| self.table.id(t).ok_or_else(|| Error::UnknownToken(t.clone())))
            .collect::<Result<Vec<_>>>()?;
        let enc = encode_embedded(self.model, embed(self.table, sentence)?.view());

        let start = Instant::now();
        let keys = (mode == InferenceMode::Attention).then(|| self.model.attention_keys(&enc));
        let sigma = self.sigma.sigma(p);
        // The first walk starts from the word nearest the projected final
        // encoder state; later walks from the previous decoded word.
        let seed = match agent {
            Some(_) if p > 0 => {
                let out = self.model.project(enc.final_h.view());
                Some(self.output_ids[nearest_word(&self.outputs, out.view(), None)?])
            }
            _ => None,
        };
        let mut state = (enc.final_h.clone(), enc.final_c.clone());
        let mut prev = Array1::zeros(self.table.dim());
        let mut grid = Array2::zeros((p, p));
        let mut outputs = Vec::with_capacity(p);
        for j in 0..p {
            let weights = match (&keys, agent) {
                (Some(keys), _) => self.model.attention_with_keys(state.0.view(), keys.view()).0,
                (None, None) => gaussian_weights(p, j, sigma)?,
                (None, Some(agent)) => {
                    let mut w = gaussian_weights(p, j, sigma)?;
                    let from = outputs.last().copied().or(seed).expect("seeded when p > 0");
                    let similar = walk(&agent.q, from, agent.graph, self.table, agent.horizon).similar_words();
                    for (i, id) in source_ids.iter().enumerate() {
                        if i != j && similar.contains(id) {
                            w[i] += self.bonus;
                        }
                    }
                    w
                }
            };
            let ctx = context(&enc, weights.view());
            let (next, out) = decode_step(self.model, prev.view(), ctx.view(), &state);
            state = next;
            let word = nearest_word(&self.outputs, out.view(), None)?;
            prev.assign(&self.outputs.vector(word));
            grid.row_mut(j).assign(&weights);
            outputs.push(self.output_ids[word]);
        }
        let wall_time = start.elapsed();

        Ok(Decoded {
            result: TranslationResult {
                source_tokens: sentence.to_vec(),
                output_tokens: outputs.iter().map(|&id| self.table.word(id).to_owned()).collect(),
                per_step_weights: grid,
                wall_time,
            },
            outputs,
        })
    }
}

/// One-shot translation; builds a [`Translator`] for a single sentence.
#[allow(clippy::too_many_arguments)]
pub fn translate(
    model: &Seq2SeqModel,
    qnet: Option<&QNetwork>,
    table: &EmbeddingTable,
    target_vocab: &Vocabulary,
    graph: Option<&SimilarityGraph>,
    sentence: &[String],
    mode: InferenceMode,
    sigma: SigmaRule,
    bonus: f64,
    horizon: usize,
) -> Result<TranslationResult> {
    let mut translator = Translator::new(model, table, target_vocab)?
        .with_sigma(sigma)
        .with_bonus(bonus);
    if let (Some(qnet), Some(graph)) = (qnet, graph) {
        translator = translator.with_agent(qnet, graph, horizon)?;
    }
    translator.translate(sentence, mode)
}

/// Translates each sentence independently, keeping order. Failures are
/// reported per sentence.
pub fn batch_translate(translator: &Translator<'_>, sentences: &[Vec<String>], mode: InferenceMode) -> Vec<Result<TranslationResult>> {
    sentences.iter().map(|s| translator.translate(s, mode)).collect()
}

/// Words the RL walk would start from when decoding `corpus` with the
/// baseline attention model: for each sentence, the seed word followed by
/// every decoded word except the last. Ids index `table`.
pub fn walk_starts(model: &Seq2SeqModel, corpus: &Corpus, table: &EmbeddingTable) -> Result<Vec<usize>> {
    let translator = Translator::new(model, table, &corpus.target_vocab)?;
    let mut starts = Vec::new();
    for pair in &corpus.pairs {
        let decoded = translator.decode(&pair.source, InferenceMode::Attention)?;
        if decoded.outputs.is_empty() {
            continue;
        }
        let out = model.project(encode_embedded(model, embed(table, &pair.source)?.view()).final_h.view());
        starts.push(translator.output_ids[nearest_word(&translator.outputs, out.view(), None)?]);
        starts.extend(&decoded.outputs[..decoded.outputs.len() - 1]);
    }
    Ok(starts)
}
