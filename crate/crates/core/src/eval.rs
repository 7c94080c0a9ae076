//! Corpus BLEU, the per-length latency benchmark, and the report bundle
//! that puts BLEU, latency and satisfaction tables side by side.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::election::SatisfactionReport;
use crate::infer::InferenceMode;
use crate::{Error, Result};

/// Highest n-gram order of standard BLEU.
pub const BLEU_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// In `[0, 100]`.
    pub corpus_bleu: f64,
    /// Clipped precision of each order, `p1` first.
    pub ngram_precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Standard corpus-level BLEU-4 with uniform weights, clipped counts, a
/// single reference per hypothesis and no smoothing.
pub fn corpus_bleu(references: &[Vec<String>], hypotheses: &[Vec<String>]) -> Result<BleuReport> {
    corpus_bleu_n(references, hypotheses, BLEU_ORDER)
}

/// Corpus BLEU over orders `1..=max_n` with weights `1/max_n`.
pub fn corpus_bleu_n(references: &[Vec<String>], hypotheses: &[Vec<String>], max_n: usize) -> Result<BleuReport> {
    if references.len() != hypotheses.len() {
        return Err(Error::Domain(format!(
            "{} references for {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Domain("BLEU needs at least unigrams".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (r, h) in references.iter().zip(hypotheses) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let ref_counts = ngram_counts(r, n);
            for (gram, count) in ngram_counts(h, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let ngram_precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let corpus_bleu = if ngram_precisions.contains(&0.0) {
        0.0
    } else {
        let w = 1.0 / max_n as f64;
        let log_mean: f64 = ngram_precisions.iter().map(|p| w * p.ln()).sum();
        (100.0 * brevity_penalty * log_mean.exp()).min(100.0)
    };
    Ok(BleuReport {
        corpus_bleu,
        ngram_precisions,
        brevity_penalty,
        hypothesis_length: hyp_len,
        reference_length: ref_len,
    })
}

/// Sentence-length buckets of the latency table, inclusive.
pub const BUCKETS: [(usize, usize); 3] = [(4, 7), (8, 11), (12, 15)];

/// Fewest sentences a bucket needs for its means to count as reliable.
pub const MIN_BUCKET_SIZE: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBucket {
    /// `"lo-hi"`
    pub label: String,
    pub min_len: usize,
    pub max_len: usize,
    pub sentences: usize,
    pub reliable: bool,
    /// Mean milliseconds per sentence, keyed by mode name.
    pub mean_ms: BTreeMap<String, f64>,
}

impl LatencyBucket {
    pub fn mean(&self, mode: InferenceMode) -> Option<f64> {
        self.mean_ms.get(mode.as_str()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub repetitions: usize,
    pub buckets: Vec<LatencyBucket>,
}

/// A translation routine under test. It returns the time it measured for
/// itself, so that setup outside the timed region (such as encoding) does
/// not count.
pub type Engine<'e> = Box<dyn FnMut(&[String]) -> Result<Duration> + 'e>;

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Times every engine on the same sentences of each length bucket.
///
/// Each engine first translates the whole bucket once untimed. Then, for
/// every sentence, every engine runs `repetitions` times in turn and the
/// median is kept; the bucket mean averages those medians. Sentences outside
/// the buckets are skipped.
pub fn benchmark_latency(engines: &mut [(InferenceMode, Engine<'_>)], test_set: &Corpus, repetitions: usize) -> Result<LatencyReport> {
    if repetitions == 0 {
        return Err(Error::Domain("repetitions must be positive".into()));
    }
    let mut buckets = Vec::with_capacity(BUCKETS.len());
    for (lo, hi) in BUCKETS {
        let sentences: Vec<&[String]> = test_set
            .pairs
            .iter()
            .filter(|p| (lo..=hi).contains(&p.len()))
            .map(|p| p.source.as_slice())
            .collect();
        let label = format!("{lo}-{hi}");
        let reliable = sentences.len() >= MIN_BUCKET_SIZE;
        if !reliable {
            log::warn!(
                "latency bucket {label} has {} sentences (< {MIN_BUCKET_SIZE}); its means are unreliable",
                sentences.len()
            );
        }
        for (_, engine) in engines.iter_mut() {
            for s in &sentences {
                engine(s)?;
            }
        }
        let mut totals = vec![Duration::ZERO; engines.len()];
        for s in &sentences {
            for ((_, engine), total) in engines.iter_mut().zip(&mut totals) {
                let times = (0..repetitions).map(|_| engine(s)).collect::<Result<Vec<_>>>()?;
                *total += median(times);
            }
        }
        let mean_ms = engines
            .iter()
            .zip(&totals)
            .filter(|_| !sentences.is_empty())
            .map(|((mode, _), total)| (mode.to_string(), total.as_secs_f64() * 1e3 / sentences.len() as f64))
            .collect();
        buckets.push(LatencyBucket {
            label,
            min_len: lo,
            max_len: hi,
            sentences: sentences.len(),
            reliable,
            mean_ms,
        });
    }
    Ok(LatencyReport {
        repetitions,
        buckets,
    })
}

/// BLEU per mode (`None` when the mode was not run), latency and
/// satisfaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub bleu: BTreeMap<String, Option<BleuReport>>,
    pub latency: LatencyReport,
    pub satisfaction: SatisfactionReport,
}

impl Report {
    pub fn new(bleu: &BTreeMap<InferenceMode, BleuReport>, latency: LatencyReport, satisfaction: SatisfactionReport) -> Self {
        let bleu = InferenceMode::ALL
            .iter()
            .map(|m| (m.to_string(), bleu.get(m).cloned()))
            .collect();
        Self {
            bleu,
            latency,
            satisfaction,
        }
    }

    pub fn bleu_csv(&self) -> String {
        let mut out = String::from("mode,bleu,p1,p2,p3,p4,brevity_penalty\n");
        for mode in InferenceMode::ALL {
            match self.bleu.get(mode.as_str()).and_then(Option::as_ref) {
                Some(b) => {
                    write!(out, "{mode},{:.2}", b.corpus_bleu).expect("writing to a String");
                    for p in &b.ngram_precisions {
                        write!(out, ",{p:.4}").expect("writing to a String");
                    }
                    writeln!(out, ",{:.4}", b.brevity_penalty).expect("writing to a String");
                }
                None => out.push_str(&format!("{mode},n/a,n/a,n/a,n/a,n/a,n/a\n")),
            }
        }
        out
    }

    pub fn latency_csv(&self) -> String {
        let mut out = String::from("length");
        for mode in InferenceMode::ALL {
            write!(out, ",{mode}_ms").expect("writing to a String");
        }
        out.push_str(",sentences,reliable\n");
        for bucket in &self.latency.buckets {
            out.push_str(&bucket.label);
            for mode in InferenceMode::ALL {
                match bucket.mean(mode) {
                    Some(ms) => write!(out, ",{ms:.4}").expect("writing to a String"),
                    None => out.push_str(",n/a"),
                }
            }
            writeln!(out, ",{},{}", bucket.sentences, bucket.reliable).expect("writing to a String");
        }
        out
    }
}

/// Writes `report.json` (everything), `bleu.json`, `bleu.csv`,
/// `latency.csv` and `satisfaction.csv` into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, contents: String| {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(path, e))
    };
    write("report.json", serde_json::to_string_pretty(report)? + "\n")?;
    write("bleu.json", serde_json::to_string_pretty(&report.bleu)? + "\n")?;
    write("bleu.csv", report.bleu_csv())?;
    write("latency.csv", report.latency_csv())?;
    write("satisfaction.csv", report.satisfaction.to_csv())
}

pub fn read_report(dir: &Path) -> Result<Report> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
