//! Held-out log-likelihood, throughput, and topic inspection.
//!
//! Each held-out document is split by alternating token positions. The even
//! positions estimate the document's topic mixture by Gibbs sampling against
//! a frozen `B̂`; the odd positions are scored under that mixture.

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::counts::WordTopicProb;
use crate::error::{Error, Result};
use crate::rng::{RngStream, EVAL_DOMAIN};
use crate::scalar::Scalar;
use crate::trainer::IterationStats;

pub const DEFAULT_BURN_IN: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeldoutDoc {
    pub estimation: Vec<u32>,
    pub evaluation: Vec<u32>,
}

impl HeldoutDoc {
    /// Even positions estimate, odd positions evaluate.
    pub fn split(words: &[u32]) -> Self {
        let estimation = words.iter().step_by(2).copied().collect();
        let evaluation = words.iter().skip(1).step_by(2).copied().collect();
        HeldoutDoc { estimation, evaluation }
    }

    fn stream_id(&self) -> u64 {
        // keyed by content so the result does not depend on document order
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        for &w in self.estimation.iter().chain([u32::MAX].iter()).chain(&self.evaluation) {
            h = (h ^ w as u64).wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HeldoutSet {
    docs: Vec<HeldoutDoc>,
    vocab_size: usize,
}

impl HeldoutSet {
    pub fn new(vocab_size: usize, docs: Vec<HeldoutDoc>) -> Result<Self> {
        for doc in &docs {
            if let Some(&w) = doc.estimation.iter().chain(&doc.evaluation).find(|&&w| w as usize >= vocab_size) {
                return Err(Error::WordOutOfRange { word: w as usize, vocab: vocab_size });
            }
        }
        Ok(HeldoutSet { docs, vocab_size })
    }

    /// Splits every document of `corpus`, taking its tokens in corpus order.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut words: Vec<Vec<u32>> = corpus.doc_lengths().iter().map(|&l| Vec::with_capacity(l as usize)).collect();
        for t in corpus.tokens() {
            words[t.doc as usize].push(t.word);
        }
        HeldoutSet { docs: words.iter().map(|w| HeldoutDoc::split(w)).collect(), vocab_size: corpus.vocab_size() }
    }

    pub fn docs(&self) -> &[HeldoutDoc] {
        &self.docs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn evaluation_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.evaluation.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalConfig {
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { burn_in: DEFAULT_BURN_IN, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_token_ll: f64,
    pub tokens_evaluated: u64,
    pub iteration: usize,
}

impl EvalReport {
    pub fn to_line(&self) -> String {
        format!("{} {:.9} {}", self.iteration, self.per_token_ll, self.tokens_evaluated)
    }
}

/// Gibbs-samples one document's estimation half and returns its topic counts.
fn infer_counts<F: Scalar>(
    doc: &HeldoutDoc,
    prob: &WordTopicProb<F>,
    alpha: f64,
    cfg: &EvalConfig,
    weights: &mut Vec<f64>,
) -> Vec<u32> {
    let k = prob.num_topics();
    let mut rng = RngStream::new(cfg.seed ^ EVAL_DOMAIN, doc.stream_id());
    let mut counts = vec![0u32; k];
    let mut z: Vec<u32> = doc
        .estimation
        .iter()
        .map(|_| {
            let t = (rng.uniform::<f64>() * k as f64) as usize;
            t.min(k - 1) as u32
        })
        .collect();
    for &t in &z {
        counts[t as usize] += 1;
    }
    weights.resize(k, 0.0);
    for _ in 0..cfg.burn_in {
        for (zi, &w) in z.iter_mut().zip(&doc.estimation) {
            counts[*zi as usize] -= 1;
            let row = prob.row(w as usize);
            let mut s = 0.0;
            for ((acc, &c), &b) in weights.iter_mut().zip(&counts).zip(row) {
                s += (c as f64 + alpha) * b.to_f64_lossy();
                *acc = s;
            }
            let x = rng.uniform::<f64>() * s;
            let t = weights.partition_point(|&p| p <= x).min(k - 1);
            *zi = t as u32;
            counts[t] += 1;
        }
    }
    counts
}

/// Per-token held-out log-likelihood under `prob` with smoothing `alpha`.
/// Documents are processed in parallel; all arithmetic is in `f64`.
pub fn heldout_ll<F: Scalar>(
    prob: &WordTopicProb<F>,
    alpha: f64,
    heldout: &HeldoutSet,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let tokens = heldout.evaluation_tokens();
    if tokens == 0 {
        return Err(Error::EmptyHeldout);
    }
    if heldout.vocab_size() > prob.vocab_size() {
        return Err(Error::WordOutOfRange { word: heldout.vocab_size() - 1, vocab: prob.vocab_size() });
    }
    let k = prob.num_topics();
    let per_doc: Vec<f64> = heldout
        .docs()
        .par_iter()
        .map_init(Vec::new, |weights, doc| {
            if doc.evaluation.is_empty() {
                return 0.0;
            }
            let counts = infer_counts(doc, prob, alpha, cfg, weights);
            let norm = doc.estimation.len() as f64 + k as f64 * alpha;
            let theta: Vec<f64> = counts.iter().map(|&c| (c as f64 + alpha) / norm).collect();
            doc.evaluation
                .iter()
                .map(|&w| {
                    let p: f64 = theta.iter().zip(prob.row(w as usize)).map(|(t, b)| t * b.to_f64_lossy()).sum();
                    p.ln()
                })
                .sum()
        })
        .collect();
    Ok(EvalReport {
        per_token_ll: per_doc.iter().sum::<f64>() / tokens as f64,
        tokens_evaluated: tokens as u64,
        iteration: 0,
    })
}

/// Millions of tokens per second.
pub fn throughput(stats: &IterationStats) -> Result<f64> {
    if stats.tokens == 0 {
        return Ok(0.0);
    }
    let secs = stats.elapsed.as_secs_f64();
    if secs <= 0.0 {
        return Err(Error::ZeroElapsed { tokens: stats.tokens });
    }
    Ok(stats.tokens as f64 / secs / 1e6)
}

/// For each topic, the `n` words with the largest `B̂_vk`, descending, ties
/// broken by smaller word id.
pub fn top_words<F: Scalar>(prob: &WordTopicProb<F>, n: usize) -> Result<Vec<Vec<(u32, F)>>> {
    let v = prob.vocab_size();
    if n > v {
        return Err(Error::TooManyWords { requested: n, vocab: v });
    }
    let ranked = (0..prob.num_topics())
        .map(|k| {
            let mut words: Vec<(u32, F)> = (0..v).map(|w| (w as u32, prob.get(w, k))).collect();
            let by_rank = |a: &(u32, F), b: &(u32, F)| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0));
            if n < v && n > 0 {
                words.select_nth_unstable_by(n - 1, by_rank);
            }
            words.truncate(n);
            words.sort_by(by_rank);
            words
        })
        .collect();
    Ok(ranked)
}

/// `topic k: word:prob ...`, one line per topic. Words are printed by name
/// when `vocab` is non-empty and by id otherwise.
pub fn format_topics<F: Scalar>(ranked: &[Vec<(u32, F)>], vocab: &[String]) -> String {
    let mut out = String::new();
    for (k, words) in ranked.iter().enumerate() {
        out.push_str(&format!("topic {k}:"));
        for (w, p) in words {
            match vocab.get(*w as usize) {
                Some(name) => out.push_str(&format!(" {name}:{p:.6}")),
                None => out.push_str(&format!(" {w}:{p:.6}")),
            }
        }
        out.push('\n');
    }
    out
}
