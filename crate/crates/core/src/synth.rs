//! Synthetic corpora drawn from the LDA generative process, for tests and
//! benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub vocab_size: usize,
    /// Number of topics in the generating model.
    pub topics: usize,
    /// Mean document length; lengths are Poisson, at least 1.
    pub mean_len: f64,
    /// Whether every document has exactly `mean_len` tokens.
    pub fixed_len: bool,
    /// Dirichlet concentration of each document's topic mixture.
    pub doc_alpha: f64,
    /// Per-word Dirichlet concentration of each topic.
    pub topic_eta: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(num_docs: usize, vocab_size: usize, topics: usize, mean_len: f64) -> Self {
        SynthConfig {
            num_docs,
            vocab_size,
            topics,
            mean_len,
            fixed_len: false,
            doc_alpha: 0.1,
            topic_eta: 0.05,
            seed: 0,
        }
    }
}

fn dirichlet(rng: &mut StdRng, len: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let mut v: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        // tiny concentrations can underflow every draw
        if s > 0.0 && s.is_finite() {
            v.iter_mut().for_each(|x| *x /= s);
            return v;
        }
    }
}

/// A generated corpus plus the model that produced it.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub corpus: Corpus,
    /// `topics × vocab_size`, row per topic.
    pub topic_word: Vec<Vec<f64>>,
}

/// Draws `cfg.num_docs` documents. Word names are `w0, w1, ...`.
pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    if cfg.topics == 0 {
        return Err(Error::ZeroTopics);
    }
    if cfg.vocab_size == 0 || !(cfg.mean_len >= 1.0) || !(cfg.doc_alpha > 0.0) || !(cfg.topic_eta > 0.0) {
        return Err(Error::Config(format!("invalid synthetic corpus parameters {cfg:?}")));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let topic_word: Vec<Vec<f64>> =
        (0..cfg.topics).map(|_| dirichlet(&mut rng, cfg.vocab_size, cfg.topic_eta)).collect();
    let samplers: Vec<WeightedAliasIndex<f64>> =
        topic_word.iter().map(|phi| WeightedAliasIndex::new(phi.clone()).expect("normalized weights")).collect();
    let lengths = Poisson::new(cfg.mean_len).expect("positive mean");

    let mut pairs = Vec::new();
    for d in 0..cfg.num_docs {
        let len =
            if cfg.fixed_len { cfg.mean_len.round() as usize } else { (lengths.sample(&mut rng) as usize).max(1) };
        let theta = dirichlet(&mut rng, cfg.topics, cfg.doc_alpha);
        let mut cdf = theta;
        for i in 1..cdf.len() {
            cdf[i] += cdf[i - 1];
        }
        for _ in 0..len {
            let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
            let k = cdf.partition_point(|&c| c <= u).min(cfg.topics - 1);
            pairs.push((d as u32, samplers[k].sample(&mut rng) as u32));
        }
    }
    let vocab = (0..cfg.vocab_size).map(|i| format!("w{i}")).collect();
    let corpus = Corpus::from_pairs(cfg.num_docs, cfg.vocab_size, pairs)?.with_vocab(vocab)?;
    Ok(Synthetic { corpus, topic_word })
}

/// Generates `train_docs + heldout_docs` documents from one model and splits
/// them into a training corpus and a disjoint held-out corpus.
pub fn generate_split(cfg: &SynthConfig, heldout_docs: usize) -> Result<(Corpus, Corpus)> {
    let total = SynthConfig { num_docs: cfg.num_docs + heldout_docs, ..cfg.clone() };
    let all = generate(&total)?.corpus;
    let cut = cfg.num_docs as u32;
    let train = all.tokens().iter().filter(|t| t.doc < cut).map(|t| (t.doc, t.word));
    let held = all.tokens().iter().filter(|t| t.doc >= cut).map(|t| (t.doc - cut, t.word));
    let vocab = all.vocab().to_vec();
    Ok((
        Corpus::from_pairs(cfg.num_docs, cfg.vocab_size, train)?.with_vocab(vocab.clone())?,
        Corpus::from_pairs(heldout_docs, cfg.vocab_size, held)?.with_vocab(vocab)?,
    ))
}
