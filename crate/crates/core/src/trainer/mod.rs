//! The bulk-synchronous training loop.
//!
//! Each iteration has an E-step that streams the chunks, samples every
//! token against the frozen `B̂` and trees of the previous M-step, and
//! accumulates fresh word-topic counts; and an M-step that normalizes the
//! new counts and rebuilds one tree per word. Doc-topic rows are rebuilt per
//! chunk as soon as that chunk's tokens are sampled, since no other chunk
//! reads them.

mod checkpoint;
mod dispatch;
mod store;

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::corpus::{auto_num_chunks, build_chunks, init_assignments, Chunk, ChunkParts, Corpus, Token, WordSegment};
use crate::counts::{
    preprocess, rebuild_doc_topic, segmented_count_into, CountScratch, WordTopicMatrix, WordTopicProb,
};
use crate::error::{Error, Result};
use crate::eval::{heldout_ll, EvalConfig, HeldoutSet};
use crate::rng::RngStream;
use crate::sampler::{sample_token, vanilla_sample, WaryTree, DEFAULT_TREE_WIDTH};
use crate::scalar::Scalar;

pub use checkpoint::Checkpoint;
pub use dispatch::{dispatch, DispatchReport};
pub use store::ChunkStore;

/// Default memory budget for chunk residency: 1 GiB.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChunkCount {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    /// Sub-linear sampler over the document row's non-zeros plus a tree per word.
    Sparse,
    /// Dense `O(K)` reference sampler.
    Vanilla,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub num_chunks: ChunkCount,
    pub num_workers: usize,
    pub seed: u64,
    pub memory_budget: usize,
    /// Iterations between held-out evaluations; 0 disables them.
    pub eval_every: usize,
    pub burn_in: usize,
    pub tree_width: usize,
    pub sampler: SamplerKind,
}

impl TrainConfig {
    /// Defaults: `alpha = 50 / K`, `beta = 0.01`.
    pub fn new(topics: usize) -> Self {
        TrainConfig {
            topics,
            alpha: 50.0 / topics.max(1) as f64,
            beta: 0.01,
            iterations: 100,
            num_chunks: ChunkCount::Auto,
            num_workers: 1,
            seed: 0,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            eval_every: 0,
            burn_in: crate::eval::DEFAULT_BURN_IN,
            tree_width: DEFAULT_TREE_WIDTH,
            sampler: SamplerKind::Sparse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::ZeroTopics);
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::NonPositiveSmoothing(self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::NonPositiveSmoothing(self.beta));
        }
        if self.num_workers == 0 {
            return Err(Error::Config("at least one worker is required".into()));
        }
        if self.tree_width < 2 {
            return Err(Error::Config(format!("tree width must be at least 2, got {}", self.tree_width)));
        }
        let capacity = WaryTree::<f32>::capacity(self.tree_width);
        if self.topics > capacity {
            return Err(Error::TreeCapacity { topics: self.topics, capacity, width: self.tree_width });
        }
        if self.num_chunks == ChunkCount::Fixed(0) {
            return Err(Error::Config("number of chunks must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    /// 1-based number of the iteration just completed.
    pub iteration: usize,
    pub elapsed: Duration,
    pub tokens: u64,
    /// Mean number of non-zero topics per document row after the rebuild.
    pub mean_doc_nnz: f64,
}

impl IterationStats {
    /// Millions of tokens per second.
    pub fn throughput(&self) -> Result<f64> {
        crate::eval::throughput(self)
    }
}

/// One metrics record: `iter elapsed_s throughput_mtoken_s heldout_ll`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub stats: IterationStats,
    pub heldout_ll: Option<f64>,
}

impl IterationRecord {
    pub fn to_line(&self) -> String {
        let thr = self.stats.throughput().unwrap_or(0.0);
        let ll = self.heldout_ll.map(|l| format!("{l:.6}")).unwrap_or_default();
        format!("{} {:.6} {:.6} {}", self.stats.iteration, self.stats.elapsed.as_secs_f64(), thr, ll)
            .trim_end()
            .to_string()
    }
}

pub trait MetricsSink {
    fn record(&mut self, record: &IterationRecord) -> Result<()>;
}

impl MetricsSink for Vec<IterationRecord> {
    fn record(&mut self, record: &IterationRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Writes one line per record and flushes, so the log is always complete
/// up to the last finished iteration.
pub struct LineSink<W: Write>(pub W);

impl<W: Write> MetricsSink for LineSink<W> {
    fn record(&mut self, record: &IterationRecord) -> Result<()> {
        writeln!(self.0, "{}", record.to_line())?;
        self.0.flush()?;
        Ok(())
    }
}

/// Discards every record.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &IterationRecord) -> Result<()> {
        Ok(())
    }
}

/// Trained state at an iteration boundary.
#[derive(Debug)]
pub struct ModelState<F: Scalar> {
    num_docs: usize,
    num_tokens: usize,
    topics: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    tree_width: usize,
    word_topic: WordTopicMatrix,
    prob: WordTopicProb<F>,
    trees: Vec<WaryTree<F>>,
    q: Vec<F>,
    chunks: ChunkStore,
    iteration: usize,
}

const PREFETCH_DISTANCE: usize = 8;

/// Per-worker buffers.
struct WorkerScratch<F> {
    prefix: Vec<F>,
    dense: Vec<u32>,
    count: CountScratch,
    row_topics: Vec<u32>,
    row_counts: Vec<u32>,
}

/// Read-only inputs of one E-step.
struct Sweep<'a, F: Scalar> {
    prob: &'a WordTopicProb<F>,
    trees: &'a [WaryTree<F>],
    q: &'a [F],
    alpha: F,
    seed: u64,
    iteration: u64,
    sampler: SamplerKind,
    word_topic: &'a WordTopicMatrix,
}

impl<F: Scalar> Sweep<'_, F> {
    fn sample_segment(
        &self,
        parts: &SharedParts<'_>,
        seg: WordSegment,
        out: &mut [u32],
        scratch: &mut WorkerScratch<F>,
    ) -> Result<()> {
        let v = seg.word as usize;
        let bhat = self.prob.row(v);
        let range = seg.offset as usize..(seg.offset + seg.len) as usize;
        let docs = parts.docs;
        for (slot, pos) in out.iter_mut().zip(range) {
            // Rows are visited in word order, so document rows are cache-cold.
            if let Some(&d) = docs.get(pos + 2 * PREFETCH_DISTANCE) {
                parts.doc_topic.prefetch_offsets(d);
            }
            if let Some(&d) = docs.get(pos + PREFETCH_DISTANCE) {
                parts.doc_topic.prefetch_row(d);
            }
            let row = parts.doc_topic.row(docs[pos]);
            let mut rng = RngStream::for_token(self.seed, self.iteration, parts.token_ids[pos] as u64);
            *slot = match self.sampler {
                SamplerKind::Sparse => {
                    sample_token(row, bhat, self.q[v], &self.trees[v], self.alpha, &mut rng, &mut scratch.prefix)?
                }
                SamplerKind::Vanilla => {
                    for (k, c) in row.iter() {
                        scratch.dense[k as usize] = c;
                    }
                    let k = vanilla_sample(&scratch.dense, bhat, self.alpha, &mut rng, &mut scratch.prefix)?;
                    for &k in row.topics {
                        scratch.dense[k as usize] = 0;
                    }
                    k
                }
            };
        }
        scratch.row_topics.clear();
        scratch.row_counts.clear();
        segmented_count_into(out, &mut scratch.count, &mut scratch.row_topics, &mut scratch.row_counts);
        self.word_topic
            .accumulate(v, crate::counts::SparseRowRef { topics: &scratch.row_topics, counts: &scratch.row_counts })
    }
}

struct SharedParts<'a> {
    docs: &'a [u32],
    token_ids: &'a [u32],
    doc_topic: &'a crate::counts::DocTopicMatrix,
}

/// Splits the chunk's topics into one mutable slice per word segment, in
/// dispatch order.
fn segment_units<'a>(segments: &[WordSegment], mut topics: &'a mut [u32]) -> Vec<(WordSegment, &'a mut [u32])> {
    let mut by_offset: Vec<(usize, WordSegment)> = segments.iter().copied().enumerate().collect();
    by_offset.sort_by_key(|(_, s)| s.offset);
    let mut slots: Vec<Option<(WordSegment, &'a mut [u32])>> = (0..segments.len()).map(|_| None).collect();
    let mut consumed = 0usize;
    for (i, seg) in by_offset {
        debug_assert_eq!(seg.offset as usize, consumed);
        let (head, tail) = std::mem::take(&mut topics).split_at_mut(seg.len as usize);
        topics = tail;
        consumed += seg.len as usize;
        slots[i] = Some((seg, head));
    }
    slots.into_iter().map(|s| s.expect("segments tile the chunk")).collect()
}

fn count_chunk_into(chunk: &Chunk, b: &WordTopicMatrix) -> Result<()> {
    let mut scratch = CountScratch::default();
    let (mut topics, mut counts) = (Vec::new(), Vec::new());
    for seg in chunk.word_segments() {
        let range = seg.offset as usize..(seg.offset + seg.len) as usize;
        topics.clear();
        counts.clear();
        segmented_count_into(&chunk.topics()[range], &mut scratch, &mut topics, &mut counts);
        b.accumulate(seg.word as usize, crate::counts::SparseRowRef { topics: &topics, counts: &counts })?;
    }
    Ok(())
}

impl<F: Scalar> ModelState<F> {
    /// Assigns topics (unless the corpus already carries valid ones), builds
    /// the chunks and their doc-topic rows, counts `B` and prepares `B̂` and
    /// the per-word trees.
    pub fn initialize(corpus: &Corpus, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.vocab_size() == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let assigned;
        let corpus = if corpus.num_tokens() > 0 && corpus.is_assigned() {
            if let Some(t) = corpus.tokens().iter().find(|t| t.topic as usize >= cfg.topics) {
                return Err(Error::TopicOutOfRange { topic: t.topic, topics: cfg.topics });
            }
            corpus
        } else {
            assigned = init_assignments(corpus.clone(), cfg.topics, cfg.seed)?;
            &assigned
        };

        let num_chunks = match cfg.num_chunks {
            ChunkCount::Auto => auto_num_chunks(corpus, cfg.memory_budget),
            ChunkCount::Fixed(n) => n,
        };
        let mut chunks = build_chunks(corpus, num_chunks)?;
        let word_topic = WordTopicMatrix::zeros(corpus.vocab_size(), cfg.topics);
        let mut resident = 0usize;
        for chunk in chunks.iter_mut() {
            chunk.set_doc_topic(rebuild_doc_topic(chunk)?);
            count_chunk_into(chunk, &word_topic)?;
            resident += chunk.estimated_bytes();
        }
        let chunks = if chunks.len() > 1 && resident > cfg.memory_budget {
            ChunkStore::on_disk(chunks)?
        } else {
            ChunkStore::in_memory(chunks)
        };

        let prob = preprocess::<F>(&word_topic, cfg.beta)?;
        let mut state = ModelState {
            num_docs: corpus.num_docs(),
            num_tokens: corpus.num_tokens(),
            topics: cfg.topics,
            alpha: cfg.alpha,
            beta: cfg.beta,
            seed: cfg.seed,
            tree_width: cfg.tree_width,
            word_topic,
            prob,
            trees: Vec::new(),
            q: Vec::new(),
            chunks,
            iteration: 0,
        };
        state.refresh_trees(cfg.sampler)?;
        Ok(state)
    }

    /// Rebuilds a state from a checkpoint's assignments.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.topics = ckpt.topics;
        cfg.alpha = ckpt.alpha;
        cfg.beta = ckpt.beta;
        cfg.seed = ckpt.seed;
        let mut state = ModelState::initialize(&ckpt.to_corpus()?, &cfg)?;
        state.iteration = ckpt.iteration;
        if state.word_topic != ckpt.word_topic {
            return Err(Error::Checkpoint("word-topic counts disagree with assignments".into()));
        }
        Ok(state)
    }

    /// The vanilla sampler never queries trees, so it skips building them.
    fn refresh_trees(&mut self, sampler: SamplerKind) -> Result<()> {
        match sampler {
            SamplerKind::Sparse => self.rebuild_trees(),
            SamplerKind::Vanilla => {
                self.trees = Vec::new();
                self.q = Vec::new();
                Ok(())
            }
        }
    }

    fn rebuild_trees(&mut self) -> Result<()> {
        let alpha = F::from_f64_lossy(self.alpha);
        let width = self.tree_width;
        let prob = &self.prob;
        if self.trees.len() != prob.vocab_size() {
            let built: Result<Vec<WaryTree<F>>> =
                (0..prob.vocab_size()).into_par_iter().map(|v| WaryTree::new(prob.row(v), width)).collect();
            self.trees = built?;
        } else {
            self.trees.par_iter_mut().enumerate().try_for_each(|(v, t)| t.rebuild(prob.row(v)))?;
        }
        self.q = self.trees.iter().map(|t| alpha * t.total()).collect();
        Ok(())
    }

    /// One E-step over all chunks followed by the M-step.
    pub fn run_iteration(&mut self, cfg: &TrainConfig) -> Result<IterationStats> {
        let start = Instant::now();
        if cfg.sampler == SamplerKind::Sparse && self.trees.len() != self.prob.vocab_size() {
            self.rebuild_trees()?;
        }
        self.word_topic.reset();
        let sweep = Sweep {
            prob: &self.prob,
            trees: &self.trees,
            q: &self.q,
            alpha: F::from_f64_lossy(self.alpha),
            seed: self.seed,
            iteration: self.iteration as u64,
            sampler: cfg.sampler,
            word_topic: &self.word_topic,
        };
        let topics = self.topics;
        let (mut nnz, mut rows) = (0usize, 0usize);
        for index in 0..self.chunks.len() {
            let mut chunk = self.chunks.take(index)?;
            {
                let ChunkParts { docs, token_ids, segments, doc_topic, topics: chunk_topics, .. } = chunk.parts_mut();
                let shared = SharedParts { docs, token_ids, doc_topic };
                let units = segment_units(segments, chunk_topics);
                dispatch(
                    units,
                    cfg.num_workers,
                    || WorkerScratch {
                        prefix: Vec::new(),
                        dense: match cfg.sampler {
                            SamplerKind::Vanilla => vec![0; topics],
                            SamplerKind::Sparse => Vec::new(),
                        },
                        count: CountScratch::default(),
                        row_topics: Vec::new(),
                        row_counts: Vec::new(),
                    },
                    |scratch, _, (seg, out)| sweep.sample_segment(&shared, seg, out, scratch),
                )?;
            }
            let rebuilt = rebuild_doc_topic(&chunk)?;
            nnz += rebuilt.nnz();
            rows += rebuilt.num_rows();
            chunk.set_doc_topic(rebuilt);
            self.chunks.put(chunk)?;
        }

        self.prob.update_from(&self.word_topic)?;
        self.refresh_trees(cfg.sampler)?;
        self.iteration += 1;
        Ok(IterationStats {
            iteration: self.iteration,
            elapsed: start.elapsed(),
            tokens: self.num_tokens as u64,
            mean_doc_nnz: if rows == 0 { 0.0 } else { nnz as f64 / rows as f64 },
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn num_topics(&self) -> usize {
        self.topics
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn vocab_size(&self) -> usize {
        self.prob.vocab_size()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_topic(&self) -> &WordTopicMatrix {
        &self.word_topic
    }

    pub fn word_topic_prob(&self) -> &WordTopicProb<F> {
        &self.prob
    }

    /// Smoothing mass and tree of `word`; `None` after vanilla iterations.
    pub fn tree(&self, word: usize) -> Option<(F, &WaryTree<F>)> {
        Some((*self.q.get(word)?, self.trees.get(word)?))
    }

    pub fn chunks(&self) -> &ChunkStore {
        &self.chunks
    }

    /// Visits every chunk in order.
    pub fn for_each_chunk<G: FnMut(&Chunk) -> Result<()>>(&self, f: G) -> Result<()> {
        self.chunks.try_for_each(f)
    }

    /// Current tokens in corpus order.
    pub fn assignments(&self) -> Result<Vec<Token>> {
        let mut out = vec![Token { doc: 0, word: 0, topic: crate::corpus::UNASSIGNED }; self.num_tokens];
        self.chunks.try_for_each(|chunk| {
            for (i, &id) in chunk.token_ids().iter().enumerate() {
                out[id as usize] = chunk.token(i);
            }
            Ok(())
        })?;
        Ok(out)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            num_docs: self.num_docs,
            vocab_size: self.vocab_size(),
            topics: self.topics,
            alpha: self.alpha,
            beta: self.beta,
            seed: self.seed,
            iteration: self.iteration,
            assignments: self.assignments()?,
            word_topic: self.word_topic.clone(),
        })
    }
}

/// Runs `cfg.iterations` iterations, reporting each to `sink`. When a
/// held-out set is given and `cfg.eval_every > 0`, it is evaluated every
/// `eval_every` iterations and after the last one.
pub fn train<F: Scalar>(
    corpus: &Corpus,
    cfg: &TrainConfig,
    heldout: Option<&HeldoutSet>,
    sink: &mut dyn MetricsSink,
) -> Result<ModelState<F>> {
    let mut state = ModelState::<F>::initialize(corpus, cfg)?;
    let eval_cfg = EvalConfig { burn_in: cfg.burn_in, seed: cfg.seed };
    for i in 1..=cfg.iterations {
        let stats = state.run_iteration(cfg)?;
        let due = cfg.eval_every > 0 && (i % cfg.eval_every == 0 || i == cfg.iterations);
        let heldout_ll = match heldout {
            Some(h) if due => Some(heldout_ll(state.word_topic_prob(), state.alpha, h, &eval_cfg)?.per_token_ll),
            _ => None,
        };
        sink.record(&IterationRecord { stats, heldout_ll })?;
    }
    Ok(state)
}
