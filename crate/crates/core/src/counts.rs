//! Count matrices: the sparse document-topic matrix (CSR per chunk), the
//! dense word-topic count matrix shared by all workers, and its smoothed
//! column-normalized probability form.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU32, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Chunk, UNASSIGNED};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Segments shorter than this are sorted by insertion sort.
const INSERTION_SORT_MAX: usize = 32;

/// Sparse topic counts of one document: topics strictly increasing, no zeros.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseTopicRow {
    pub topics: Vec<u32>,
    pub counts: Vec<u32>,
}

impl SparseTopicRow {
    pub fn as_ref(&self) -> SparseRowRef<'_> {
        SparseRowRef { topics: &self.topics, counts: &self.counts }
    }

    pub fn entries(&self) -> Vec<(u32, u32)> {
        self.as_ref().iter().collect()
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

/// Borrowed view of a sparse row.
#[derive(Clone, Copy, Debug)]
pub struct SparseRowRef<'a> {
    pub topics: &'a [u32],
    pub counts: &'a [u32],
}

impl<'a> SparseRowRef<'a> {
    pub const EMPTY: SparseRowRef<'static> = SparseRowRef { topics: &[], counts: &[] };

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + 'a {
        self.topics.iter().copied().zip(self.counts.iter().copied())
    }
}

/// Reusable buffers for [`segmented_count_into`].
#[derive(Default)]
pub struct CountScratch {
    sorted: Vec<u32>,
    tmp: Vec<u32>,
    order: Vec<u32>,
}

/// Counts the topics of one segment into a sorted sparse row.
pub fn segmented_count(segment: &[u32]) -> SparseTopicRow {
    let mut row = SparseTopicRow::default();
    segmented_count_into(segment, &mut CountScratch::default(), &mut row.topics, &mut row.counts);
    row
}

/// Sort by topic, take the prefix sum of the adjacent-difference flags to
/// get each element's slot among the distinct topics, then scatter topic
/// ids and bump counts. Results are appended to `topics` / `counts`.
pub fn segmented_count_into(segment: &[u32], scratch: &mut CountScratch, topics: &mut Vec<u32>, counts: &mut Vec<u32>) {
    if segment.is_empty() {
        return;
    }
    let CountScratch { sorted, tmp, order } = scratch;
    sorted.clear();
    sorted.extend_from_slice(segment);
    if sorted.len() <= INSERTION_SORT_MAX {
        insertion_sort(sorted);
    } else {
        radix_sort(sorted, tmp);
    }

    order.clear();
    let mut running = 0u32;
    for (i, &k) in sorted.iter().enumerate() {
        if i > 0 && k != sorted[i - 1] {
            running += 1;
        }
        order.push(running);
    }
    let distinct = running as usize + 1;

    let base = topics.len();
    topics.resize(base + distinct, 0);
    counts.resize(base + distinct, 0);
    for (&k, &slot) in sorted.iter().zip(order.iter()) {
        topics[base + slot as usize] = k;
        counts[base + slot as usize] += 1;
    }
}

fn insertion_sort(v: &mut [u32]) {
    for i in 1..v.len() {
        let x = v[i];
        let mut j = i;
        while j > 0 && v[j - 1] > x {
            v[j] = v[j - 1];
            j -= 1;
        }
        v[j] = x;
    }
}

/// LSD radix sort on 8-bit digits; only as many passes as the maximum needs.
fn radix_sort(v: &mut Vec<u32>, tmp: &mut Vec<u32>) {
    let max = v.iter().copied().max().unwrap_or(0);
    tmp.clear();
    tmp.resize(v.len(), 0);
    let mut shift = 0u32;
    while shift < 32 && (max >> shift) > 0 {
        let mut hist = [0usize; 257];
        for &x in v.iter() {
            hist[((x >> shift) & 0xFF) as usize + 1] += 1;
        }
        for i in 1..257 {
            hist[i] += hist[i - 1];
        }
        for &x in v.iter() {
            let d = ((x >> shift) & 0xFF) as usize;
            tmp[hist[d]] = x;
            hist[d] += 1;
        }
        std::mem::swap(v, tmp);
        shift += 8;
    }
}

#[inline(always)]
fn prefetch<T>(p: &T) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        // SAFETY: SSE is part of the x86_64 baseline and a prefetch never faults.
        unsafe { _mm_prefetch::<_MM_HINT_T0>((p as *const T).cast()) };
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = p;
}

/// CSR document-topic matrix over a contiguous document range.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocTopicMatrix {
    doc_start: u32,
    row_offsets: Vec<u32>,
    topics: Vec<u32>,
    counts: Vec<u32>,
}

impl DocTopicMatrix {
    /// Empty rows for `num_docs` documents starting at `doc_start`.
    pub fn empty(doc_start: u32, num_docs: usize) -> Self {
        DocTopicMatrix { doc_start, row_offsets: vec![0; num_docs + 1], topics: Vec::new(), counts: Vec::new() }
    }

    /// Rebuilds from topics laid out in document-grouped order, where
    /// document `i` of the range owns `grouped[doc_offsets[i]..doc_offsets[i+1]]`.
    pub fn from_grouped(doc_start: u32, doc_offsets: &[u32], grouped: &[u32]) -> Self {
        let num_docs = doc_offsets.len().saturating_sub(1);
        let mut m = DocTopicMatrix {
            doc_start,
            row_offsets: Vec::with_capacity(num_docs + 1),
            topics: Vec::new(),
            counts: Vec::new(),
        };
        let mut scratch = CountScratch::default();
        m.row_offsets.push(0);
        for w in doc_offsets.windows(2) {
            let seg = &grouped[w[0] as usize..w[1] as usize];
            segmented_count_into(seg, &mut scratch, &mut m.topics, &mut m.counts);
            m.row_offsets.push(m.topics.len() as u32);
        }
        if num_docs == 0 {
            m.row_offsets = vec![0];
        }
        m
    }

    pub fn doc_start(&self) -> u32 {
        self.doc_start
    }

    pub fn num_rows(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.topics.len()
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Row of global document id `doc`.
    #[inline]
    pub fn row(&self, doc: u32) -> SparseRowRef<'_> {
        self.local_row((doc - self.doc_start) as usize)
    }

    #[inline]
    pub fn local_row(&self, i: usize) -> SparseRowRef<'_> {
        let (a, b) = (self.row_offsets[i] as usize, self.row_offsets[i + 1] as usize);
        SparseRowRef { topics: &self.topics[a..b], counts: &self.counts[a..b] }
    }

    /// Hints the cache to fetch the row offsets of `doc`.
    #[inline]
    pub fn prefetch_offsets(&self, doc: u32) {
        if let Some(o) = self.row_offsets.get((doc.wrapping_sub(self.doc_start)) as usize) {
            prefetch(o);
        }
    }

    /// Hints the cache to fetch the entries of `doc`'s row.
    #[inline]
    pub fn prefetch_row(&self, doc: u32) {
        if let Some(&a) = self.row_offsets.get((doc.wrapping_sub(self.doc_start)) as usize) {
            if let (Some(t), Some(c)) = (self.topics.get(a as usize), self.counts.get(a as usize)) {
                prefetch(t);
                prefetch(c);
            }
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = SparseRowRef<'_>> {
        (0..self.num_rows()).map(move |i| self.local_row(i))
    }
}

/// Rebuilds a chunk's doc-topic rows: shuffle topics into document-grouped
/// order through the precomputed pointers, then count each document segment.
pub fn rebuild_doc_topic(chunk: &Chunk) -> Result<DocTopicMatrix> {
    if let Some(position) = chunk.topics().iter().position(|&k| k == UNASSIGNED) {
        return Err(Error::UnassignedTopic { position });
    }
    let grouped = chunk.shuffled_topics();
    Ok(DocTopicMatrix::from_grouped(chunk.doc_range().start, chunk.doc_offsets(), &grouped))
}

/// Dense `V x K` word-topic counts with indivisible increments.
#[derive(Debug)]
pub struct WordTopicMatrix {
    vocab_size: usize,
    topics: usize,
    cells: Vec<AtomicU32>,
}

impl WordTopicMatrix {
    pub fn zeros(vocab_size: usize, topics: usize) -> Self {
        let cells = (0..vocab_size * topics).map(|_| AtomicU32::new(0)).collect();
        WordTopicMatrix { vocab_size, topics, cells }
    }

    /// Row-major `V x K` counts.
    pub fn from_counts(vocab_size: usize, topics: usize, counts: &[u32]) -> Result<Self> {
        if counts.len() != vocab_size * topics {
            return Err(Error::Config(format!(
                "expected {} counts for a {vocab_size}x{topics} matrix, got {}",
                vocab_size * topics,
                counts.len()
            )));
        }
        let cells = counts.iter().map(|&c| AtomicU32::new(c)).collect();
        Ok(WordTopicMatrix { vocab_size, topics, cells })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_topics(&self) -> usize {
        self.topics
    }

    #[inline]
    pub fn get(&self, word: usize, topic: usize) -> u32 {
        self.cells[word * self.topics + topic].load(Ordering::Relaxed)
    }

    pub fn row(&self, word: usize) -> Vec<u32> {
        self.cells[word * self.topics..(word + 1) * self.topics].iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    /// Row-major copy of all counts.
    pub fn snapshot(&self) -> Vec<u32> {
        self.cells.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    /// Adds a sparse row of topic counts into row `word`. Each increment is
    /// an atomic add, so concurrent callers on the same row never lose updates.
    pub fn accumulate(&self, word: usize, row: SparseRowRef<'_>) -> Result<()> {
        if word >= self.vocab_size {
            return Err(Error::WordOutOfRange { word, vocab: self.vocab_size });
        }
        let base = word * self.topics;
        for (k, c) in row.iter() {
            if k as usize >= self.topics {
                return Err(Error::TopicOutOfRange { topic: k, topics: self.topics });
            }
            self.cells[base + k as usize].fetch_add(c, Ordering::Relaxed);
        }
        Ok(())
    }

    pub fn reset(&self) {
        self.cells.par_iter().for_each(|c| c.store(0, Ordering::Relaxed));
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().map(|c| c.load(Ordering::Relaxed) as u64).sum()
    }

    pub fn row_sum(&self, word: usize) -> u64 {
        self.cells[word * self.topics..(word + 1) * self.topics].iter().map(|c| c.load(Ordering::Relaxed) as u64).sum()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.topics];
        if self.topics == 0 {
            return sums;
        }
        for row in self.cells.chunks(self.topics) {
            for (s, c) in sums.iter_mut().zip(row) {
                *s += c.load(Ordering::Relaxed) as u64;
            }
        }
        sums
    }

    /// Writes the sparse text dump: header `V K T iteration`, then one
    /// `v k count` line per non-zero cell in row-major order (0-based ids).
    pub fn write_dump<W: Write>(&self, out: &mut W, iteration: usize) -> Result<()> {
        writeln!(out, "{} {} {} {}", self.vocab_size, self.topics, self.total(), iteration)?;
        for v in 0..self.vocab_size {
            for k in 0..self.topics {
                let c = self.get(v, k);
                if c > 0 {
                    writeln!(out, "{v} {k} {c}")?;
                }
            }
        }
        Ok(())
    }

    /// Parses a dump written by [`WordTopicMatrix::write_dump`]. `lines`
    /// yields `(line number, text)`; returns the matrix and the iteration.
    pub fn read_dump<I>(lines: &mut I) -> Result<(Self, usize)>
    where
        I: Iterator<Item = (usize, String)>,
    {
        let (lno, header) = lines.next().ok_or_else(|| Error::parse(0, "missing dump header"))?;
        let fields = parse_fields::<u64>(&header, lno, 4)?;
        let (vocab, topics, total, iteration) = (fields[0] as usize, fields[1] as usize, fields[2], fields[3] as usize);
        let mut counts = vec![0u32; vocab * topics];
        let mut seen = 0u64;
        while seen < total {
            let (lno, line) = lines.next().ok_or_else(|| Error::parse(lno, "dump ends before its stated total"))?;
            let f = parse_fields::<u64>(&line, lno, 3)?;
            let (v, k, c) = (f[0] as usize, f[1] as usize, f[2]);
            if v >= vocab || k >= topics || c == 0 || c > u32::MAX as u64 {
                return Err(Error::parse(lno, format!("invalid dump entry `{line}`")));
            }
            counts[v * topics + k] = c as u32;
            seen += c;
        }
        if seen != total {
            return Err(Error::parse(lno, "dump entries exceed the stated total"));
        }
        Ok((WordTopicMatrix::from_counts(vocab, topics, &counts)?, iteration))
    }
}

pub(crate) fn parse_fields<T: std::str::FromStr>(line: &str, lno: usize, n: usize) -> Result<Vec<T>> {
    let parsed: Vec<T> = line
        .split_whitespace()
        .map(|t| t.parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(lno, format!("expected {n} numbers, got `{line}`")))?;
    if parsed.len() != n {
        return Err(Error::parse(lno, format!("expected {n} numbers, got `{line}`")));
    }
    Ok(parsed)
}

/// Numbered non-empty lines of a reader.
pub(crate) fn numbered_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

impl PartialEq for WordTopicMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.vocab_size == other.vocab_size && self.topics == other.topics && self.snapshot() == other.snapshot()
    }
}

impl Clone for WordTopicMatrix {
    fn clone(&self) -> Self {
        WordTopicMatrix::from_counts(self.vocab_size, self.topics, &self.snapshot()).expect("shape is consistent")
    }
}

/// Adds one word's topic tally into the shared matrix.
pub fn accumulate_word_topic(b: &WordTopicMatrix, word: usize, topic_counts: SparseRowRef<'_>) -> Result<()> {
    b.accumulate(word, topic_counts)
}

pub fn reset_word_topic(b: &WordTopicMatrix) {
    b.reset()
}

/// Smoothed word-topic probabilities: every column sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct WordTopicProb<F> {
    vocab_size: usize,
    topics: usize,
    beta: f64,
    data: Vec<F>,
}

impl<F: Scalar> WordTopicProb<F> {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_topics(&self) -> usize {
        self.topics
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn row(&self, word: usize) -> &[F] {
        &self.data[word * self.topics..(word + 1) * self.topics]
    }

    #[inline]
    pub fn get(&self, word: usize, topic: usize) -> F {
        self.data[word * self.topics + topic]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    /// Recomputes every entry from `b` in place.
    pub fn update_from(&mut self, b: &WordTopicMatrix) -> Result<()> {
        if b.vocab_size() != self.vocab_size || b.num_topics() != self.topics {
            return Err(Error::Config("probability matrix shape differs from counts".into()));
        }
        fill_probabilities(b, self.beta, &mut self.data);
        Ok(())
    }
}

/// `B̂[v][k] = (B[v][k] + beta) / (sum_v B[v][k] + V * beta)`.
pub fn preprocess<F: Scalar>(b: &WordTopicMatrix, beta: f64) -> Result<WordTopicProb<F>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::NonPositiveSmoothing(beta));
    }
    if b.vocab_size() == 0 {
        return Err(Error::Config("vocabulary is empty".into()));
    }
    let mut data = vec![F::zero(); b.vocab_size() * b.num_topics()];
    fill_probabilities(b, beta, &mut data);
    Ok(WordTopicProb { vocab_size: b.vocab_size(), topics: b.num_topics(), beta, data })
}

fn fill_probabilities<F: Scalar>(b: &WordTopicMatrix, beta: f64, data: &mut [F]) {
    let k = b.num_topics();
    if k == 0 {
        return;
    }
    let v_beta = b.vocab_size() as f64 * beta;
    let inv_denom: Vec<f64> = b.column_sums().iter().map(|&s| 1.0 / (s as f64 + v_beta)).collect();
    data.par_chunks_mut(k).enumerate().for_each(|(v, row)| {
        let counts = &b.cells[v * k..(v + 1) * k];
        for ((p, c), inv) in row.iter_mut().zip(counts).zip(&inv_denom) {
            *p = F::from_f64_lossy((c.load(Ordering::Relaxed) as f64 + beta) * inv);
        }
    });
}
