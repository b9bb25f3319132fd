//! Corpus ingestion and the partition-by-document / order-by-word chunk
//! layout used for streaming.

use std::io::{BufRead, Write};
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::counts::{numbered_lines, parse_fields, DocTopicMatrix};
use crate::error::{Error, Result};
use crate::rng::{RngStream, INIT_DOMAIN};

/// Topic value of a token that has not been initialized.
pub const UNASSIGNED: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub doc: u32,
    pub word: u32,
    pub topic: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    num_docs: usize,
    vocab_size: usize,
    tokens: Vec<Token>,
    doc_lengths: Vec<u32>,
    word_freqs: Vec<u64>,
    vocab: Vec<String>,
}

impl Corpus {
    /// Builds a corpus from `(doc, word)` pairs; topics start unassigned.
    pub fn from_pairs<I>(num_docs: usize, vocab_size: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut corpus = Corpus {
            num_docs,
            vocab_size,
            tokens: Vec::new(),
            doc_lengths: vec![0; num_docs],
            word_freqs: vec![0; vocab_size],
            vocab: Vec::new(),
        };
        for (doc, word) in pairs {
            corpus.push(doc, word, 1, 0)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, doc: u32, word: u32, count: u32, line: usize) -> Result<()> {
        if doc as usize >= self.num_docs {
            return Err(Error::parse(line, format!("document id {} out of range [1, {}]", doc + 1, self.num_docs)));
        }
        if word as usize >= self.vocab_size {
            return Err(Error::parse(line, format!("word id {} out of range [1, {}]", word + 1, self.vocab_size)));
        }
        self.tokens.extend((0..count).map(|_| Token { doc, word, topic: UNASSIGNED }));
        self.doc_lengths[doc as usize] += count;
        self.word_freqs[word as usize] += count as u64;
        Ok(())
    }

    /// Attaches a vocabulary; its length must equal V.
    pub fn with_vocab(mut self, vocab: Vec<String>) -> Result<Self> {
        if vocab.len() != self.vocab_size {
            return Err(Error::parse(
                vocab.len(),
                format!("vocabulary has {} lines, expected V = {}", vocab.len(), self.vocab_size),
            ));
        }
        self.vocab = vocab;
        Ok(self)
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn word_freqs(&self) -> &[u64] {
        &self.word_freqs
    }

    /// Empty when the corpus was loaded without a vocabulary file.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// True when every token carries a topic (checked against nothing but the sentinel).
    pub fn is_assigned(&self) -> bool {
        self.tokens.iter().all(|t| t.topic != UNASSIGNED)
    }

    /// Replaces the topic of every token, in corpus order.
    pub fn set_topics(&mut self, topics: &[u32]) -> Result<()> {
        if topics.len() != self.tokens.len() {
            return Err(Error::Config(format!("{} topics given for {} tokens", topics.len(), self.tokens.len())));
        }
        for (t, &k) in self.tokens.iter_mut().zip(topics) {
            t.topic = k;
        }
        Ok(())
    }

    /// Corpus positions of every token, grouped by document (stable).
    fn positions_by_doc(&self) -> (Vec<u32>, Vec<usize>) {
        let mut starts = vec![0usize; self.num_docs + 1];
        for (d, &len) in self.doc_lengths.iter().enumerate() {
            starts[d + 1] = starts[d] + len as usize;
        }
        let mut cursor = starts.clone();
        let mut positions = vec![0u32; self.tokens.len()];
        for (i, t) in self.tokens.iter().enumerate() {
            let c = &mut cursor[t.doc as usize];
            positions[*c] = i as u32;
            *c += 1;
        }
        (positions, starts)
    }

    /// Writes the corpus in UCI bag-of-words form (1-based ids, one line per
    /// distinct `(doc, word)` pair, sorted).
    pub fn write_uci<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut pairs: Vec<(u32, u32)> = self.tokens.iter().map(|t| (t.doc, t.word)).collect();
        pairs.sort_unstable();
        let mut entries: Vec<(u32, u32, u32)> = Vec::new();
        for (d, w) in pairs {
            match entries.last_mut() {
                Some(e) if e.0 == d && e.1 == w => e.2 += 1,
                _ => entries.push((d, w, 1)),
            }
        }
        writeln!(out, "{}\n{}\n{}", self.num_docs, self.vocab_size, entries.len())?;
        for (d, w, c) in entries {
            writeln!(out, "{} {} {}", d + 1, w + 1, c)?;
        }
        Ok(())
    }
}

/// Reads a UCI `docword` stream without a vocabulary.
pub fn load_docword<R: BufRead>(docword: R) -> Result<Corpus> {
    let mut lines = numbered_lines(docword);
    let mut header = [0usize; 3];
    for (i, slot) in header.iter_mut().enumerate() {
        let (lno, line) = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::parse(i + 1, "truncated header: expected D, V and NNZ lines"))?;
        *slot =
            line.trim().parse().map_err(|_| Error::parse(lno, format!("malformed header value `{}`", line.trim())))?;
    }
    let [num_docs, vocab_size, nnz] = header;
    if num_docs > u32::MAX as usize || vocab_size > u32::MAX as usize {
        return Err(Error::parse(1, "corpus dimensions exceed 32-bit ids"));
    }
    let mut corpus = Corpus::from_pairs(num_docs, vocab_size, std::iter::empty())?;
    let mut entries = 0usize;
    let mut last_line = 3;
    for item in lines {
        let (lno, line) = item?;
        last_line = lno;
        let f = parse_fields::<u64>(&line, lno, 3)?;
        let (doc, word, count) = (f[0], f[1], f[2]);
        if doc == 0 || doc as usize > num_docs {
            return Err(Error::parse(lno, format!("document id {doc} out of range [1, {num_docs}]")));
        }
        if word == 0 || word as usize > vocab_size {
            return Err(Error::parse(lno, format!("word id {word} out of range [1, {vocab_size}]")));
        }
        if count < 1 || count > u32::MAX as u64 {
            return Err(Error::parse(lno, format!("count {count} must be at least 1")));
        }
        corpus.push((doc - 1) as u32, (word - 1) as u32, count as u32, lno)?;
        entries += 1;
    }
    if entries != nnz {
        return Err(Error::parse(last_line, format!("header declares {nnz} entries, found {entries}")));
    }
    Ok(corpus)
}

/// Reads a UCI `docword` stream and its vocabulary (one term per line).
pub fn load_uci<R: BufRead, S: BufRead>(docword: R, vocab: S) -> Result<Corpus> {
    let corpus = load_docword(docword)?;
    let words =
        vocab.lines().map(|l| l.map(|w| w.trim_end_matches('\r').to_string())).collect::<std::io::Result<Vec<_>>>()?;
    corpus.with_vocab(words)
}

/// Draws every topic uniformly from `[0, topics)`; pure function of `seed`.
pub fn init_assignments(mut corpus: Corpus, topics: usize, seed: u64) -> Result<Corpus> {
    if topics == 0 {
        return Err(Error::ZeroTopics);
    }
    if topics > u32::MAX as usize {
        return Err(Error::Config(format!("{topics} topics do not fit 32-bit ids")));
    }
    let mut rng = RngStream::new(seed, INIT_DOMAIN);
    for t in corpus.tokens.iter_mut() {
        t.topic = rng.random_range(0..topics as u32);
    }
    Ok(corpus)
}

/// Contiguous run of one word's tokens inside a chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSegment {
    pub word: u32,
    pub offset: u32,
    pub len: u32,
}

/// A document range's tokens sorted word-major, plus the precomputed shuffle
/// into document-grouped order and the range's doc-topic rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    index: usize,
    doc_range: Range<u32>,
    docs: Vec<u32>,
    words: Vec<u32>,
    topics: Vec<u32>,
    token_ids: Vec<u32>,
    segments: Vec<WordSegment>,
    shuffle_ptrs: Vec<u32>,
    doc_offsets: Vec<u32>,
    doc_topic: DocTopicMatrix,
}

/// Borrowed read-only parts of a chunk with mutable topics, for sampling.
pub struct ChunkParts<'a> {
    pub docs: &'a [u32],
    pub words: &'a [u32],
    pub token_ids: &'a [u32],
    pub segments: &'a [WordSegment],
    pub doc_topic: &'a DocTopicMatrix,
    pub topics: &'a mut [u32],
}

impl Chunk {
    fn build(index: usize, doc_range: Range<u32>, corpus: &Corpus, positions: &[u32]) -> Chunk {
        let mut order: Vec<u32> = positions.to_vec();
        // positions arrive grouped by doc in corpus order, so (word, doc, pos) is total
        order.sort_unstable_by_key(|&p| {
            let t = &corpus.tokens[p as usize];
            (t.word, t.doc, p)
        });
        let n = order.len();
        let mut docs = Vec::with_capacity(n);
        let mut words = Vec::with_capacity(n);
        let mut topics = Vec::with_capacity(n);
        for &p in &order {
            let t = corpus.tokens[p as usize];
            docs.push(t.doc);
            words.push(t.word);
            topics.push(t.topic);
        }

        let mut segments: Vec<WordSegment> = Vec::new();
        for (i, &w) in words.iter().enumerate() {
            match segments.last_mut() {
                Some(s) if s.word == w => s.len += 1,
                _ => segments.push(WordSegment { word: w, offset: i as u32, len: 1 }),
            }
        }

        let num_docs = (doc_range.end - doc_range.start) as usize;
        let mut doc_offsets = vec![0u32; num_docs + 1];
        for d in doc_range.clone() {
            let local = (d - doc_range.start) as usize;
            doc_offsets[local + 1] = doc_offsets[local] + corpus.doc_lengths[d as usize];
        }
        let mut cursor = doc_offsets.clone();
        let shuffle_ptrs = docs
            .iter()
            .map(|&d| {
                let c = &mut cursor[(d - doc_range.start) as usize];
                let p = *c;
                *c += 1;
                p
            })
            .collect();

        Chunk {
            index,
            doc_topic: DocTopicMatrix::empty(doc_range.start, num_docs),
            doc_range,
            docs,
            words,
            topics,
            token_ids: order,
            segments,
            shuffle_ptrs,
            doc_offsets,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn doc_range(&self) -> Range<u32> {
        self.doc_range.clone()
    }

    pub fn num_tokens(&self) -> usize {
        self.docs.len()
    }

    /// Token `i` in word-major order.
    pub fn token(&self, i: usize) -> Token {
        Token { doc: self.docs[i], word: self.words[i], topic: self.topics[i] }
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.num_tokens()).map(move |i| self.token(i))
    }

    pub fn topics(&self) -> &[u32] {
        &self.topics
    }

    /// Corpus position of each word-major token.
    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    /// Word segments in dispatch order.
    pub fn word_segments(&self) -> &[WordSegment] {
        &self.segments
    }

    pub fn shuffle_ptrs(&self) -> &[u32] {
        &self.shuffle_ptrs
    }

    pub fn doc_offsets(&self) -> &[u32] {
        &self.doc_offsets
    }

    pub fn doc_topic(&self) -> &DocTopicMatrix {
        &self.doc_topic
    }

    pub fn set_doc_topic(&mut self, m: DocTopicMatrix) {
        self.doc_topic = m;
    }

    pub fn parts_mut(&mut self) -> ChunkParts<'_> {
        ChunkParts {
            docs: &self.docs,
            words: &self.words,
            token_ids: &self.token_ids,
            segments: &self.segments,
            doc_topic: &self.doc_topic,
            topics: &mut self.topics,
        }
    }

    /// Topics permuted into document-grouped order via the shuffle pointers.
    pub fn shuffled_topics(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.topics.len()];
        for (&k, &p) in self.topics.iter().zip(&self.shuffle_ptrs) {
            out[p as usize] = k;
        }
        out
    }

    /// Upper bound on the in-memory footprint of the chunk, in bytes.
    pub fn estimated_bytes(&self) -> usize {
        estimate_bytes(self.num_tokens(), self.doc_offsets.len() - 1)
    }
}

fn estimate_bytes(tokens: usize, docs: usize) -> usize {
    // five u32 token arrays, A at most one (topic, count) pair per token,
    // two per-document offset arrays
    tokens * (5 * 4 + 8) + docs * 8 + 64
}

/// Contiguous document ranges balanced by token count. The `c`-th boundary
/// falls after the first document whose inclusive token prefix exceeds
/// `c * T / num_chunks`, while keeping at least one document per chunk.
pub fn partition_docs(doc_lengths: &[u32], num_chunks: usize) -> Result<Vec<Range<u32>>> {
    let d = doc_lengths.len();
    if num_chunks == 0 {
        return Err(Error::Config("number of chunks must be at least 1".into()));
    }
    if d == 0 {
        return if num_chunks == 1 {
            Ok(std::iter::once(0..0).collect())
        } else {
            Err(Error::TooManyChunks { requested: num_chunks, docs: 0 })
        };
    }
    if num_chunks > d {
        return Err(Error::TooManyChunks { requested: num_chunks, docs: d });
    }
    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    let mut ranges = Vec::with_capacity(num_chunks);
    let mut start = 0usize;
    let mut prefix = 0u64;
    for (doc, &len) in doc_lengths.iter().enumerate() {
        prefix += len as u64;
        let c = ranges.len() + 1;
        if c == num_chunks {
            break;
        }
        let docs_left = d - (doc + 1);
        let chunks_left = num_chunks - c;
        // prefix > c * total / n, in integers
        let over = prefix as u128 * num_chunks as u128 > c as u128 * total as u128;
        if (over && docs_left >= chunks_left) || docs_left == chunks_left {
            ranges.push(start as u32..(doc + 1) as u32);
            start = doc + 1;
        }
    }
    ranges.push(start as u32..d as u32);
    Ok(ranges)
}

/// Splits the corpus into PDOW chunks and orders each chunk's word segments
/// by the dispatch schedule. Doc-topic rows start empty.
pub fn build_chunks(corpus: &Corpus, num_chunks: usize) -> Result<Vec<Chunk>> {
    let ranges = partition_docs(&corpus.doc_lengths, num_chunks)?;
    let (positions, starts) = corpus.positions_by_doc();
    let chunks = ranges
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let span = &positions[starts[r.start as usize]..starts[r.end as usize]];
            let mut chunk = Chunk::build(i, r, corpus, span);
            build_schedule(&mut chunk);
            chunk
        })
        .collect();
    Ok(chunks)
}

/// Orders the chunk's word segments by descending token count, ties by
/// ascending word id, and returns the word order.
pub fn build_schedule(chunk: &mut Chunk) -> Vec<u32> {
    chunk.segments.sort_by(|a, b| b.len.cmp(&a.len).then(a.word.cmp(&b.word)));
    chunk.segments.iter().map(|s| s.word).collect()
}

/// Smallest chunk count whose largest chunk fits in `budget` bytes, or D
/// when nothing fits.
pub fn auto_num_chunks(corpus: &Corpus, budget: usize) -> usize {
    let d = corpus.num_docs;
    if d == 0 {
        return 1;
    }
    let total = estimate_bytes(corpus.num_tokens(), d);
    let first = total.div_ceil(budget.max(1)).clamp(1, d);
    for n in first..=d {
        let ranges = partition_docs(&corpus.doc_lengths, n).expect("n is within [1, D]");
        let largest = ranges
            .iter()
            .map(|r| {
                let toks: usize =
                    corpus.doc_lengths[r.start as usize..r.end as usize].iter().map(|&l| l as usize).sum();
                estimate_bytes(toks, r.len())
            })
            .max()
            .unwrap_or(0);
        if largest <= budget {
            return n;
        }
    }
    d
}
