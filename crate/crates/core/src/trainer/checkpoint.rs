//! Plain-text checkpoints: a header, one `doc word topic` line per token in
//! corpus order, then the word-topic dump. Loading recounts the dump from the
//! assignments and refuses a mismatch.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{Corpus, Token};
use crate::counts::{numbered_lines, parse_fields, preprocess, WordTopicMatrix, WordTopicProb};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "sparselda-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub num_docs: usize,
    pub vocab_size: usize,
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub iteration: usize,
    pub assignments: Vec<Token>,
    pub word_topic: WordTopicMatrix,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(
            out,
            "{} {} {} {} {} {:?} {:?} {}",
            self.num_docs,
            self.vocab_size,
            self.topics,
            self.assignments.len(),
            self.iteration,
            self.alpha,
            self.beta,
            self.seed
        )?;
        for t in &self.assignments {
            writeln!(out, "{} {} {}", t.doc, t.word, t.topic)?;
        }
        self.word_topic.write_dump(out, self.iteration)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut io_error = None;
        let mut lines = numbered_lines(reader).map_while(|r| r.map_err(|e| io_error = Some(e)).ok());
        let result = Self::parse(&mut lines);
        drop(lines);
        // an I/O failure ends the line stream early; report it instead of truncation
        match io_error {
            Some(e) => Err(e),
            None => result,
        }
    }

    fn parse<I: Iterator<Item = (usize, String)>>(lines: &mut I) -> Result<Self> {
        let (lno, magic) = lines.next().ok_or_else(|| Error::Checkpoint("file is empty".into()))?;
        if magic.trim() != MAGIC {
            return Err(Error::parse(lno, format!("expected `{MAGIC}`")));
        }
        let (lno, header) = lines.next().ok_or_else(|| Error::Checkpoint("missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(lno, format!("expected 8 header fields, got {}", fields.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| Error::parse(lno, format!("bad header field `{s}`")));
        let float = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(lno, format!("bad header field `{s}`")));
        let (num_docs, vocab_size, topics) =
            (int(fields[0])? as usize, int(fields[1])? as usize, int(fields[2])? as usize);
        let (num_tokens, iteration) = (int(fields[3])? as usize, int(fields[4])? as usize);
        let (alpha, beta, seed) = (float(fields[5])?, float(fields[6])?, int(fields[7])?);
        if topics == 0 {
            return Err(Error::ZeroTopics);
        }

        let mut assignments = Vec::with_capacity(num_tokens);
        for _ in 0..num_tokens {
            let (lno, line) =
                lines.next().ok_or_else(|| Error::Checkpoint(format!("expected {num_tokens} assignment lines")))?;
            let f = parse_fields::<u32>(&line, lno, 3)?;
            let (doc, word, topic) = (f[0], f[1], f[2]);
            if doc as usize >= num_docs || word as usize >= vocab_size || topic as usize >= topics {
                return Err(Error::parse(lno, format!("assignment `{line}` is out of range")));
            }
            assignments.push(Token { doc, word, topic });
        }
        let (word_topic, dump_iteration) = WordTopicMatrix::read_dump(lines)?;
        if let Some((lno, _)) = lines.next() {
            return Err(Error::parse(lno, "trailing data after the word-topic dump"));
        }
        if word_topic.vocab_size() != vocab_size || word_topic.num_topics() != topics || dump_iteration != iteration {
            return Err(Error::Checkpoint("word-topic dump header disagrees with the checkpoint header".into()));
        }
        let ckpt = Checkpoint { num_docs, vocab_size, topics, alpha, beta, seed, iteration, assignments, word_topic };
        if ckpt.recount() != ckpt.word_topic {
            return Err(Error::Checkpoint("word-topic counts disagree with assignments".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::read(BufReader::new(File::open(path)?))
    }

    /// Word-topic counts recomputed from the assignments.
    pub fn recount(&self) -> WordTopicMatrix {
        let mut counts = vec![0u32; self.vocab_size * self.topics];
        for t in &self.assignments {
            counts[t.word as usize * self.topics + t.topic as usize] += 1;
        }
        WordTopicMatrix::from_counts(self.vocab_size, self.topics, &counts).expect("dimensions match")
    }

    /// The assignments as a corpus with topics attached.
    pub fn to_corpus(&self) -> Result<Corpus> {
        let pairs = self.assignments.iter().map(|t| (t.doc, t.word));
        let mut corpus = Corpus::from_pairs(self.num_docs, self.vocab_size, pairs)?;
        let topics: Vec<u32> = self.assignments.iter().map(|t| t.topic).collect();
        corpus.set_topics(&topics)?;
        Ok(corpus)
    }

    pub fn probabilities<F: Scalar>(&self) -> Result<WordTopicProb<F>> {
        preprocess(&self.word_topic, self.beta)
    }
}
