use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error")]
    Io(#[from] io::Error),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("topic count must be at least 1")]
    ZeroTopics,

    #[error("requested {requested} chunks but the corpus has {docs} documents")]
    TooManyChunks { requested: usize, docs: usize },

    #[error("token at chunk position {position} has no topic assignment")]
    UnassignedTopic { position: usize },

    #[error("topic {topic} is out of range for K = {topics}")]
    TopicOutOfRange { topic: u32, topics: usize },

    #[error("word {word} is out of range for V = {vocab}")]
    WordOutOfRange { word: usize, vocab: usize },

    #[error("smoothing parameter must be positive, got {0}")]
    NonPositiveSmoothing(f64),

    #[error("{topics} topics exceed the tree capacity of {capacity} for width {width}")]
    TreeCapacity { topics: usize, capacity: usize, width: usize },

    #[error("invalid sampling weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },

    #[error("search value {x} is outside the prefix range [0, {total}]")]
    OutOfRange { x: f64, total: f64 },

    #[error("sampling mass is zero")]
    ZeroMass,

    #[error("held-out set has no evaluation tokens")]
    EmptyHeldout,

    #[error("elapsed time is zero with {tokens} tokens processed")]
    ZeroElapsed { tokens: u64 },

    #[error("requested top {requested} words but V = {vocab}")]
    TooManyWords { requested: usize, vocab: usize },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("chunk serialization failed")]
    Codec(#[from] bincode::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    /// True for failures caused by the filesystem rather than by the input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Codec(_))
    }
}
