//! Sparsity-aware collapsed Gibbs sampling for LDA.
//!
//! Each token's topic is drawn from `(A_dk + α) · B̂_vk`, split into a sparse
//! document term over the non-zeros of `A_d` and a dense smoothing term
//! served by a precomputed W-ary tree per word, so a draw costs
//! `O(K_d + log K)` instead of `O(K)`. The corpus is cut into contiguous
//! document chunks whose tokens are sorted by word, which keeps one word's
//! `B̂` row and tree hot while its tokens are sampled and lets chunks be
//! streamed from disk when they do not fit in memory.
//!
//! ```
//! use sparselda::{synth, train, NullSink, TrainConfig};
//!
//! let corpus = synth::generate(&synth::SynthConfig::new(50, 200, 5, 30.0)).unwrap().corpus;
//! let cfg = TrainConfig { iterations: 5, seed: 7, ..TrainConfig::new(5) };
//! let model = train::<f32>(&corpus, &cfg, None, &mut NullSink).unwrap();
//! assert_eq!(model.word_topic().total(), corpus.num_tokens() as u64);
//! ```

// `!(x > 0.0)` is how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod counts;
pub mod error;
pub mod eval;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use corpus::{load_docword, load_uci, Chunk, Corpus, Token};
pub use counts::{DocTopicMatrix, WordTopicMatrix, WordTopicProb};
pub use error::{Error, Result};
pub use eval::{heldout_ll, EvalConfig, EvalReport, HeldoutSet};
pub use rng::RngStream;
pub use sampler::WaryTree;
pub use scalar::Scalar;
pub use trainer::{
    train, Checkpoint, ChunkCount, IterationRecord, IterationStats, LineSink, MetricsSink, ModelState, NullSink,
    SamplerKind, TrainConfig,
};

pub type WordTopicProb32 = WordTopicProb<f32>;
pub type WordTopicProb64 = WordTopicProb<f64>;
pub type WaryTree32 = WaryTree<f32>;
pub type WaryTree64 = WaryTree<f64>;
pub type ModelState32 = ModelState<f32>;
pub type ModelState64 = ModelState<f64>;
