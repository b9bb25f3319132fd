//! Run manifests: everything needed to replay a training run.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sparselda::{ChunkCount, SamplerKind, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub docword: InputDigest,
    pub vocab: Option<InputDigest>,
    pub heldout: Option<InputDigest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    /// `"auto"` or a chunk count.
    pub chunks: String,
    pub workers: usize,
    pub mem_budget: usize,
    pub eval_every: usize,
    pub burn_in: usize,
    pub tree_width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: ResolvedConfig,
    pub inputs: Inputs,
}

pub fn digest_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(
        cfg: &TrainConfig,
        docword: InputDigest,
        vocab: Option<InputDigest>,
        heldout: Option<InputDigest>,
    ) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: ResolvedConfig {
                topics: cfg.topics,
                alpha: cfg.alpha,
                beta: cfg.beta,
                iterations: cfg.iterations,
                chunks: match cfg.num_chunks {
                    ChunkCount::Auto => "auto".to_string(),
                    ChunkCount::Fixed(n) => n.to_string(),
                },
                workers: cfg.num_workers,
                mem_budget: cfg.memory_budget,
                eval_every: cfg.eval_every,
                burn_in: cfg.burn_in,
                tree_width: cfg.tree_width,
            },
            inputs: Inputs { docword, vocab, heldout },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let c = &self.config;
        TrainConfig {
            topics: c.topics,
            alpha: c.alpha,
            beta: c.beta,
            iterations: c.iterations,
            num_chunks: match c.chunks.parse::<usize>() {
                Ok(n) => ChunkCount::Fixed(n),
                Err(_) => ChunkCount::Auto,
            },
            num_workers: c.workers,
            seed: self.seed,
            memory_budget: c.mem_budget,
            eval_every: c.eval_every,
            burn_in: c.burn_in,
            tree_width: c.tree_width,
            sampler: SamplerKind::Sparse,
        }
    }

    /// Fails when an input file changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<()> {
        let all = [Some(&self.inputs.docword), self.inputs.vocab.as_ref(), self.inputs.heldout.as_ref()];
        for input in all.into_iter().flatten() {
            let now = digest_file(&input.path)?;
            if now != input.sha256 {
                bail!(sparselda::Error::Config(format!(
                    "{} changed since the manifest was written (sha256 {now}, expected {})",
                    input.path.display(),
                    input.sha256
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        serde_json::from_reader(BufReader::new(file)).with_context(|| format!("invalid manifest {}", path.display()))
    }
}
