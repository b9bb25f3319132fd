//! Chunk storage: resident in memory, or spilled to files and streamed in
//! one chunk at a time.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use tempfile::TempDir;

use crate::corpus::Chunk;
use crate::error::{Error, Result};

#[derive(Debug)]
pub enum ChunkStore {
    Memory(Vec<Option<Chunk>>),
    Disk { dir: TempDir, count: usize },
}

impl ChunkStore {
    pub fn in_memory(chunks: Vec<Chunk>) -> Self {
        ChunkStore::Memory(chunks.into_iter().map(Some).collect())
    }

    /// Writes every chunk to its own file under a fresh temporary directory.
    pub fn on_disk(chunks: Vec<Chunk>) -> Result<Self> {
        let dir = tempfile::Builder::new().prefix("sparselda-chunks").tempdir()?;
        let count = chunks.len();
        let mut store = ChunkStore::Disk { dir, count };
        for chunk in chunks {
            store.put(chunk)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        match self {
            ChunkStore::Memory(v) => v.len(),
            ChunkStore::Disk { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_spilled(&self) -> bool {
        matches!(self, ChunkStore::Disk { .. })
    }

    fn path(dir: &TempDir, index: usize) -> PathBuf {
        dir.path().join(format!("chunk-{index:05}.bin"))
    }

    /// Moves chunk `index` out of the store (loading it if spilled).
    pub fn take(&mut self, index: usize) -> Result<Chunk> {
        match self {
            ChunkStore::Memory(v) => v
                .get_mut(index)
                .and_then(Option::take)
                .ok_or_else(|| Error::Config(format!("chunk {index} is not resident"))),
            ChunkStore::Disk { dir, .. } => Self::read(dir, index),
        }
    }

    /// Returns a chunk taken with [`ChunkStore::take`].
    pub fn put(&mut self, chunk: Chunk) -> Result<()> {
        match self {
            ChunkStore::Memory(v) => {
                let i = chunk.index();
                v[i] = Some(chunk);
                Ok(())
            }
            ChunkStore::Disk { dir, .. } => {
                let file = File::create(Self::path(dir, chunk.index()))?;
                bincode::serialize_into(BufWriter::new(file), &chunk)?;
                Ok(())
            }
        }
    }

    fn read(dir: &TempDir, index: usize) -> Result<Chunk> {
        let file = File::open(Self::path(dir, index))?;
        Ok(bincode::deserialize_from(BufReader::new(file))?)
    }

    /// Calls `f` on every chunk in index order without modifying the store.
    pub fn try_for_each<G>(&self, mut f: G) -> Result<()>
    where
        G: FnMut(&Chunk) -> Result<()>,
    {
        match self {
            ChunkStore::Memory(v) => {
                for c in v {
                    f(c.as_ref().ok_or_else(|| Error::Config("chunk is checked out".into()))?)?;
                }
            }
            ChunkStore::Disk { dir, count } => {
                for i in 0..*count {
                    f(&Self::read(dir, i)?)?;
                }
            }
        }
        Ok(())
    }
}
