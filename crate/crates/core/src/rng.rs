//! Seeded randomness.
//!
//! Every stage draws from its own ChaCha8 stream derived from the trial seed
//! and a stage name, so adding draws to one stage never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Named substreams used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Datagen,
    Augment,
    Init,
    Shuffle,
    Search,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Datagen => "datagen",
            Stream::Augment => "augment",
            Stream::Init => "init",
            Stream::Shuffle => "shuffle",
            Stream::Search => "search",
        }
    }
}

/// Derives the generator for `(seed, stream, tag)`.
///
/// `tag` separates independent uses of the same stream within a stage
/// (e.g. the probe head and the debiased head both draw from `Init`).
pub fn substream(seed: u64, stream: Stream, tag: &str) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.name().as_bytes());
    h.update([0u8]);
    h.update(tag.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
