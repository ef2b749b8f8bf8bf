//! Seeded random streams.
//!
//! Every stochastic step draws from ChaCha8 seeded with the caller's `u64`
//! seed. Independent consumers of the same seed use distinct ChaCha stream
//! ids so that, for example, the class shuffle and the weight initialization
//! never share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids for the consumers of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ClassSelection = 1,
    RecordPartition = 2,
    Subsample = 3,
    Synthetic = 4,
    RepresentationInit = 5,
    RepresentationShuffle = 6,
    BoundaryInit = 7,
    BoundaryShuffle = 8,
}

pub fn stream_rng(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
