//! Seeded random streams.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng64;

/// Independent, reproducible streams derived from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Mask = 3,
    Dropout = 4,
    Validation = 5,
    Inference = 6,
    Synthetic = 7,
}

pub fn stream(seed: u64, which: Stream) -> Rng64 {
    let mut rng = Rng64::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
