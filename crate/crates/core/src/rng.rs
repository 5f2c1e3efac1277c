use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream `stream` under `seed`. Training loops
/// draw one stream per epoch so a run can resume at any epoch boundary.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream reserved for parameter initialization.
pub const INIT_STREAM: u64 = 0;

/// Stream used by epoch `epoch` (0-based).
pub fn epoch_stream(epoch: usize) -> u64 {
    1 + epoch as u64
}
