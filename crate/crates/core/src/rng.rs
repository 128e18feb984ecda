//! Seeded random streams. Each sensor draws from its own ChaCha stream so
//! adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Independent stream `id` of the generator seeded with `seed`.
pub fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub mod streams {
    pub const IMU: u64 = 1;
    pub const RANGE: u64 = 2;
    pub const FRAMES: u64 = 3;
    pub const EVENTS: u64 = 4;
    pub const LANDMARKS: u64 = 5;
}
