//! Keyed random streams. Every draw is addressed by `(seed, purpose, outer,
//! inner)` so results do not depend on scheduling or on how many draws other
//! trajectories consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    TrainingNoise = 1,
    InitialState = 2,
    Evaluation = 3,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for one `(seed, purpose, outer, inner)` key, e.g. iteration and
/// trajectory index. Successive draws from it walk the step index.
pub fn stream(seed: u64, purpose: Purpose, outer: u64, inner: u64) -> ChaCha8Rng {
    let mut key = splitmix(seed);
    key = splitmix(key ^ purpose as u64);
    key = splitmix(key ^ outer);
    key = splitmix(key ^ inner);
    ChaCha8Rng::seed_from_u64(key)
}
