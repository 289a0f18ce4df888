//! Seeded RNG streams.
//!
//! Every stochastic component draws from a ChaCha8 stream keyed by
//! `(seed, domain, index)`, so results do not depend on scheduling or
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod domain {
    pub const PERSON: u64 = 1;
    pub const TREE: u64 = 2;
    pub const ROUND: u64 = 3;
    pub const VALIDATION: u64 = 4;
    pub const ORACLE: u64 = 5;
}

pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(domain));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
