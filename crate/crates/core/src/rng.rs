//! Seed derivation. Every random stream in a run descends from one master
//! seed so that replicates and methods can be re-run in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// One round of the splitmix64 output function.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for `stream` under `seed`. Distinct streams give unrelated seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(stream.wrapping_add(0xA5A5_A5A5)))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Well-known stream ids used by the designer and the experiment runner.
pub mod streams {
    pub const INITIAL_DESIGN: u64 = 1;
    pub const FIELD_DATA: u64 = 2;
    pub const REFERENCE: u64 = 3;
    pub const METHOD_BASE: u64 = 1000;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream() {
        let a = derive_seed(7, 1);
        let b = derive_seed(7, 2);
        let c = derive_seed(8, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 1));
    }
}
