//! Seeded random streams.
//!
//! Every random draw in the engine comes from a ChaCha stream keyed by a
//! seed and a tuple of identifiers, so results never depend on evaluation
//! order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a list of stream identifiers into one 64-bit key.
pub fn stream_key(seed: u64, ids: &[u64]) -> u64 {
    ids.iter().fold(splitmix(seed), |acc, &id| splitmix(acc ^ splitmix(id)))
}

pub fn stream(seed: u64, ids: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, ids))
}

/// Domain tags keep streams for unrelated purposes apart.
pub mod tag {
    pub const INIT: u64 = 0x494E_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const SUBJECT: u64 = 0x5355_424A;
    pub const DOT: u64 = 0x444F_5400;
    pub const FRAME: u64 = 0x4652_4D00;
    pub const SPLIT: u64 = 0x5350_4C54;
    pub const STUDY: u64 = 0x5354_5544;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(1, &[2, 3]).gen();
        let b: u64 = stream(1, &[2, 3]).gen();
        let c: u64 = stream(1, &[3, 2]).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
