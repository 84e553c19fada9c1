//! Independent, reproducible RNG streams derived from one experiment seed.

/// SplitMix64 finalizer over `seed ^ stream`, so every stream tag yields an
/// unrelated 64-bit seed.
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const CANDIDATES: u64 = 1;
pub const BRACKET: u64 = 2;
pub const HUMAN: u64 = 3;
pub const TRAINING: u64 = 4;
pub const EXPLORATION: u64 = 5;
pub const EVALUATION: u64 = 6;
pub const LOOKAHEAD: u64 = 7;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        let s: Vec<u64> = (0..8).map(|t| derive(42, t)).collect();
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(derive(42, 1), derive(42, 1));
    }
}
