//! Small shared helpers: seeded RNG streams, canonical number formatting, hashing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic RNG for `(seed, stream)`. Distinct stream labels give
/// independent sequences from the same user-facing seed.
pub fn seeded_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(stream.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Fixed six-decimal rendering used in every hashed preimage.
///
/// The value is scaled by 10^6 and rounded half away from zero before
/// rendering, so the output depends only on the rounded integer.
pub fn canonical_f64(x: f64) -> String {
    let scaled = (x * 1e6).round();
    if scaled == 0.0 {
        return "0.000000".to_string();
    }
    let neg = scaled < 0.0;
    let mag = scaled.abs() as u128;
    let int_part = mag / 1_000_000;
    let frac = mag % 1_000_000;
    format!("{}{}.{:06}", if neg { "-" } else { "" }, int_part, frac)
}

/// Lowercase hex SHA-256 of `data`.
pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (ddof = 0).
pub(crate) fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Median with the usual even-length convention (mean of the two middle values).
pub(crate) fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn canonical_formatting() {
        assert_eq!(canonical_f64(1.0), "1.000000");
        assert_eq!(canonical_f64(0.0), "0.000000");
        assert_eq!(canonical_f64(-0.0), "0.000000");
        assert_eq!(canonical_f64(-2.5), "-2.500000");
        assert_eq!(canonical_f64(1234.5678915), "1234.567892");
        assert_eq!(canonical_f64(0.0000004), "0.000000");
        assert_eq!(canonical_f64(-0.0000006), "-0.000001");
        assert_eq!(canonical_f64(42.0), "42.000000");
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = seeded_rng(7, "a").gen();
        let a2: u64 = seeded_rng(7, "a").gen();
        let b: u64 = seeded_rng(7, "b").gen();
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median_of_sorted(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(median_of_sorted(&[1.0, 2.0, 3.0, 10.0]), 2.5);
    }
}
