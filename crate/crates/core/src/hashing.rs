//! Stable hashing and rounding helpers shared across the pipeline.
//!
//! Every place that needs per-item pseudo-randomness (oversampling,
//! split selection, n-gram fingerprints) derives it from the FNV-1a hash
//! below instead of a `std` hasher, so outputs are identical across
//! platforms, Rust versions and worker counts.

use sha2::{Digest, Sha256};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Stable 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Finalizer with full avalanche; plain FNV leaves the high bits biased on
/// short, similar keys.
fn mix64(mut h: u64) -> u64 {
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    h
}

/// Stable keyed hash: seed and domain-separation tag mixed into FNV-1a,
/// then finalized.
pub fn keyed_hash(seed: u64, tag: &str, key: &str) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in tag.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h ^= 0xff;
    h = h.wrapping_mul(FNV_PRIME);
    for &b in key.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    mix64(h)
}

/// Uniform value in [0, 1) derived from a keyed hash.
pub fn keyed_unit(seed: u64, tag: &str, key: &str) -> f64 {
    // 53 high bits -> exactly representable in f64
    (keyed_hash(seed, tag, key) >> 11) as f64 / (1u64 << 53) as f64
}

/// SHA-256 digest of a byte string.
pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let out = Sha256::digest(bytes);
    let mut buf = [0u8; 32];
    buf.copy_from_slice(&out);
    buf
}

/// Lowercase hex of a digest.
pub fn to_hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Round half away from zero at `dp` decimal places.
///
/// Used wherever a report displays a fixed-precision number, so the
/// rounding rule is the same in tables, JSON and tests.
pub fn round_half_away(x: f64, dp: u32) -> f64 {
    let scale = 10f64.powi(dp as i32);
    let scaled = x * scale;
    let rounded = if scaled >= 0.0 {
        (scaled + 0.5).floor()
    } else {
        (scaled - 0.5).ceil()
    };
    rounded / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_values() {
        // reference values of the 64-bit FNV-1a test suite
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn keyed_unit_range_and_determinism() {
        for i in 0..1000 {
            let u = keyed_unit(42, "mix", &format!("doc-{i}"));
            assert!((0.0..1.0).contains(&u));
            assert_eq!(u, keyed_unit(42, "mix", &format!("doc-{i}")));
        }
        assert_ne!(keyed_unit(1, "mix", "x"), keyed_unit(2, "mix", "x"));
        assert_ne!(keyed_unit(1, "mix", "x"), keyed_unit(1, "split", "x"));
    }

    #[test]
    fn rounding_half_away_from_zero() {
        assert_eq!(round_half_away(-46.9634, 2), -46.96);
        assert_eq!(round_half_away(23.4448, 2), 23.44);
        assert_eq!(round_half_away(12.6232, 2), 12.62);
        assert_eq!(round_half_away(1.5, 0), 2.0);
        assert_eq!(round_half_away(-1.5, 0), -2.0);
        assert_eq!(round_half_away(43.75, 0), 44.0);
        assert_eq!(round_half_away(21.25, 0), 21.0);
    }
}
