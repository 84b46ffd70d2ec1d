use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// gamma^n computed by repeated multiplication, matching bit-for-bit the
/// value an iterated Bellman backup converges to.
pub fn gamma_pow(gamma: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, _| acc * gamma)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in tag.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Stable per-consumer stream derivation: one run seed fans out into
/// independent RNGs for env, policy, replay and weight init.
pub fn seeded_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ fnv1a(tag));
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn gamma_pow_matches_iteration() {
        let mut v = 1.0;
        for n in 0..60u32 {
            assert_eq!(gamma_pow(0.9, n), v);
            v *= 0.9;
        }
    }

    #[test]
    fn streams_are_stable_and_distinct() {
        let a1 = seeded_rng(7, "policy").next_u64();
        let a2 = seeded_rng(7, "policy").next_u64();
        let b = seeded_rng(7, "replay").next_u64();
        let c = seeded_rng(8, "policy").next_u64();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
        assert_ne!(a1, c);
    }
}
