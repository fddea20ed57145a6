use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator derived from the run seed and a stream name
/// (e.g. `"init"`, `"sampling"`, `"synthesis"`).
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a over the name, folded into the seed with a splitmix finaliser.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_replayable() {
        let a: u64 = substream(7, "init").random();
        let b: u64 = substream(7, "sampling").random();
        let c: u64 = substream(7, "init").random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
