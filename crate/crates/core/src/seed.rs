/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Expands a root seed into an independent seed for `(stage, index)`.
pub fn derive_seed(root: u64, stage: &str, index: u64) -> u64 {
    // FNV-1a over the stage name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix(mix(root ^ h).wrapping_add(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_and_indices_differ() {
        let a = derive_seed(0, "splits", 0);
        assert_ne!(a, derive_seed(0, "splits", 1));
        assert_ne!(a, derive_seed(0, "synth", 0));
        assert_ne!(a, derive_seed(1, "splits", 0));
        assert_eq!(a, derive_seed(0, "splits", 0));
    }
}
