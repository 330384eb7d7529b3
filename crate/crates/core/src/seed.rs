//! Deterministic seed derivation for independent sweep cells.

/// splitmix64 finalizer.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream indices into an independent stream seed.
///
/// Derivation is order-sensitive, so `derive(b, 1, 2)` and `derive(b, 2, 1)`
/// give unrelated streams.
pub fn derive(base: u64, indices: &[u64]) -> u64 {
    let mut h = splitmix(base);
    for &i in indices {
        h = splitmix(h ^ splitmix(i));
    }
    h
}
