//! Deterministic seed derivation for parallel work items.
//!
//! Every parallel unit (a sampled subset, a synthesized record, a local
//! search restart) gets its own RNG seeded from a mix of the base seed and
//! the item coordinates, so results are independent of execution order and
//! thread count.

/// splitmix64 step, the usual seed-spreading finalizer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and up to two item coordinates.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut state = base;
    let mut out = splitmix64(&mut state);
    state ^= a.wrapping_mul(0xff51_afd7_ed55_8ccd);
    out ^= splitmix64(&mut state);
    state ^= b.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    out ^ splitmix64(&mut state)
}
