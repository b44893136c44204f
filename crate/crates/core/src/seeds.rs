//! Labelled seed substreams: every random stage draws its seed from the root seed
//! and a stable label such as `sim.train.1000.0`, so cells of an experiment grid
//! can be rerun in isolation.

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn substream(root: u64, label: &str) -> u64 {
    splitmix64(splitmix64(root) ^ fnv1a(label))
}
