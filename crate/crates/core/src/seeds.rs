//! Deterministic seed derivation.
//!
//! Every source of randomness in the pipeline is a ChaCha stream seeded
//! through [`subseed`], so distinct uses (per-image scenes, per-epoch
//! shuffles, per-resample draws) get independent streams that do not depend
//! on evaluation order or thread count.

/// Domain tags for [`subseed`]. Keeping them in one place avoids collisions.
pub mod tag {
    pub const IMAGE_SCENE: u64 = 0x01;
    pub const PATIENT: u64 = 0x02;
    pub const MODEL_INIT: u64 = 0x03;
    pub const EPOCH_SHUFFLE: u64 = 0x04;
    pub const BOOTSTRAP: u64 = 0x05;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed, a domain tag, and an
/// index within that domain.
pub fn subseed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(tag)) ^ index)
}
