//! Seeded generator streams.
//!
//! Walk increments and scenery values never share a generator: the walk of
//! replicate seed `s` uses a ChaCha stream keyed by `s`, while the scenery value
//! at a site is drawn from a stream keyed by a mix of `s` with a scenery tag,
//! selected by the packed site. Scenery draws therefore depend only on
//! `(seed, site)`, never on visiting order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lattice::Site;

const SCENERY_TAG: u64 = 0x5ce4_e3f1_d00d_b17e;
const INIT_TAG: u64 = 0x1a17_0f5e_ed00_0001;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key_from(seed: u64, tag: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = seed ^ tag;
    for chunk in key.chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

pub fn walk_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn site_rng(seed: u64, site: Site) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key_from(seed, SCENERY_TAG));
    rng.set_stream(site.raw());
    rng
}

/// Generator for optimizer initializations and start vectors.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(key_from(seed, INIT_TAG))
}

/// Seed of replicate `index` under base seed `base`.
#[inline]
pub fn replicate_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index)
}
