//! Seed derivation tree.
//!
//! A single root seed fans out into disjoint purpose streams (training,
//! dropout samples, perturbation draws, ...), and each purpose stream into
//! indexed substreams (sample `m`, image `i`, epoch `e`). Every leaf is a
//! plain `u64` seed for a [`ChaCha8Rng`], so any single sample can be
//! regenerated without replaying its siblings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for the first level of the derivation tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    TrainDropout = 3,
    DropoutSample = 4,
    Perturbation = 5,
    ImageSelection = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed `index` of `parent`. Counter-based: the child depends only on
/// `(parent, index)`.
pub fn derive(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Root of the purpose stream `stream` under `seed`.
pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    derive(seed, stream as u64)
}

/// Generator for substream `index` of purpose `stream`.
pub fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(stream_seed(seed, stream), index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `k` distinct indices from `0..n`, in draw order, from the image-selection
/// stream of `seed`.
pub fn select_indices(seed: u64, n: usize, k: usize) -> Vec<usize> {
    let mut rng = substream(seed, Stream::ImageSelection, 0);
    rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec()
}
