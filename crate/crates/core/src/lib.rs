pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod indexer;
pub mod inference;
pub mod model_dir;
pub mod par;
pub mod pipeline;
pub mod solver;
pub mod sparse;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};

/// Mixes a base seed with two coordinates (e.g. layer and column) into an
/// independent per-task seed.
pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
