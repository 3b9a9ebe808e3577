//! Scene factorization with phasor vector encodings and resonator networks.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the bottom fix the scalar for the common case.

pub mod error;
pub mod features;
pub mod image;
pub mod lca;
mod linalg;
pub mod mnist;
pub mod readout;
pub mod resonator;
pub mod scalar;
pub mod scene;
pub mod tracking;
pub mod vfa;

pub use error::{Error, Result};
pub use scalar::{Real, C};

/// Independent seed for stream `stream` of a base seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub type DigitSet = mnist::DigitSet<f64>;
pub type SparseDictionary = features::SparseDictionary<f64>;
pub type VfaBasis = vfa::VfaBasis<f64>;
pub type Codebook = vfa::Codebook<f64>;
pub type Codebooks = vfa::Codebooks<f64>;
pub type ResonatorState = resonator::ResonatorState<f64>;
pub type LcaState = lca::LcaState<f64>;
pub type RgbImage = image::RgbImage<f64>;
pub type GrayImage = image::GrayImage<f64>;
pub type Resonator<'a> = resonator::Resonator<'a, f64>;
