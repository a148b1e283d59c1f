//! Communication-constrained, differentially private distributed mean
//! estimation (DME) in the local-DP and multi-message shuffled models.
//!
//! The building blocks, bottom up:
//!
//! * [`rr`]: unbiased binary randomized response on a single bit, with its
//!   exact LDP / RDP / MSE characterization.
//! * [`binary`]: coordinate-sampled randomizer and analyzer for mean
//!   estimation of `{0,1}^d` vectors under an `s`-message budget.
//! * [`quantize`]: unbiased `m`-level stochastic binary decomposition of
//!   `[0,1]^d` vectors.
//! * [`linf`]: the ℓ∞-ball mechanism: scale, decompose, privatize each bit
//!   level through [`binary`] with a non-uniform budget split, reconstruct.
//! * [`l2`]: the ℓ2-ball mechanism: randomized Hadamard rotation, coordinate
//!   clipping, then [`linf`].
//! * [`accounting`]: RDP curves, composition, amplification-by-shuffling
//!   bounds, RDP→(ε,δ) conversion, and mechanism certification.
//! * [`shuffle`]: in-process simulation of the parallel shuffler channels
//!   between randomizers and analyzer, with exact transcript accounting.
//! * [`wire`]: the bit-exact message serialization format.
//!
//! All randomized operations take an explicit RNG; there is no hidden global
//! randomness. See [`seeding`] for the deterministic substream derivation
//! used by simulation harnesses.

pub mod accounting;
pub mod binary;
pub mod error;
pub mod l2;
pub mod linf;
pub mod quantize;
pub mod rr;
pub mod seeding;
pub mod shuffle;
pub mod wire;

pub use error::{DmeError, Result};
