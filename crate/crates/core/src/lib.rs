//! Ergodicity diagnostics for Ornstein-Uhlenbeck processes driven by Levy noise.
//!
//! The crate is organised bottom-up:
//!
//! * [`matrix`]: matrix exponentials, spectral profile and decay envelope of the drift matrix.
//! * [`levy`]: Levy measures, triplets, the characteristic exponent, truncation, moments and increment sampling.
//! * [`measure`]: lattice measures with meet, total variation, shifts and a maximal coupling sampler.
//! * [`conditions`]: numeric checkers for the overlap, TV-ratio, small-jump and symbol-growth conditions,
//!   plus the classification they imply.
//! * [`ou`]: exact-where-possible simulation of the process, its invariant law and the last-jump coupling.
//! * [`spectral`]: accumulated symbols, the `phi_t` functional and Fourier-inverted laws and TV distances.
//! * [`lab`]: decay experiments, rate fits and the aggregated report.
//!
//! Monte Carlo loops run through [`rng::Execution`], which is rayon-backed when the `parallel`
//! feature is on and sequential otherwise; results are identical either way.

pub mod conditions;
pub mod error;
pub mod lab;
pub mod levy;
pub mod matrix;
pub mod measure;
pub mod ou;
pub mod quad;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod vecops;

pub use error::{Error, Result};
