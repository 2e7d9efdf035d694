//! Levy measures, the triplet `(Q, b, nu)`, its characteristic exponent, truncation, moments and increment sampling.

mod measure;
mod moments;
mod sample;
mod symbol;
mod truncate;

pub use measure::{Atom, CustomDensity, DensityFn, DensityKind, LevyMeasure, MAX_DIM};
pub use moments::{moment_integral, MomentKind, MomentValue, RATIO_LIMIT, RATIO_WINDOW, SHELLS};
pub use sample::{
    isotropic_stable, positive_stable, sample_increment, small_jump_covariance, symmetric_stable, DrivingPlan, Increment,
    IncrementSampler, SmallJumpScheme, MAX_JUMP_RATE,
};
pub use symbol::{
    jump_symbol, re_symbol_small_jump_bound, small_ball_second_moment, stable_symbol_constant, symbol, LevyTriplet,
};
pub use truncate::{truncate, Mark, TruncatedMeasure};
