//! Noise model: covariance and support, the chi law, and samplers.

mod chi;
mod covariance;
mod sampling;
pub mod special;

pub use chi::ChiDistribution;
pub use covariance::{CovarianceModel, SupportKind, SupportSpec};
pub use sampling::{
    sample_sphere, sample_support, sample_support_with_law, RadialLaw, SphereMode, SphereSample,
    SupportScheme, MAX_CONSECUTIVE_REJECTIONS,
};
pub(crate) use sampling::{stream_rng, truncated_gaussian};
