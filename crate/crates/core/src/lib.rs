//! Generalized Kuramoto oscillators with a nonlinear frequency response:
//! finite ensembles, dyadic lattice approximations of the continuum model,
//! and empirical measures for the mean-field limit.

pub mod constants;
pub mod continuum;
pub mod error;
pub mod framework;
pub mod kinetic;
pub mod numerics;
pub mod ode;
pub mod particle;
pub mod response;

pub use constants::{interval_extrema, IntervalConstants};
pub use error::{GkError, Result};
pub use framework::{certify_framework_a, certify_framework_b, check_admissibility, FrameworkCertificate, FrameworkParams};
pub use numerics::NormExponent;
pub use ode::{Scheme, TimeGrid};
pub use particle::{Coupling, OscillatorEnsemble, Trajectory};
pub use response::FrequencyResponse;
