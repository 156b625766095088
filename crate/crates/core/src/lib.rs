//! Scale functions, fluctuation identities and optimal dividends with capital
//! injection for refracted-reflected spectrally positive Lévy processes whose
//! jumps are phase-type distributed.
//!
//! The layers build on each other:
//!
//! * [`levy_model`] validates `(c_Y, sigma, kappa, alpha, T)` and evaluates the
//!   Laplace exponents of `Y` and of the refracted process `X = Y - delta t`.
//! * [`spectral`] finds every root of `psi(s) = q`.
//! * [`scale`] turns the roots into exponential mixtures for `W`, `Z` and friends.
//! * [`fluctuation`] evaluates resolvents, exit transforms, dividend and
//!   injection NPVs and occupation-time transforms of the controlled process.
//! * [`control`] finds the optimal refraction level and the value function.
//! * [`montecarlo`] simulates the controlled process for cross-validation.

pub mod control;
pub mod error;
pub mod fluctuation;
pub mod levy_model;
pub mod mixture;
pub mod montecarlo;
pub mod poly;
pub mod quadrature;
pub mod scale;
pub mod spectral;

pub use error::{Error, Result};
pub use levy_model::{validate_model, LevyModelSpec, PhaseTypeJump, Process, ValidatedModel, VariationClass};
pub use mixture::ExpMixture;
pub use scale::{ScaleFamily, Which};
pub use spectral::{characteristic_roots, RootSet};
