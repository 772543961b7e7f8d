//! Filter forgetting in hidden Markov models, measured as the gap between the
//! top two Lyapunov exponents of the forward random matrix product.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] – Gaussian-emission HMM parameters and their structural checks.
//! * [`sampling`] – seeded synthetic state/observation sequences.
//! * [`filtering`] – normalized forward/backward recursions, smoothing and the
//!   windowed (buffered) approximations.
//! * [`lyapunov`] – log-ratio coordinates, the projected Jacobian power
//!   iteration for the gap, buffer lengths, and the QR / two-trajectory /
//!   Birkhoff cross-checks.
//! * [`inference`] – exact and buffered mini-batch log-likelihood gradients and
//!   the normalized stochastic gradient ascent driver.
//! * [`cli`] – the `hmmlyap` command line front end.

pub mod cli;
pub mod error;
pub mod filtering;
pub mod inference;
pub mod lyapunov;
pub mod model;
pub mod sampling;

pub use error::{Error, Result};
pub use model::{HmmModel, ObservationSequence, StateDistribution};
