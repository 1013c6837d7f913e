//! Overflow probabilities of stable tandem queueing networks.
//!
//! The crate computes `P_x(τ_n < τ_0)` for the constrained walk of a tandem
//! network three ways: a closed-form approximation built from harmonic systems
//! of the limit walk Y ([`tandem`]), an exact iterative solve on the bounded
//! domain ([`oracle`]), and Monte Carlo / importance sampling ([`simulate`]).

pub mod bounds;
pub mod error;
pub mod loglinear;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod simulate;
pub mod systems;
pub mod tandem;

pub use error::{Error, Result};
pub use model::{Increment, NetworkParams, StateX, StateY};
pub use scalar::Scalar;
