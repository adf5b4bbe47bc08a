//! Two-sample U-statistic processes for long-range dependent data.
//!
//! The crate covers simulation of stationary Gaussian LRD sequences and their
//! subordinated transforms ([`lrd_sim`]), Hermite-expansion machinery
//! ([`hermite`]), fast evaluation of
//! `U_n(k) = Σ_{i≤k} Σ_{j>k} h(X_i, X_j)` ([`ustat`]), simulation of the
//! limiting processes with critical-value tables ([`limit_law`]), change-point
//! detection ([`detect`]) and Monte Carlo checks of the limit theorems
//! ([`verify`]).

pub mod detect;
pub mod error;
pub mod hermite;
pub mod kernel;
pub mod limit_law;
pub mod lrd_sim;
pub mod par;
pub mod quad;
pub mod rng;
pub mod special;
pub mod ustat;
pub mod verify;

pub use error::{Error, Result};
pub use par::Execution;
