//! Numerical engine for capital-constrained indifference prices (KVA-style
//! charges) in a one-period Gaussian market.
//!
//! A bank holding hedges `theta` and a candidate deal of size `q` has time-1
//! equity
//!
//! ```text
//! X(theta, q) = q*Y + theta' * (S1 - S0*(1+r+lambda)) + (C0 + P(q))*(1+r+lambda)
//! ```
//!
//! with `(S1, Y)` jointly Gaussian and the hedge set pinned to the capital
//! budget `C0 = nu * sqrt(Var[X])`. The crate prices the deal by indifference
//! under three objectives:
//!
//! - [`linear`]: expected equity, closed form throughout;
//! - [`shareholder`]: expected positive part `E[X^+]` (limited liability),
//!   priced to second order from Monte Carlo estimates of the boundary terms;
//! - [`median`]: median of `X^+`, which delegates to the linear price when the
//!   solvency assumption holds.
//!
//! [`montecarlo`] provides the deterministic chunk-seeded sampler and the
//! estimators, and [`oracle`] holds slow reference implementations (grid
//! search, bisection, boundary integrals) used to cross-check everything else.

pub mod error;
pub mod linear;
pub mod median;
pub mod model;
pub mod montecarlo;
pub mod oracle;
pub mod shareholder;

pub use error::{KvaError, Result};
pub use model::{CapitalConstraint, Deal, EquityEvaluator, MarketModel, ValidatedModel};
pub use montecarlo::{Estimate, SampleBatch};

#[cfg(test)]
mod test_fixtures;
