//! Shared fixtures for unit tests: the two-asset reference market used
//! throughout the suite, plus a high-drift variant whose default probability
//! is negligible at double precision.

use nalgebra::{DMatrix, DVector};

use crate::model::{CapitalConstraint, MarketModel};

/// Two assets, mild drift, correlated deal payoff. Every frozen constant in
/// the unit tests refers to this market.
pub fn canon_model() -> MarketModel {
    MarketModel {
        s0: DVector::from_vec(vec![100.0, 50.0]),
        m1: DVector::from_vec(vec![106.0, 52.0]),
        r: 0.01,
        lambda: 0.01,
        a: DMatrix::from_row_slice(2, 2, &[16.0, 2.0, 2.0, 9.0]),
        b: DVector::from_vec(vec![0.8, 0.3]),
        sigma_y2: 4.0,
        m_y: -1.0,
    }
}

pub fn canon_constraint() -> CapitalConstraint {
    CapitalConstraint::new(10.0, 2.5).unwrap()
}

/// Same covariance structure with the drift pushed up to mu = (20, 5).
/// The survival probability is 1 - 1.26e-14, so truncation effects sit
/// below double-precision noise and exact reductions hold to full accuracy.
pub fn boosted_model() -> MarketModel {
    MarketModel {
        m1: DVector::from_vec(vec![122.0, 56.0]),
        ..canon_model()
    }
}
