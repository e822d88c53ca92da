//! Shared fixtures for the integration suites: the canonical desk instance
//! and seeded random instance generators exercising the public API only.

use kva_core::{CapitalConstraint, MarketModel, ValidatedModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

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

pub fn canon() -> (ValidatedModel, CapitalConstraint) {
    (canon_model().validate().unwrap(), CapitalConstraint::new(10.0, 2.5).unwrap())
}

/// Well-conditioned random instance of dimension `d` with nonzero drift and
/// strictly positive residual deal variance.
pub fn random_instance(rng: &mut ChaCha8Rng, d: usize) -> (ValidatedModel, CapitalConstraint) {
    let sqrt_m = rng.random_range(0.3..2.0);
    let market = random_market(rng, d, sqrt_m);
    let c0 = rng.random_range(2.0..50.0);
    let nu = rng.random_range(1.5..4.0);
    (market.validate().unwrap(), CapitalConstraint::new(c0, nu).unwrap())
}

/// Random two-asset instance tuned so the zero-deal book defaults with
/// material probability: the boundary z-score `sqrt(M) + nu R` lands in
/// [1.8, 2.8], i.e. default probabilities between roughly 3e-3 and 4e-2.
pub fn random_defaulting_instance(rng: &mut ChaCha8Rng) -> (ValidatedModel, CapitalConstraint) {
    let sqrt_m = rng.random_range(0.5..1.2);
    let market = random_market(rng, 2, sqrt_m);
    let accrual = 1.0 + market.r + market.lambda;
    let z_target = rng.random_range(1.8..2.8);
    let nu = (z_target - sqrt_m) / accrual;
    let c0 = rng.random_range(2.0..20.0);
    (market.validate().unwrap(), CapitalConstraint::new(c0, nu).unwrap())
}

fn random_market(rng: &mut ChaCha8Rng, d: usize, sqrt_m: f64) -> MarketModel {
    let s0 = DVector::from_fn(d, |_, _| rng.random_range(20.0..150.0));
    let r = rng.random_range(0.0..0.03);
    let lambda = rng.random_range(0.0..0.02);
    let accrual = 1.0 + r + lambda;

    let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0) * 3.0);
    let mut a = &g * g.transpose();
    let ridge = 0.3 * a.trace() / d as f64 + 0.2;
    for i in 0..d {
        a[(i, i)] += ridge;
    }

    // Scale a raw drift direction to the requested sqrt(mu' A^{-1} mu).
    let chol = nalgebra::Cholesky::new(a.clone()).expect("constructed positive definite");
    let raw = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0) + 0.1);
    let m_raw = raw.dot(&chol.solve(&raw)).sqrt();
    let mu = &raw * (sqrt_m / m_raw);

    let b = DVector::from_fn(d, |_, _| rng.random_range(-0.7..0.7));
    let hedgeable = b.dot(&chol.solve(&b));
    let sigma_y2 = hedgeable + rng.random_range(0.05..4.0);

    MarketModel {
        m1: &s0 * accrual + mu,
        s0,
        r,
        lambda,
        a,
        b,
        sigma_y2,
        m_y: rng.random_range(-2.0..2.0),
    }
}

/// Ten deal sizes strictly inside the feasible interval of the instance.
pub fn feasible_grid(model: &ValidatedModel, constraint: &CapitalConstraint) -> Vec<f64> {
    let resid = model.residual_variance();
    let q_max = if resid > 0.0 { constraint.radius() / resid.sqrt() } else { 1.0 };
    [0.08, 0.25, 0.45, 0.65, 0.85]
        .iter()
        .flat_map(|f| [f * q_max, -f * q_max])
        .collect()
}
