//! Closed-form whole-bank pricing: the Lagrange multiplier `chi(q)`, the
//! optimal strategy, the exact and small-q indifference prices, and the
//! RAROC hurdle rate, plus the independent-risk price of the simple model.
//!
//! Everything here is exact linear algebra on the validated model; the Monte
//! Carlo machinery never enters. The capital constraint binds at the optimum,
//! so the feasible region is the ellipsoid
//! `theta' A theta + 2 q theta' b + q^2 sigma_Y^2 = C0^2 / nu^2`
//! and the optimizer is a scaled `A^{-1} mu` shifted by the variance-minimal
//! hedge `-q A^{-1} b`.

use nalgebra::DVector;

use crate::error::{KvaError, Result};
use crate::model::{CapitalConstraint, Deal, ValidatedModel};

/// Additive split of the indifference price, before discounting by
/// `1 + r + lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceDecomposition {
    /// `-q E[Y]`, the expected-cashflow charge.
    pub expectation: f64,
    /// `q b' A^{-1} mu`, the cost of the hedgeable part.
    pub hedge: f64,
    /// `(1/chi(0) - 1/chi(q)) mu' A^{-1} mu / 2`, the capital charge for the
    /// unhedgeable remainder.
    pub capital: f64,
}

/// Solution of the whole-bank problem at a given deal size.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub chi_q: f64,
    pub theta_star: DVector<f64>,
    /// Optimal objective at the quoted price.
    pub v_tilde: f64,
    pub price_exact: f64,
    pub price_approx: f64,
    pub decomposition: PriceDecomposition,
}

/// RAROC of the optimal zero-deal book and the induced hurdle rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RarocReport {
    pub raroc0: f64,
    /// Hurdle rate `h`; equals `raroc0` by definition.
    pub hurdle: f64,
    /// Expected profit of the optimal book over one period.
    pub expected_pnl: f64,
}

/// `C0^2/nu^2 - q^2 (sigma_Y^2 - b' A^{-1} b)`, the squared radius left for
/// market risk once the deal's unhedgeable variance is accounted for.
pub(crate) fn capital_radicand(model: &ValidatedModel, constraint: &CapitalConstraint, q: f64) -> f64 {
    let radius = constraint.radius();
    radius * radius - q * q * model.residual_variance()
}

pub(crate) fn max_feasible_q(model: &ValidatedModel, constraint: &CapitalConstraint) -> f64 {
    let resid = model.residual_variance();
    if resid > 0.0 {
        constraint.radius() / resid.sqrt()
    } else {
        f64::INFINITY
    }
}

fn check_drift(model: &ValidatedModel) -> Result<()> {
    if model.mu_a_inv_mu() <= 0.0 {
        return Err(KvaError::DegenerateDrift);
    }
    Ok(())
}

/// Lagrange multiplier
/// `chi(q) = sqrt(mu' A^{-1} mu) / (2 sqrt(C0^2/nu^2 - q^2 (sigma_Y^2 - b' A^{-1} b)))`.
///
/// Even in `q` and increasing in `|q|`: a larger deal eats capital and makes
/// the constraint more expensive.
pub fn multiplier(model: &ValidatedModel, constraint: &CapitalConstraint, q: f64) -> Result<f64> {
    check_drift(model)?;
    let radicand = capital_radicand(model, constraint, q);
    if radicand <= 0.0 {
        return Err(KvaError::CapitalInfeasible { q, q_max: max_feasible_q(model, constraint) });
    }
    Ok(model.mu_a_inv_mu().sqrt() / (2.0 * radicand.sqrt()))
}

/// Optimal strategy `theta*(q) = A^{-1} mu / (2 chi(q)) - q A^{-1} b`.
///
/// Saturates the capital constraint exactly: the drift leg spends the radius
/// left over after the variance-minimal hedge `-q A^{-1} b` of the deal.
pub fn optimal_theta(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q: f64,
) -> Result<DVector<f64>> {
    let chi = multiplier(model, constraint, q)?;
    Ok(model.a_inv_mu() / (2.0 * chi) - model.a_inv_b() * q)
}

/// Optimal expected equity `sup E[X(theta, q)]` over the constraint set at
/// the given price.
pub fn linear_value(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q: f64,
    price: f64,
) -> Result<f64> {
    let chi = multiplier(model, constraint, q)?;
    let theta_mu = model.mu_a_inv_mu() / (2.0 * chi) - q * model.b_a_inv_mu();
    Ok(q * model.market().m_y + theta_mu + (constraint.c0 + price) * model.accrual())
}

/// Exact indifference price of `q` units and the attached solution report.
///
/// The capital charge is evaluated as
/// `sqrt(mu' A^{-1} mu) q^2 resid / (sqrt(rad(0)) + sqrt(rad(q)))`,
/// algebraically equal to `(1/chi(0) - 1/chi(q)) mu' A^{-1} mu / 2` but free
/// of the cancellation that form suffers for small `q`.
pub fn price_exact(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    deal: Deal,
) -> Result<LinearSolution> {
    check_drift(model)?;
    let q = deal.q;
    let rad0 = capital_radicand(model, constraint, 0.0);
    let radq = capital_radicand(model, constraint, q);
    if radq <= 0.0 {
        return Err(KvaError::CapitalInfeasible { q, q_max: max_feasible_q(model, constraint) });
    }

    let sqrt_m = model.mu_a_inv_mu().sqrt();
    let expectation = -q * model.market().m_y;
    let hedge = q * model.b_a_inv_mu();
    let capital =
        sqrt_m * q * q * model.residual_variance() / (rad0.sqrt() + radq.sqrt());

    let discount = 1.0 / model.accrual();
    let price = discount * (expectation + capital + hedge);
    let capital_small_q =
        0.5 * model.residual_variance() * q * q * (constraint.nu / constraint.c0) * sqrt_m;
    let approx = discount * (expectation + capital_small_q + hedge);

    let chi_q = sqrt_m / (2.0 * radq.sqrt());
    let theta_star = model.a_inv_mu() / (2.0 * chi_q) - model.a_inv_b() * q;
    let v_tilde = linear_value(model, constraint, q, price)?;

    Ok(LinearSolution {
        chi_q,
        theta_star,
        v_tilde,
        price_exact: price,
        price_approx: approx,
        decomposition: PriceDecomposition { expectation, hedge, capital },
    })
}

/// Small-deal expansion of the indifference price: quadratic in `q`, with the
/// capital charge `resid q^2 (nu / C0) sqrt(mu' A^{-1} mu) / 2`.
///
/// The next correction is quartic, since `chi` is even in `q`.
pub fn price_approx(model: &ValidatedModel, constraint: &CapitalConstraint, deal: Deal) -> Result<f64> {
    Ok(price_exact(model, constraint, deal)?.price_approx)
}

/// RAROC of the optimal book without the deal, which the indifference
/// condition turns into the hurdle rate `h = sqrt(mu' A^{-1} mu)/nu + r + lambda`.
pub fn raroc_report(model: &ValidatedModel, constraint: &CapitalConstraint) -> RarocReport {
    let sqrt_m = model.mu_a_inv_mu().max(0.0).sqrt();
    let spread = model.market().r + model.market().lambda;
    let raroc0 = sqrt_m / constraint.nu + spread;
    let expected_pnl = constraint.radius() * sqrt_m + constraint.c0 * spread;
    RarocReport { raroc0, hurdle: raroc0, expected_pnl }
}

/// Price under the simple model: one existing book, a new deal independent of
/// it, value-at-risk capital with multiplier `m_var`, and RAROC held fixed.
///
/// `P(q) = (-q mean_y + raroc0 * m_var * q^2 var_y / (2 sqrt(var_portfolio0)))
///         / (1 + r + lambda)`.
///
/// `expected_pnl0` enters only through
/// `raroc0 = expected_pnl0 / (m_var sqrt(var_portfolio0))`; it is accepted so
/// call sites carry the full ingredient list of the simple model.
#[allow(clippy::too_many_arguments)]
pub fn simple_model_price(
    expected_pnl0: f64,
    var_portfolio0: f64,
    raroc0: f64,
    var_y: f64,
    mean_y: f64,
    m_var: f64,
    q: f64,
    r: f64,
    lambda: f64,
) -> Result<f64> {
    let _ = expected_pnl0;
    if var_portfolio0 <= 0.0 {
        return Err(KvaError::ZeroVariance(var_portfolio0));
    }
    let charge = raroc0 * 0.5 * m_var * q * q * var_y / var_portfolio0.sqrt();
    Ok((-q * mean_y + charge) / (1.0 + r + lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_fixtures::{canon_constraint, canon_model};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn canon() -> ValidatedModel {
        canon_model().validate().unwrap()
    }

    #[test]
    fn multiplier_matches_closed_form() {
        let m = canon();
        let c = canon_constraint();
        assert_relative_eq!(multiplier(&m, &c, 0.0).unwrap(), 0.12677313820927749, max_relative = 1e-14);
        assert_relative_eq!(multiplier(&m, &c, 0.1).unwrap(), 0.12693013000297448, max_relative = 1e-14);
    }

    #[test]
    fn multiplier_is_even_and_increasing_in_magnitude() {
        let m = canon();
        let c = canon_constraint();
        let mut last = multiplier(&m, &c, 0.0).unwrap();
        for q in [0.25, 0.5, 1.0, 1.5, 1.9, 2.0] {
            let chi = multiplier(&m, &c, q).unwrap();
            assert_eq!(chi, multiplier(&m, &c, -q).unwrap());
            assert!(chi > last, "chi not increasing at q={q}");
            last = chi;
        }
    }

    #[test]
    fn oversized_deal_is_infeasible() {
        let m = canon();
        let c = canon_constraint();
        match multiplier(&m, &c, 2.0113) {
            Err(KvaError::CapitalInfeasible { q, q_max }) => {
                assert_eq!(q, 2.0113);
                assert_relative_eq!(q_max, 2.0112368528166216, max_relative = 1e-13);
            }
            other => panic!("expected CapitalInfeasible, got {other:?}"),
        }
        // The boundary itself is excluded: chi diverges there.
        let q_max = 2.0112368528166216;
        assert!(multiplier(&m, &c, q_max).is_err() || multiplier(&m, &c, q_max).unwrap() > 1e6);
    }

    #[test]
    fn degenerate_drift_is_an_error() {
        let mut mm = canon_model();
        mm.m1 = &mm.s0 * 1.02;
        let m = mm.validate().unwrap();
        let c = canon_constraint();
        assert!(matches!(multiplier(&m, &c, 0.1), Err(KvaError::DegenerateDrift)));
        assert!(matches!(
            price_exact(&m, &c, Deal::new(0.1).unwrap()),
            Err(KvaError::DegenerateDrift)
        ));
        assert!(matches!(linear_value(&m, &c, 0.0, 0.0), Err(KvaError::DegenerateDrift)));
    }

    #[test]
    fn optimal_theta_matches_closed_form_and_saturates_constraint() {
        let m = canon();
        let c = canon_constraint();
        let t0 = optimal_theta(&m, &c, 0.0).unwrap();
        assert_relative_eq!(t0[0], 0.95784148869231879, max_relative = 1e-13);
        assert_relative_eq!(t0[1], 0.22537446792760442, max_relative = 1e-13);
        assert_relative_eq!(m.equity_variance(&t0, 0.0), 16.0, max_relative = 1e-13);

        for q in [-1.5, -0.3, 0.1, 0.9, 1.9] {
            let t = optimal_theta(&m, &c, q).unwrap();
            let g = m.equity_variance(&t, q);
            assert_relative_eq!(g, 16.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn zero_hedge_covariance_drops_the_hedge_leg() {
        let mut mm = canon_model();
        mm.b = DVector::zeros(2);
        let m = mm.validate().unwrap();
        let c = canon_constraint();
        let q = 0.7;
        let chi = multiplier(&m, &c, q).unwrap();
        let t = optimal_theta(&m, &c, q).unwrap();
        let expected = m.a_inv_mu() / (2.0 * chi);
        assert_relative_eq!((t - expected).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn linear_value_at_zero_deal() {
        let m = canon();
        let c = canon_constraint();
        assert_relative_eq!(
            linear_value(&m, &c, 0.0, 0.0).unwrap(),
            14.25674042269688,
            max_relative = 1e-13
        );
    }

    #[test]
    fn linear_value_is_affine_in_price() {
        let m = canon();
        let c = canon_constraint();
        let base = linear_value(&m, &c, 0.4, 0.1).unwrap();
        let bumped = linear_value(&m, &c, 0.4, 0.1 + 0.37).unwrap();
        assert_relative_eq!(bumped - base, 0.37 * 1.02, max_relative = 1e-12);
    }

    #[test]
    fn price_exact_at_zero_quantity_is_zero() {
        let m = canon();
        let c = canon_constraint();
        let sol = price_exact(&m, &c, Deal::new(0.0).unwrap()).unwrap();
        assert_eq!(sol.price_exact, 0.0);
        assert_eq!(sol.price_approx, 0.0);
        assert_eq!(sol.decomposition.expectation, 0.0);
        assert_eq!(sol.decomposition.hedge, 0.0);
        assert_eq!(sol.decomposition.capital, 0.0);
    }

    #[test]
    fn price_exact_matches_frozen_reference() {
        let m = canon();
        let c = canon_constraint();
        let sol = price_exact(&m, &c, Deal::new(0.1).unwrap()).unwrap();
        assert_relative_eq!(sol.price_exact, 0.12368664803954083, max_relative = 1e-13);
        assert_relative_eq!(sol.decomposition.expectation, 0.1, max_relative = 1e-15);
        assert_relative_eq!(sol.decomposition.capital, 0.0050175238574745087, max_relative = 1e-12);
        assert_relative_eq!(sol.decomposition.hedge, 0.021142857142857143, max_relative = 1e-14);
        assert_relative_eq!(sol.chi_q, 0.12693013000297448, max_relative = 1e-14);
        // Decomposition reassembles the price after discounting.
        let d = sol.decomposition;
        assert_relative_eq!(
            (d.expectation + d.capital + d.hedge) / 1.02,
            sol.price_exact,
            max_relative = 1e-15
        );
    }

    #[test]
    fn indifference_holds_on_a_quantity_grid() {
        let m = canon();
        let c = canon_constraint();
        let v0 = linear_value(&m, &c, 0.0, 0.0).unwrap();
        for q in [-1.9, -1.2, -0.5, -0.05, 0.05, 0.3, 0.8, 1.4, 1.9] {
            let sol = price_exact(&m, &c, Deal::new(q).unwrap()).unwrap();
            let v = linear_value(&m, &c, q, sol.price_exact).unwrap();
            assert!(
                (v - v0).abs() < 1e-9 * v0.abs(),
                "indifference broken at q={q}: {v} vs {v0}"
            );
            assert_relative_eq!(sol.v_tilde, v0, max_relative = 1e-9);
        }
    }

    #[test]
    fn no_feasible_strategy_beats_the_optimum() {
        let m = canon();
        let c = canon_constraint();
        let q = 0.6;
        let theta_star = optimal_theta(&m, &c, q).unwrap();
        let best = theta_star.dot(m.excess_mean());
        let rho = capital_radicand(&m, &c, q).sqrt();
        let shift = m.a_inv_b() * (-q);
        let chol = m.chol_a().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for _ in 0..1000 {
            let mut u = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            u /= u.norm();
            // theta = -q A^{-1} b + rho L^{-T} u lies on the constraint set.
            let w = chol.transpose().solve_upper_triangular(&u).unwrap() * rho;
            let theta = &shift + w;
            let g = m.equity_variance(&theta, q);
            assert_relative_eq!(g, 16.0, max_relative = 1e-9);
            assert!(theta.dot(m.excess_mean()) <= best + 1e-9);
        }
    }

    #[test]
    fn perfectly_hedgeable_deal_has_no_capital_charge() {
        let mut mm = canon_model();
        // sigma_Y^2 = b' A^{-1} b makes the residual variance vanish.
        mm.sigma_y2 = 0.044571428571428571;
        let m = mm.validate().unwrap();
        let c = canon_constraint();
        for q in [-2.0, 0.5, 3.0, 10.0] {
            let sol = price_exact(&m, &c, Deal::new(q).unwrap()).unwrap();
            assert_eq!(sol.decomposition.capital, 0.0);
            let expected = q * (1.0 + 0.21142857142857143) / 1.02;
            assert_relative_eq!(sol.price_exact, expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn capital_term_is_even_in_q() {
        let mut mm = canon_model();
        mm.m_y = 0.0;
        mm.b = DVector::zeros(2);
        let m = mm.validate().unwrap();
        let c = canon_constraint();
        for q in [0.3, 0.9, 1.7] {
            let plus = price_exact(&m, &c, Deal::new(q).unwrap()).unwrap();
            let minus = price_exact(&m, &c, Deal::new(-q).unwrap()).unwrap();
            assert_eq!(plus.price_exact, minus.price_exact);
        }
    }

    #[test]
    fn approx_matches_frozen_reference_and_scales_quartically() {
        let m = canon();
        let c = canon_constraint();
        let sol = price_exact(&m, &c, Deal::new(0.1).unwrap()).unwrap();
        assert_relative_eq!(sol.price_approx, 0.12368360595341523, max_relative = 1e-13);
        assert_relative_eq!(
            price_approx(&m, &c, Deal::new(0.1).unwrap()).unwrap(),
            sol.price_approx,
            max_relative = 1e-15
        );

        let err = |q: f64| {
            let s = price_exact(&m, &c, Deal::new(q).unwrap()).unwrap();
            (s.price_exact - s.price_approx).abs()
        };
        let e1 = err(0.1);
        let e2 = err(0.2);
        assert_relative_eq!(e1, 3.0420861256036596e-6, max_relative = 1e-10);
        let ratio = e2 / e1;
        assert!((8.0..=32.0).contains(&ratio), "quartic ratio {ratio}");
    }

    #[test]
    fn approx_capital_charge_grows_with_nu() {
        let m = canon();
        let q = 0.4;
        let capital = |nu: f64| {
            let c = CapitalConstraint::new(10.0, nu).unwrap();
            let sol = price_exact(&m, &c, Deal::new(q).unwrap()).unwrap();
            // Reconstruct the approximate capital summand before discounting.
            sol.price_approx * 1.02 - (-q * (-1.0) + q * 0.21142857142857143)
        };
        let mut last = capital(0.5);
        for nu in [1.0, 1.5, 2.5, 3.5] {
            let cur = capital(nu);
            assert!(cur > last, "capital charge not increasing at nu={nu}");
            last = cur;
        }
    }

    #[test]
    fn raroc_report_matches_frozen_reference() {
        let m = canon();
        let c = canon_constraint();
        let rep = raroc_report(&m, &c);
        assert_relative_eq!(rep.hurdle, 0.42567404226968796, max_relative = 1e-13);
        assert_eq!(rep.raroc0, rep.hurdle);
        assert_relative_eq!(rep.expected_pnl, 4.2567404226968796, max_relative = 1e-13);
    }

    #[test]
    fn raroc_with_no_drift_is_the_funding_spread() {
        let mut mm = canon_model();
        mm.m1 = &mm.s0 * 1.02;
        let m = mm.validate().unwrap();
        let rep = raroc_report(&m, &canon_constraint());
        assert_relative_eq!(rep.hurdle, 0.02, max_relative = 1e-12);
    }

    #[test]
    fn raroc_excess_halves_when_nu_doubles() {
        let m = canon();
        let h = |nu: f64| raroc_report(&m, &CapitalConstraint::new(10.0, nu).unwrap()).hurdle - 0.02;
        assert_relative_eq!(h(5.0), 0.5 * h(2.5), max_relative = 1e-12);
    }

    #[test]
    fn simple_model_price_matches_hand_value() {
        let p = simple_model_price(8.0, 100.0, 0.4, 4.0, 0.0, 2.0, 1.0, 0.01, 0.01).unwrap();
        assert_relative_eq!(p, 0.15686274509803922, max_relative = 1e-14);
        assert_eq!(simple_model_price(8.0, 100.0, 0.4, 4.0, 0.0, 2.0, 0.0, 0.01, 0.01).unwrap(), 0.0);
        // With RAROC zero the price is the discounted expectation alone.
        let p = simple_model_price(0.0, 100.0, 0.0, 4.0, -1.0, 2.0, 0.7, 0.01, 0.01).unwrap();
        assert_relative_eq!(p, 0.7 / 1.02, max_relative = 1e-14);
        assert!(matches!(
            simple_model_price(8.0, 0.0, 0.4, 4.0, 0.0, 2.0, 1.0, 0.01, 0.01),
            Err(KvaError::ZeroVariance(_))
        ));
    }
}
