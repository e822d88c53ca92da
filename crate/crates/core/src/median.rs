//! Median-objective pricing: replacing `E[X+]` with the median `M[(X)+]`
//! collapses, under Gaussian returns, to the whole-bank linear problem, so
//! the median indifference price delegates to the exact linear price.
//!
//! The collapse rests on two facts asserted here explicitly: the median of a
//! Gaussian is its mean, and clipping at zero commutes with the median
//! whenever `P[X > 0] > 0`. Non-Gaussian extensions are out of scope and the
//! code refuses to guess at them.

use crate::error::{KvaError, Result};
use crate::linear::{self, LinearSolution};
use crate::model::{CapitalConstraint, Deal, ValidatedModel};

/// Median-objective price and the linear solution it reduces to.
#[derive(Debug, Clone)]
pub struct MedianResult {
    pub price: f64,
    /// The solvency assumption held at both the empty book and the priced
    /// deal; construction fails otherwise, so this is `true` on every value
    /// that escapes [`median_price`].
    pub solvency_ok: bool,
    pub delegate: LinearSolution,
}

/// `M[max(X, 0)] = max(M[X], 0)` for Gaussian `X`, where the median `M[X]`
/// is the mean.
///
/// Requires `P[X > 0] > 0`: a constant nonpositive distribution has positive
/// part pinned at zero and the clipping lemma's precondition fails.
pub fn median_of_positive_part(dist_mean: f64, dist_std: f64) -> Result<f64> {
    if !(dist_std >= 0.0) || !dist_mean.is_finite() {
        return Err(KvaError::InvalidParameter("median lemma needs finite mean and std >= 0"));
    }
    if dist_std == 0.0 && dist_mean <= 0.0 {
        return Err(KvaError::DegenerateDistribution { std: dist_std });
    }
    Ok(dist_mean.max(0.0))
}

/// Best achievable expected equity over the constraint set, in closed form:
/// `q m_Y - q b' A^{-1} mu + rho(q) sqrt(mu' A^{-1} mu) + (C0+P)(1+r+lambda)`.
///
/// Written without the multiplier so a driftless book (`mu = 0`) is handled
/// rather than rejected.
fn best_mean_equity(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q: f64,
    price: f64,
) -> Result<f64> {
    let radicand = linear::capital_radicand(model, constraint, q);
    if radicand <= 0.0 {
        return Err(KvaError::CapitalInfeasible {
            q,
            q_max: linear::max_feasible_q(model, constraint),
        });
    }
    Ok(q * model.market().m_y - q * model.b_a_inv_mu()
        + radicand.sqrt() * model.mu_a_inv_mu().sqrt()
        + (constraint.c0 + price) * model.accrual())
}

/// True when some admissible book keeps the bank solvent on average at time
/// one, which is the standing assumption behind the median collapse.
pub fn solvency_check(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q: f64,
    price: f64,
) -> Result<bool> {
    Ok(best_mean_equity(model, constraint, q, price)? > 0.0)
}

fn ensure_solvent(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q: f64,
    price: f64,
) -> Result<f64> {
    let value = best_mean_equity(model, constraint, q, price)?;
    if value <= 0.0 {
        return Err(KvaError::SolvencyAssumptionViolated { q, value });
    }
    Ok(value)
}

/// Indifference price under the median objective.
///
/// Checks solvency at the empty book and at the priced deal, then delegates
/// to the linear exact price: the equality of the two problems is structural,
/// so the returned price is the linear price bit for bit.
///
/// With a validated model the checks cannot actually fail: the empty book
/// earns `C0 (1+r+lambda) + (C0/nu) sqrt(mu' A^{-1} mu) > 0` and indifference
/// transports that value to the priced deal. They stay because they are the
/// assumption the collapse runs on, and they do fire on exogenous prices fed
/// through [`solvency_check`].
pub fn median_price(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    deal: Deal,
) -> Result<MedianResult> {
    ensure_solvent(model, constraint, 0.0, 0.0)?;
    let delegate = linear::price_exact(model, constraint, deal)?;
    let price = delegate.price_exact;
    ensure_solvent(model, constraint, deal.q, price)?;
    Ok(MedianResult { price, solvency_ok: true, delegate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_fixtures::{canon_constraint, canon_model};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Upper median; indistinguishable from any other median convention for
    /// the continuous samples used here.
    fn empirical_median(mut v: Vec<f64>) -> f64 {
        let mid = v.len() / 2;
        *v.select_nth_unstable_by(mid, f64::total_cmp).1
    }

    #[test]
    fn constants_and_clipping() {
        assert_eq!(median_of_positive_part(5.0, 0.0).unwrap(), 5.0);
        assert_eq!(median_of_positive_part(-3.0, 1.0).unwrap(), 0.0);
        assert_eq!(median_of_positive_part(2.0, 7.0).unwrap(), 2.0);
    }

    #[test]
    fn degenerate_distributions_are_refused() {
        assert!(matches!(
            median_of_positive_part(-1.0, 0.0),
            Err(KvaError::DegenerateDistribution { std }) if std == 0.0
        ));
        assert!(matches!(
            median_of_positive_part(0.0, 0.0),
            Err(KvaError::DegenerateDistribution { .. })
        ));
        assert!(median_of_positive_part(1.0, -0.5).is_err());
        assert!(median_of_positive_part(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn lemma_matches_the_empirical_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 20_000;
        for _ in 0..500 {
            let mean = rng.random_range(-3.0..3.0);
            let std = rng.random_range(0.1..5.0);
            let clipped: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (mean + std * z).max(0.0)
                })
                .collect();
            let emp = empirical_median(clipped);
            let lemma = median_of_positive_part(mean, std).unwrap();
            // Clipping is monotone, so the sampling error of the clipped
            // median is at most that of the raw one: 1/(2 f(m) sqrt(n)).
            let se = std * 1.2533141373155003 / (n as f64).sqrt();
            assert!(
                (emp - lemma).abs() <= 5.0 * se,
                "mean {mean} std {std}: empirical {emp} vs {lemma}"
            );
        }
    }

    #[test]
    fn solvency_holds_at_canon() {
        let m = canon_model().validate().unwrap();
        let c = canon_constraint();
        assert!(solvency_check(&m, &c, 0.0, 0.0).unwrap());
        // The closed-form best mean is the linear optimum value.
        let v = best_mean_equity(&m, &c, 0.0, 0.0).unwrap();
        assert!((v - 14.25674042269688).abs() < 1e-12);
    }

    #[test]
    fn driftless_book_with_negative_anchor_is_insolvent() {
        let mut mm = canon_model();
        mm.m1 = &mm.s0 * 1.02;
        let m = mm.validate().unwrap();
        let c = canon_constraint();
        assert!(!solvency_check(&m, &c, 0.0, -100.0).unwrap());
        assert!(matches!(
            ensure_solvent(&m, &c, 0.0, -100.0),
            Err(KvaError::SolvencyAssumptionViolated { q, value }) if q == 0.0 && value < 0.0
        ));
    }

    #[test]
    fn infeasible_size_propagates() {
        let m = canon_model().validate().unwrap();
        let c = canon_constraint();
        assert!(matches!(
            solvency_check(&m, &c, 5.0, 0.0),
            Err(KvaError::CapitalInfeasible { .. })
        ));
    }

    #[test]
    fn median_price_is_the_linear_price_bit_for_bit() {
        let m = canon_model().validate().unwrap();
        let c = canon_constraint();
        let deal = Deal::new(0.1).unwrap();
        let res = median_price(&m, &c, deal).unwrap();
        let lin = linear::price_exact(&m, &c, deal).unwrap();
        assert_eq!(res.price.to_bits(), lin.price_exact.to_bits());
        assert!((res.price - 0.12368664803954083).abs() < 1e-15);
        assert!(res.solvency_ok);

        assert_eq!(median_price(&m, &c, Deal::new(0.0).unwrap()).unwrap().price, 0.0);
    }

    #[test]
    fn indifference_transports_the_median_across_the_deal() {
        let m = canon_model().validate().unwrap();
        let c = canon_constraint();
        let deal = Deal::new(0.1).unwrap();
        let res = median_price(&m, &c, deal).unwrap();

        let batch = crate::montecarlo::sample(&m, 1_000_000, 77, false).unwrap();
        let theta0 = linear::optimal_theta(&m, &c, 0.0).unwrap();
        let ev0 = crate::model::EquityEvaluator::new(&m, &c, theta0, 0.0, 0.0).unwrap();
        let evq = crate::model::EquityEvaluator::new(
            &m,
            &c,
            res.delegate.theta_star.clone(),
            deal.q,
            res.price,
        )
        .unwrap();
        let med0 = empirical_median(
            (0..batch.n()).map(|i| ev0.value_raw(batch.s1_row(i), batch.y(i)).max(0.0)).collect(),
        );
        let medq = empirical_median(
            (0..batch.n()).map(|i| evq.value_raw(batch.s1_row(i), batch.y(i)).max(0.0)).collect(),
        );
        // Both books are Gaussian with sd C0/nu = 4; the median picks up
        // quantile noise 1.2533 * sd / sqrt(n) on each side.
        let se = 1.2533141373155003 * 4.0 / 1000.0;
        assert!(
            (medq - med0).abs() <= 4.0 * std::f64::consts::SQRT_2 * se,
            "medians {medq} vs {med0}"
        );
    }
}
