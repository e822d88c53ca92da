//! Independent brute-force validation: dense direction search over the
//! constraint ellipsoid, bisection root-finding of indifference prices, and
//! the closed-form Gaussian boundary integral for `psi(0)`.
//!
//! Nothing here shares code paths with the production pricers; agreement
//! between the two is evidence, not tautology. The optimizer only ever
//! evaluates feasible points, so its value is a certified lower bound on the
//! supremum that tightens with grid density.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{KvaError, Result};
use crate::linear::capital_radicand;
use crate::model::{CapitalConstraint, ValidatedModel};

/// Knobs for the brute-force searches.
#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Directions on the unit sphere for `grid_optimize`.
    pub sphere_grid_count: usize,
    /// Half-width of the final bisection interval.
    pub bisect_tol: f64,
    /// Explicit price bracket; `None` selects the default
    /// `(-10|q| s, +10|q| s)` with `s = bracket_scale`, doubled until it
    /// straddles the root.
    pub bracket: Option<(f64, f64)>,
    /// Seed for the d >= 3 random direction set.
    pub seed: u64,
    /// Price scale of the deal payoff, `|m_Y| + sigma_Y`.
    pub bracket_scale: f64,
}

impl OracleConfig {
    pub fn for_model(model: &ValidatedModel) -> Self {
        Self {
            sphere_grid_count: 4096,
            bisect_tol: 1e-9,
            bracket: None,
            seed: 7021,
            bracket_scale: model.market().m_y.abs() + model.market().sigma_y2.sqrt(),
        }
    }
}

/// Unit directions: the two points for d = 1, equispaced angles for d = 2
/// (nested under doubling of the count), seeded Gaussian directions beyond
/// (nested by prefix).
fn directions(d: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match d {
        1 => vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
        2 => {
            let count = count.max(1);
            (0..count)
                .map(|i| {
                    let phi = std::f64::consts::TAU * i as f64 / count as f64;
                    DVector::from_vec(vec![phi.cos(), phi.sin()])
                })
                .collect()
        }
        _ => {
            use rand::SeedableRng;
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(count);
            while out.len() < count.max(1) {
                let draws: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let u = DVector::from_vec(draws);
                let n = u.norm();
                if n > 1e-12 {
                    out.push(u / n);
                }
            }
            out
        }
    }
}

/// Maximizes `objective` over the constraint set at deal size `q` by dense
/// direction search followed by deterministic pattern-search ascent on the
/// sphere.
///
/// Returns the best strategy and its value. The value never exceeds the true
/// supremum and is nondecreasing in the grid density on nested grids.
pub fn grid_optimize<F>(
    objective: F,
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q: f64,
    config: &OracleConfig,
) -> Result<(DVector<f64>, f64)>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let rho2 = capital_radicand(model, constraint, q);
    if rho2 <= 0.0 {
        return Err(KvaError::InfeasibleConstraint { q });
    }
    let rho = rho2.sqrt();
    let shift = model.a_inv_b() * (-q);
    let chol_t = model.chol_a().transpose();

    let theta_of = |u: &DVector<f64>| -> DVector<f64> {
        // theta = -q A^{-1} b + rho L^{-T} u saturates the constraint for |u| = 1.
        &shift + chol_t.solve_upper_triangular(u).expect("factor has positive pivots") * rho
    };
    let eval = |u: &DVector<f64>| objective(&theta_of(u));

    let grid = directions(model.d(), config.sphere_grid_count, config.seed);
    let values: Vec<f64> = grid.par_iter().map(&eval).collect();
    let (mut best_idx, mut best) = (0, values[0]);
    for (i, &v) in values.iter().enumerate() {
        if v > best {
            best = v;
            best_idx = i;
        }
    }

    let mut u = grid[best_idx].clone();
    let mut step = 0.25;
    let mut passes = 0;
    while step > 1e-10 && passes < 500 {
        passes += 1;
        let mut improved = false;
        for i in 0..u.len() {
            for s in [step, -step] {
                let mut cand = u.clone();
                cand[i] += s;
                let n = cand.norm();
                if n < 1e-12 {
                    continue;
                }
                cand /= n;
                let v = eval(&cand);
                if v > best {
                    best = v;
                    u = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    Ok((theta_of(&u), best))
}

/// Solves the indifference equation `value_fn(q, P) = value_fn(0, 0)` for the
/// price by bisection.
///
/// `value_fn` must be nondecreasing in `P`; that holds for every objective in
/// this crate since the price enters equity additively through
/// `(C0 + P)(1 + r + lambda)` with positive accrual.
pub fn indifference_root<F>(value_fn: F, q: f64, config: &OracleConfig) -> Result<f64>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    if q == 0.0 {
        return Ok(0.0);
    }
    let v0 = value_fn(0.0, 0.0)?;
    let gap = |p: f64| -> Result<f64> { Ok(value_fn(q, p)? - v0) };

    let (mut lo, mut hi) = match config.bracket {
        Some((lo, hi)) => {
            if !(lo < hi) || gap(lo)? > 0.0 || gap(hi)? < 0.0 {
                return Err(KvaError::BracketInvalid { lo, hi });
            }
            (lo, hi)
        }
        None => {
            let mut w = (10.0 * q.abs() * config.bracket_scale).max(1e-8);
            let mut doublings = 0;
            while gap(-w)? > 0.0 || gap(w)? < 0.0 {
                doublings += 1;
                if doublings > 60 {
                    return Err(KvaError::BracketInvalid { lo: -w, hi: w });
                }
                w *= 2.0;
            }
            (-w, w)
        }
    };

    let mut iters = 0;
    while (hi - lo) * 0.5 > config.bisect_tol {
        iters += 1;
        if iters > 200 {
            return Err(KvaError::ToleranceNotReached { iters: 200 });
        }
        let mid = 0.5 * (lo + hi);
        if gap(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Closed-form `psi(0)`: the default boundary `{X = 0}` is a hyperplane in
/// the Gaussian draw space, so the indicator-shift limit collapses to a
/// one-dimensional boundary integral
/// `f_X(0) * E[Y (Y + price0_slope (1+r+lambda)) | X = 0]`.
pub fn psi0_boundary_integral(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    theta_star: &DVector<f64>,
    price0_slope: f64,
) -> Result<f64> {
    if theta_star.len() != model.d() {
        return Err(KvaError::DimensionMismatch { expected: model.d(), actual: theta_star.len() });
    }
    let var_x = model.equity_variance(theta_star, 0.0);
    if var_x <= 0.0 {
        return Err(KvaError::DegenerateVariance);
    }
    let std_x = var_x.sqrt();
    let mean_x = model.equity_mean(theta_star, 0.0, constraint.c0, 0.0);

    let cov_yx = theta_star.dot(&model.market().b);
    let mean_cond = model.market().m_y - cov_yx * mean_x / var_x;
    let var_cond = (model.market().sigma_y2 - cov_yx * cov_yx / var_x).max(0.0);

    let z = mean_x / std_x;
    let density = (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * std_x);
    Ok(density
        * (var_cond + mean_cond * mean_cond + price0_slope * model.accrual() * mean_cond))
}
