//! Limited-liability pricing: sample-average optimization of `E[X+]` over the
//! capital ellipsoid and assembly of the second-order marginal price
//! `P(q) = a1 q + a2 q^2`.
//!
//! The first coefficient is
//! `a1 = (E[-1_{D^c} Y] + 2 chi(0) theta' b) / (P[D^c] (1+r+lambda))`
//! and the second
//! `a2 = -(psi(0) - 2 chi(0) sigma_Y^2 - 4 chi'(0) theta' b + c(0))
//!       / (2 P[D^c] (1+r+lambda))`,
//! where `D^c` is the survival event of the zero-deal book, `chi` the
//! constraint multiplier, `psi(0)` the boundary sensitivity and `c(0)` the
//! curvature correction from the strategy's own response to the deal.
//!
//! Multiplier normalization: the first-order condition is stated against the
//! plain quadratic `g1 = theta' A theta + 2 q theta' b + q^2 sigma_Y^2`, so
//! `chi` here matches the closed-form linear multiplier directly. The
//! constraint bookkeeping (`ObjectivePair::g`) carries the capital convention
//! `g = nu^2 g1 = C0^2`; rescaling `g` rescales `chi` and the `g`-Hessian
//! inversely, leaving every assembled price invariant (see the unit test).

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{KvaError, Result};
use crate::linear::{self, capital_radicand};
use crate::model::{CapitalConstraint, Deal, EquityEvaluator, ValidatedModel};
use crate::montecarlo::{self, chunk_bounds, chunk_stats, Estimate, SampleBatch};

const RESTARTS: usize = 20;
const MAX_ASCENT_ITERS: usize = 120;
const PG_REL_TOL: f64 = 1e-6;
const IDENTITY_REL_TOL: f64 = 1e-3;

/// Full output of the marginal-price pipeline at `q = 0`, plus the optimal
/// value at the requested deal size under the assembled quadratic price.
#[derive(Debug, Clone)]
pub struct ShareholderSolution {
    /// Optimal zero-deal strategy.
    pub theta_star: DVector<f64>,
    /// Optimal `E[X+]` at the deal size, priced at `a1 q + a2 q^2`.
    pub value: Estimate,
    /// Constraint multiplier at `q = 0`.
    pub chi0: f64,
    /// Price-slope-consistent derivative of the multiplier at `q = 0`.
    pub chi0_prime: f64,
    /// Strategy response `d theta*/dq` at `q = 0`.
    pub theta_prime: DVector<f64>,
    /// Boundary sensitivity estimate.
    pub psi0: Estimate,
    /// Curvature correction `c(0)`.
    pub curvature: f64,
    /// Survival probability of the zero-deal book.
    pub survival: Estimate,
    /// `(a1, a2)` with `P(q) = a1 q + a2 q^2`.
    pub price_coeffs: (f64, f64),
    /// First-order propagated sampling errors of `(a1, a2)`.
    pub coeff_stderr: (f64, f64),
}

/// The two sides of the constrained problem: the sampled objective `f` and
/// the exact constraint quadratic `g`.
pub struct ObjectivePair<'a> {
    model: &'a ValidatedModel,
    constraint: &'a CapitalConstraint,
    batch: &'a SampleBatch,
}

impl<'a> ObjectivePair<'a> {
    pub fn new(
        model: &'a ValidatedModel,
        constraint: &'a CapitalConstraint,
        batch: &'a SampleBatch,
    ) -> Self {
        Self { model, constraint, batch }
    }

    /// Sample-average `E[max(X, 0)]` on the fixed batch.
    pub fn f(&self, theta: &DVector<f64>, q: f64, price: f64) -> Result<Estimate> {
        let ev = EquityEvaluator::new(self.model, self.constraint, theta.clone(), q, price)?;
        montecarlo::positive_part_value(&ev, self.batch)
    }

    /// Capital-convention constraint value
    /// `g = nu^2 (theta' A theta + 2 q theta' b + q^2 sigma_Y^2)`;
    /// feasible strategies satisfy `g = C0^2`.
    pub fn g(&self, theta: &DVector<f64>, q: f64) -> f64 {
        self.constraint.nu * self.constraint.nu * self.model.equity_variance(theta, q)
    }
}

/// Contiguous draw range the ascent runs on: the full batch, or an aligned
/// prefix for cheap restart screening. Prefixes are multiples of the chunk
/// size, so antithetic pairing survives.
#[derive(Clone, Copy)]
struct DrawSlice<'a> {
    s1: &'a [f64],
    y: &'a [f64],
    d: usize,
    n: usize,
}

impl<'a> DrawSlice<'a> {
    fn full(batch: &'a SampleBatch) -> Self {
        Self { s1: batch.s1_flat(), y: batch.y_flat(), d: batch.d(), n: batch.n() }
    }

    fn prefix(batch: &'a SampleBatch, n: usize) -> Self {
        let n = n.min(batch.n());
        let d = batch.d();
        Self { s1: &batch.s1_flat()[..n * d], y: &batch.y_flat()[..n], d, n }
    }
}

/// Fused objective and pathwise gradient `E[1_{X>0} (S1 - S0 R)]`, as plain
/// per-chunk sums folded in chunk order: deterministic for any worker count.
/// `anchor` carries the whole draw-independent part, `(c0+P) R - theta' s0 R`.
/// The funding leg is constant on the survival set, so the hot loop
/// accumulates raw `S1` sums plus a survival count and the `-S0 R`
/// correction is applied once per chunk.
fn saa_value_grad(
    draws: &DrawSlice<'_>,
    th: &[f64],
    s0r: &[f64],
    q: f64,
    anchor: f64,
) -> (f64, DVector<f64>) {
    let d = draws.d;
    let sums: Vec<(f64, u64, Vec<f64>)> = chunk_bounds(draws.n)
        .par_iter()
        .map(|&(start, end)| {
            let s1 = &draws.s1[start * d..end * d];
            let y = &draws.y[start..end];
            let mut acc = 0.0;
            let mut alive = 0u64;
            let mut grad = vec![0.0; d];
            if d == 2 {
                let (t0, t1) = (th[0], th[1]);
                let (mut g0, mut g1) = (0.0, 0.0);
                for (pair, yv) in s1.chunks_exact(2).zip(y) {
                    let x = t0 * pair[0] + t1 * pair[1] + q * yv + anchor;
                    if x > 0.0 {
                        acc += x;
                        alive += 1;
                        g0 += pair[0];
                        g1 += pair[1];
                    }
                }
                grad[0] = g0;
                grad[1] = g1;
            } else {
                for (row, yv) in s1.chunks_exact(d).zip(y) {
                    let mut x = q * yv + anchor;
                    for k in 0..d {
                        x += th[k] * row[k];
                    }
                    if x > 0.0 {
                        acc += x;
                        alive += 1;
                        for k in 0..d {
                            grad[k] += row[k];
                        }
                    }
                }
            }
            for k in 0..d {
                grad[k] -= s0r[k] * alive as f64;
            }
            (acc, alive, grad)
        })
        .collect();
    let inv_n = 1.0 / draws.n as f64;
    let mut value = 0.0;
    let mut grad = DVector::zeros(d);
    for (v, _, g) in &sums {
        value += v;
        for k in 0..d {
            grad[k] += g[k];
        }
    }
    (value * inv_n, grad * inv_n)
}

/// Everything an ascent needs besides the draws: the sphere-to-ellipsoid map
/// and the objective constants.
struct SphereProblem<'m> {
    model: &'m ValidatedModel,
    shift: DVector<f64>,
    rho: f64,
    q: f64,
    cpr: f64,
    s0r: Vec<f64>,
}

impl SphereProblem<'_> {
    fn theta_of(&self, u: &DVector<f64>) -> DVector<f64> {
        let w = self
            .model
            .chol_a()
            .transpose()
            .solve_upper_triangular(u)
            .expect("positive pivots");
        &self.shift + w * self.rho
    }

    fn anchor_of(&self, theta: &DVector<f64>) -> f64 {
        self.cpr - theta.iter().zip(&self.s0r).map(|(t, s)| t * s).sum::<f64>()
    }

    fn pull_back(&self, grad_theta: &DVector<f64>) -> DVector<f64> {
        self.model.chol_a().solve_lower_triangular(grad_theta).expect("positive pivots") * self.rho
    }
}

/// Projected gradient ascent on the unit sphere with Armijo backtracking.
///
/// Each accepted step reuses the fused value-and-gradient pass of its own
/// line search, so one iteration normally costs one sweep of the draws.
/// Returns the final value, point and whether the projected gradient met
/// the `1e-6` relative tolerance.
fn ascend(
    problem: &SphereProblem<'_>,
    draws: &DrawSlice<'_>,
    u0: DVector<f64>,
    max_iters: usize,
) -> (f64, DVector<f64>, bool) {
    let mut u = u0;
    let fused = |u: &DVector<f64>| {
        let theta = problem.theta_of(u);
        let anchor = problem.anchor_of(&theta);
        saa_value_grad(draws, theta.as_slice(), &problem.s0r, problem.q, anchor)
    };
    let (mut value, mut grad_theta) = fused(&u);
    let mut step = 1.0;
    let mut converged = false;
    for _ in 0..max_iters {
        let grad_u = problem.pull_back(&grad_theta);
        let pg = &grad_u - &u * grad_u.dot(&u);
        let pg_norm = pg.norm();
        if pg_norm <= PG_REL_TOL * grad_u.norm() {
            converged = true;
            break;
        }

        let mut accepted = false;
        let mut tries = 0;
        while step > 1e-14 {
            let mut cand = &u + &pg * step;
            let n = cand.norm();
            if n > 1e-12 {
                cand /= n;
                let (cv, cg) = fused(&cand);
                if cv >= value + 1e-4 * step * pg_norm * pg_norm {
                    u = cand;
                    value = cv;
                    grad_theta = cg;
                    accepted = true;
                    if tries == 0 {
                        step *= 2.0;
                    }
                    break;
                }
            }
            step *= 0.5;
            tries += 1;
        }
        if !accepted {
            // Step underflow: the SAA surface is flat to noise here.
            converged = true;
            break;
        }
    }
    (value, u, converged)
}

/// Draws used to rank the seeded restarts before the full batch is spent on
/// the frontrunner. Four chunks: even, so antithetic pairs stay together.
const SCREEN_DRAWS: usize = 1 << 18;

/// Maximizes the sample-average `E[X+]` over the constraint ellipsoid at deal
/// size `q` and the given price.
///
/// The ellipsoid is the image of the unit sphere under
/// `theta(u) = -q A^{-1} b + rho L^{-T} u`, so feasibility is exact by
/// construction: ascent runs on `u` with the gradient pulled back through
/// `L^{-1}`. Twenty restarts probe the sphere: the warm start along
/// `A^{-1} mu` gets the full batch straight away, the nineteen seeded ones
/// are ranked on a fixed prefix of the draws and the winner is re-ascended
/// on everything. A result is only accepted once the projected gradient on
/// the full batch falls below `1e-6` of the full gradient.
pub fn optimize_theta(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q: f64,
    price: f64,
    batch: &SampleBatch,
) -> Result<(DVector<f64>, Estimate)> {
    let rho2 = capital_radicand(model, constraint, q);
    if rho2 <= 0.0 {
        return Err(KvaError::Infeasible { q });
    }
    let d = model.d();
    let problem = SphereProblem {
        model,
        shift: model.a_inv_b() * (-q),
        rho: rho2.sqrt(),
        q,
        cpr: (constraint.c0 + price) * model.accrual(),
        s0r: model.market().s0.iter().map(|s| s * model.accrual()).collect(),
    };

    // Warm start along the drift; the remaining starts are seeded directions.
    let warm = {
        let w = model
            .chol_a()
            .solve_lower_triangular(model.excess_mean())
            .expect("positive pivots");
        let n = w.norm();
        if n > 0.0 {
            w / n
        } else {
            let mut e = DVector::zeros(d);
            e[0] = 1.0;
            e
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(batch.seed() ^ 0x924a_55c3_da1e_7b11);

    let full = DrawSlice::full(batch);
    let screen = DrawSlice::prefix(batch, SCREEN_DRAWS);

    let mut candidates: Vec<(f64, DVector<f64>, bool)> = Vec::with_capacity(2);
    candidates.push(ascend(&problem, &full, warm.clone(), MAX_ASCENT_ITERS));

    let mut best_screened: Option<(f64, DVector<f64>)> = None;
    for _ in 1..RESTARTS {
        let start = {
            let draws: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let v = DVector::from_vec(draws);
            let n = v.norm();
            if n > 1e-12 {
                v / n
            } else {
                warm.clone()
            }
        };
        let (value, u, _) = ascend(&problem, &screen, start, MAX_ASCENT_ITERS);
        let better = best_screened.as_ref().is_none_or(|(bv, _)| value > *bv);
        if better {
            best_screened = Some((value, u));
        }
    }
    if let Some((_, u)) = best_screened {
        candidates.push(ascend(&problem, &full, u, MAX_ASCENT_ITERS));
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    for (value, u, converged) in candidates {
        if converged {
            let better = best.as_ref().is_none_or(|(bv, _)| value > *bv);
            if better {
                best = Some((value, u));
            }
        }
    }
    let (_, u) = best.ok_or(KvaError::MaxIterations)?;
    let theta_star = problem.theta_of(&u);
    let ev = EquityEvaluator::new(model, constraint, theta_star.clone(), q, price)?;
    let value = montecarlo::positive_part_value(&ev, batch)?;
    Ok((theta_star, value))
}

/// Gradient of the plain constraint quadratic, `2 A theta + 2 q b`.
fn grad_g1(model: &ValidatedModel, theta: &DVector<f64>, q: f64) -> DVector<f64> {
    &model.market().a * theta * 2.0 + &model.market().b * (2.0 * q)
}

fn multiplier_estimate(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q: f64,
    theta_star: &DVector<f64>,
    price: f64,
    batch: &SampleBatch,
) -> Result<Estimate> {
    let v = grad_g1(model, theta_star, q);
    let vv = v.dot(&v);
    if vv <= 0.0 {
        return Err(KvaError::ZeroGradient);
    }
    let ev = EquityEvaluator::new(model, constraint, theta_star.clone(), q, price)?;
    let s0r: Vec<f64> = model.market().s0.iter().map(|s| s * model.accrual()).collect();
    let proj: Vec<f64> = v.iter().map(|x| x / vv).collect();
    let stats = chunk_stats(batch, 1, |s1, y, out| {
        out[0] = if ev.value_raw(s1, y) > 0.0 {
            s1.iter().zip(&s0r).zip(&proj).map(|((s, r), p)| (s - r) * p).sum()
        } else {
            0.0
        };
    });
    Ok(stats[0].estimate())
}

/// Numerical constraint multiplier at the optimum: the least-squares solution
/// of the first-order condition `grad f = chi grad g1`, with `grad f`
/// estimated pathwise as `E[1_{X>0} (S1 - S0 (1+r+lambda))]` and the equity
/// evaluated at zero price.
pub fn multiplier_numeric(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q: f64,
    theta_star: &DVector<f64>,
    batch: &SampleBatch,
) -> Result<f64> {
    multiplier_estimate(model, constraint, q, theta_star, 0.0, batch).map(|e| e.value)
}

fn optimize_pair(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q0: f64,
    dq: f64,
    price_fn: &dyn Fn(f64) -> f64,
    batch: &SampleBatch,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (tp, _) = optimize_theta(model, constraint, q0 + dq, price_fn(q0 + dq), batch)?;
    let (tm, _) = optimize_theta(model, constraint, q0 - dq, price_fn(q0 - dq), batch)?;
    Ok((tp, tm))
}

fn identity_residual(model: &ValidatedModel, mid: &DVector<f64>, q0: f64, deriv: &DVector<f64>) -> f64 {
    let dg_dq = 2.0 * mid.dot(&model.market().b) + 2.0 * q0 * model.market().sigma_y2;
    let grad = grad_g1(model, mid, q0);
    let total = dg_dq + grad.dot(deriv);
    let scale = dg_dq.abs() + grad.norm() * deriv.norm();
    if scale > 0.0 {
        total.abs() / scale
    } else {
        0.0
    }
}

/// Central-difference strategy response `d theta*/dq` at `q0`, re-optimizing
/// at `q0 +- dq` on the same batch so the sampling error cancels.
///
/// The differentiated constraint
/// `dg1/dq + grad g1 . (d theta*/dq) = 0` is checked at the midpoint and must
/// hold within `1e-3` relative; a violation means the optimizer noise
/// overwhelms the chosen `dq`.
pub fn theta_derivative(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    q0: f64,
    price_fn: impl Fn(f64) -> f64,
    batch: &SampleBatch,
    dq: f64,
) -> Result<DVector<f64>> {
    if !(dq > 0.0) {
        return Err(KvaError::InvalidParameter("dq must be positive"));
    }
    let (tp, tm) = optimize_pair(model, constraint, q0, dq, &price_fn, batch)?;
    let deriv = (&tp - &tm) / (2.0 * dq);
    let mid = (&tp + &tm) * 0.5;
    let residual = identity_residual(model, &mid, q0, &deriv);
    if residual > IDENTITY_REL_TOL {
        return Err(KvaError::ConstraintIdentityViolated { residual, tol: IDENTITY_REL_TOL });
    }
    Ok(deriv)
}

/// Curvature correction
/// `c(0) = theta'^T (2 chi(0) A - Hf) theta'`,
/// with the objective Hessian evaluated analytically: the default boundary is
/// a hyperplane in draw space, so
/// `Hf = f_X(0) (A - (A theta)(A theta)'/var X + mbar mbar')` with
/// `mbar = mu - (A theta) z / sd X` and `z = E[X]/sd X`.
///
/// Finite-differencing the indicator-driven gradient twice would be noise
/// dominated; the closed form costs nothing and is exact under the model.
pub fn curvature_term(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    theta_star: &DVector<f64>,
    theta_prime: &DVector<f64>,
    chi0: f64,
) -> Result<f64> {
    let var_x = model.equity_variance(theta_star, 0.0);
    if var_x <= 0.0 {
        return Err(KvaError::DegenerateVariance);
    }
    let sd = var_x.sqrt();
    let z = model.equity_mean(theta_star, 0.0, constraint.c0, 0.0) / sd;
    let density = (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sd);

    let a_tp = &model.market().a * theta_prime;
    let quad_a = theta_prime.dot(&a_tp);
    let a_ts = &model.market().a * theta_star;
    let mbar = model.excess_mean() - &a_ts * (z / sd);
    let hf_quad = density
        * (quad_a - {
            let c = a_ts.dot(theta_prime);
            c * c / var_x
        } + {
            let c = mbar.dot(theta_prime);
            c * c
        });
    Ok(2.0 * chi0 * quad_a - hf_quad)
}

/// Survival and payoff expectations of the base book in one pass.
fn base_expectations(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    theta: &DVector<f64>,
    batch: &SampleBatch,
) -> Result<(Estimate, Estimate)> {
    let ev = EquityEvaluator::new(model, constraint, theta.clone(), 0.0, 0.0)?;
    let stats = chunk_stats(batch, 2, |s1, y, out| {
        let alive = ev.value_raw(s1, y) > 0.0;
        out[0] = if alive { 1.0 } else { 0.0 };
        out[1] = if alive { -y } else { 0.0 };
    });
    Ok((stats[0].estimate(), stats[1].estimate()))
}

/// CRN central difference of the multiplier across `q = +-dq`, evaluated draw
/// by draw so the standard error reflects the differenced estimator.
fn chi_prime_estimate(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    dq: f64,
    slope: f64,
    tp: &DVector<f64>,
    tm: &DVector<f64>,
    batch: &SampleBatch,
) -> Result<Estimate> {
    let vp = grad_g1(model, tp, dq);
    let vm = grad_g1(model, tm, -dq);
    let (vpvp, vmvm) = (vp.dot(&vp), vm.dot(&vm));
    if vpvp <= 0.0 || vmvm <= 0.0 {
        return Err(KvaError::ZeroGradient);
    }
    let evp = EquityEvaluator::new(model, constraint, tp.clone(), dq, slope * dq)?;
    let evm = EquityEvaluator::new(model, constraint, tm.clone(), -dq, -slope * dq)?;
    let s0r: Vec<f64> = model.market().s0.iter().map(|s| s * model.accrual()).collect();
    let pp: Vec<f64> = vp.iter().map(|x| x / vpvp).collect();
    let pm: Vec<f64> = vm.iter().map(|x| x / vmvm).collect();
    let inv2dq = 0.5 / dq;
    let stats = chunk_stats(batch, 1, |s1, y, out| {
        let cp: f64 = if evp.value_raw(s1, y) > 0.0 {
            s1.iter().zip(&s0r).zip(&pp).map(|((s, r), p)| (s - r) * p).sum()
        } else {
            0.0
        };
        let cm: f64 = if evm.value_raw(s1, y) > 0.0 {
            s1.iter().zip(&s0r).zip(&pm).map(|((s, r), p)| (s - r) * p).sum()
        } else {
            0.0
        };
        out[0] = (cp - cm) * inv2dq;
    });
    Ok(stats[0].estimate())
}

/// Runs the full marginal-price pipeline and evaluates the optimum at the
/// requested deal size under the assembled quadratic price.
///
/// The derivative step size starts at `0.01 (C0/nu) / sigma_Y` and is halved
/// (up to four times) until the constraint-derivative identity check passes.
pub fn marginal_price(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    deal: Deal,
    batch: &SampleBatch,
    h_grid: &[f64],
) -> Result<ShareholderSolution> {
    let accrual = model.accrual();
    let (theta0, value0) = optimize_theta(model, constraint, 0.0, 0.0, batch)?;
    let (survival, neg_y) = base_expectations(model, constraint, &theta0, batch)?;
    if survival.value <= 0.0 {
        return Err(KvaError::InvalidParameter("base book defaults on every draw"));
    }
    let chi0 = multiplier_estimate(model, constraint, 0.0, &theta0, 0.0, batch)?;
    let tb = theta0.dot(&model.market().b);
    let denom1 = survival.value * accrual;
    let a1 = (neg_y.value + 2.0 * chi0.value * tb) / denom1;
    let se_a1 = (neg_y.stderr + 2.0 * tb.abs() * chi0.stderr) / denom1
        + a1.abs() * survival.stderr / survival.value;

    let sigma_y = model.market().sigma_y2.sqrt();
    let mut dq = if sigma_y > 0.0 {
        0.01 * constraint.radius() / sigma_y
    } else {
        0.01 * constraint.radius()
    };
    let price_fn = |q: f64| a1 * q;
    let mut pair = None;
    for attempt in 0..5 {
        let (tp, tm) = optimize_pair(model, constraint, 0.0, dq, &price_fn, batch)?;
        let deriv = (&tp - &tm) / (2.0 * dq);
        let mid = (&tp + &tm) * 0.5;
        let residual = identity_residual(model, &mid, 0.0, &deriv);
        if residual <= IDENTITY_REL_TOL {
            pair = Some((tp, tm, deriv));
            break;
        }
        if attempt == 4 {
            return Err(KvaError::ConstraintIdentityViolated { residual, tol: IDENTITY_REL_TOL });
        }
        dq *= 0.5;
    }
    let (tp, tm, theta_prime) = pair.expect("set or returned above");

    let chi_prime = chi_prime_estimate(model, constraint, dq, a1, &tp, &tm, batch)?;
    let psi0 = montecarlo::estimate_psi0(model, constraint, &theta0, a1, batch, h_grid)?;
    let curvature = curvature_term(model, constraint, &theta0, &theta_prime, chi0.value)?;

    let sigma_y2 = model.market().sigma_y2;
    let bracket =
        psi0.value - 2.0 * chi0.value * sigma_y2 - 4.0 * chi_prime.value * tb + curvature;
    let a2 = -0.5 * bracket / denom1;
    let se_a2 = 0.5
        * (psi0.stderr + 2.0 * sigma_y2 * chi0.stderr + 4.0 * tb.abs() * chi_prime.stderr)
        / denom1
        + a2.abs() * survival.stderr / survival.value;

    let q = deal.q;
    let value = if q == 0.0 {
        value0
    } else {
        optimize_theta(model, constraint, q, a1 * q + a2 * q * q, batch)?.1
    };

    Ok(ShareholderSolution {
        theta_star: theta0,
        value,
        chi0: chi0.value,
        chi0_prime: chi_prime.value,
        theta_prime,
        psi0,
        curvature,
        survival,
        price_coeffs: (a1, a2),
        coeff_stderr: (se_a1, se_a2),
    })
}

/// Comparison of the numeric pipeline against the closed-form reduction that
/// holds when default is improbable.
#[derive(Debug, Clone, Copy)]
pub struct ReductionReport {
    pub chi0_rel_err: f64,
    pub chi0_prime_abs_err: f64,
    pub theta_rel_err: f64,
    pub curvature_rel_err: f64,
    pub a1_rel_err: f64,
    pub a2_rel_err: f64,
    /// Estimated default probability of the base book (zero in bypass mode).
    pub default_probability: f64,
    /// True when closed forms were substituted for the optimizer, which
    /// checks the assembly algebra alone.
    pub exact_bypass: bool,
}

/// Verifies `chi(0)`, `chi'(0) = 0`, `theta*(0)`, `c(0)` and the price
/// coefficients against their closed-form counterparts:
/// `a1 = (-m_Y + b' A^{-1} mu)/(1+r+lambda)`,
/// `a2 = chi(0) (sigma_Y^2 - b' A^{-1} b)/(1+r+lambda)`,
/// `c(0) = 2 chi(0) b' A^{-1} b`.
///
/// With `exact_bypass` the closed-form strategy replaces the optimizer and no
/// sampling happens, so any error beyond rounding indicates an assembly bug;
/// otherwise the full pipeline runs on `batch`.
pub fn linear_reduction_check(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    batch: Option<&SampleBatch>,
    h_grid: &[f64],
    exact_bypass: bool,
) -> Result<ReductionReport> {
    let accrual = model.accrual();
    let chi0_lin = linear::multiplier(model, constraint, 0.0)?;
    let theta_lin = linear::optimal_theta(model, constraint, 0.0)?;
    let curv_lin = 2.0 * chi0_lin * model.b_a_inv_b();
    let a1_lin = (-model.market().m_y + model.b_a_inv_mu()) / accrual;
    let a2_lin = chi0_lin * model.residual_variance() / accrual;

    if exact_bypass {
        // No-default limit in closed form: survival 1, psi(0) = 0,
        // theta' = -A^{-1} b, chi'(0) = 0.
        let theta_prime = model.a_inv_b() * (-1.0);
        let tb = theta_lin.dot(&model.market().b);
        let curv = 2.0 * chi0_lin * theta_prime.dot(&(&model.market().a * &theta_prime));
        let a1 = (-model.market().m_y + 2.0 * chi0_lin * tb) / accrual;
        let a2 = -0.5 * (-2.0 * chi0_lin * model.market().sigma_y2 + curv) / accrual;
        return Ok(ReductionReport {
            chi0_rel_err: 0.0,
            chi0_prime_abs_err: 0.0,
            theta_rel_err: 0.0,
            curvature_rel_err: rel_err(curv, curv_lin),
            a1_rel_err: rel_err(a1, a1_lin),
            a2_rel_err: rel_err(a2, a2_lin),
            default_probability: 0.0,
            exact_bypass: true,
        });
    }

    let batch = batch
        .ok_or(KvaError::InvalidParameter("a batch is required unless exact_bypass is set"))?;
    let sol = marginal_price(model, constraint, Deal::new(0.0)?, batch, h_grid)?;
    Ok(ReductionReport {
        chi0_rel_err: rel_err(sol.chi0, chi0_lin),
        chi0_prime_abs_err: sol.chi0_prime.abs(),
        theta_rel_err: (&sol.theta_star - &theta_lin).norm() / theta_lin.norm(),
        curvature_rel_err: rel_err(sol.curvature, curv_lin),
        a1_rel_err: rel_err(sol.price_coeffs.0, a1_lin),
        a2_rel_err: rel_err(sol.price_coeffs.1, a2_lin),
        default_probability: 1.0 - sol.survival.value,
        exact_bypass: false,
    })
}

fn rel_err(x: f64, reference: f64) -> f64 {
    (x - reference).abs() / reference.abs().max(f64::MIN_POSITIVE)
}
