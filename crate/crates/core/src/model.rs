//! Market primitives: the joint Gaussian law of `(S1, Y)`, the capital
//! constraint, and the equity functional.
//!
//! Validation happens once, up front. Everything downstream works off a
//! [`ValidatedModel`] that caches the Cholesky factor of the joint covariance,
//! `A^{-1}`, the excess-return mean `mu = m1 - s0*(1+r+lambda)`, and the
//! residual variance `sigma_Y^2 - b' A^{-1} b` of the deal payoff after best
//! linear hedging.

use nalgebra::{DMatrix, DVector};

use crate::error::{KvaError, Result};

/// Relative pivot floor for the covariance factorization.
const PIVOT_REL_TOL: f64 = 1e-12;

/// One-period market with `d` risky assets and a single deal payoff `Y`.
///
/// `a` is the covariance of `S1`, `b` the covariance vector `Cov(S1, Y)`,
/// `sigma_y2 = Var[Y]` and `m_y = E[Y]`. Funding accrues at `r + lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub s0: DVector<f64>,
    pub m1: DVector<f64>,
    pub r: f64,
    pub lambda: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sigma_y2: f64,
    pub m_y: f64,
}

/// Expected-shortfall style capital budget: `C0 = nu * sqrt(Var[X])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapitalConstraint {
    pub c0: f64,
    pub nu: f64,
}

impl CapitalConstraint {
    pub fn new(c0: f64, nu: f64) -> Result<Self> {
        if !c0.is_finite() || !nu.is_finite() {
            return Err(KvaError::NonFinite("capital constraint"));
        }
        if c0 <= 0.0 {
            return Err(KvaError::InvalidParameter("c0 must be positive"));
        }
        if nu <= 0.0 {
            return Err(KvaError::InvalidParameter("nu must be positive"));
        }
        Ok(Self { c0, nu })
    }

    /// Capital radius in standard-deviation units, `C0 / nu`.
    pub fn radius(&self) -> f64 {
        self.c0 / self.nu
    }
}

/// Deal size. Sign convention: the bank receives `q*Y` at time 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deal {
    pub q: f64,
}

impl Deal {
    pub fn new(q: f64) -> Result<Self> {
        if !q.is_finite() {
            return Err(KvaError::NonFinite("deal size q"));
        }
        Ok(Self { q })
    }
}

impl MarketModel {
    pub fn d(&self) -> usize {
        self.s0.len()
    }

    /// Validates the model and caches the derived quantities.
    ///
    /// # Errors
    ///
    /// `DimensionMismatch` if the blocks disagree on `d`, `BadAccrual` if
    /// `1 + r + lambda <= 0`, `NotPositiveDefinite` if `a` is asymmetric or
    /// fails the pivoted factorization, `InconsistentCovariance` if the
    /// residual variance of `Y` is negative beyond tolerance.
    pub fn validate(self) -> Result<ValidatedModel> {
        let d = self.d();
        if d == 0 {
            return Err(KvaError::DimensionMismatch { expected: 1, actual: 0 });
        }
        for (len, _name) in [(self.m1.len(), "m1"), (self.b.len(), "b")] {
            if len != d {
                return Err(KvaError::DimensionMismatch { expected: d, actual: len });
            }
        }
        if self.a.nrows() != d || self.a.ncols() != d {
            return Err(KvaError::DimensionMismatch {
                expected: d,
                actual: self.a.nrows().max(self.a.ncols()),
            });
        }
        let finite = self.s0.iter().chain(self.m1.iter()).chain(self.b.iter()).all(|x| x.is_finite())
            && self.a.iter().all(|x| x.is_finite())
            && self.sigma_y2.is_finite()
            && self.m_y.is_finite()
            && self.r.is_finite()
            && self.lambda.is_finite();
        if !finite {
            return Err(KvaError::NonFinite("market model"));
        }
        if self.sigma_y2 < 0.0 {
            return Err(KvaError::InvalidParameter("sigma_y2 must be nonnegative"));
        }

        let accrual = 1.0 + self.r + self.lambda;
        if accrual <= 0.0 {
            return Err(KvaError::BadAccrual { accrual });
        }

        let max_diag = (0..d).map(|i| self.a[(i, i)]).fold(0.0_f64, f64::max);
        for i in 0..d {
            for j in 0..i {
                if (self.a[(i, j)] - self.a[(j, i)]).abs() > PIVOT_REL_TOL * max_diag.max(1.0) {
                    return Err(KvaError::NotPositiveDefinite(format!(
                        "A[{i},{j}] != A[{j},{i}]"
                    )));
                }
            }
        }

        let chol_a = cholesky_strict(&self.a, max_diag)?;

        // Last row of the joint factor: solve L w = b, then the residual
        // variance is the Schur complement sigma_y2 - w'w. A slightly negative
        // residual is rounding on a consistent input; anything worse is a
        // genuinely inconsistent covariance.
        let w = forward_solve(&chol_a, &self.b);
        let schur = self.sigma_y2 - w.dot(&w);
        let tol = PIVOT_REL_TOL * max_diag.max(self.sigma_y2).max(1.0);
        if schur < -tol {
            return Err(KvaError::InconsistentCovariance { residual: schur });
        }
        let residual_variance = schur.max(0.0);

        let mut chol_full = DMatrix::zeros(d + 1, d + 1);
        chol_full.view_mut((0, 0), (d, d)).copy_from(&chol_a);
        for j in 0..d {
            chol_full[(d, j)] = w[j];
        }
        chol_full[(d, d)] = residual_variance.sqrt();

        // A^{-1} from the factor; d stays small so this is cheap.
        let mut a_inv = DMatrix::identity(d, d);
        for k in 0..d {
            let col = forward_solve(&chol_a, &DVector::from_iterator(d, (0..d).map(|i| a_inv[(i, k)])));
            let col = backward_solve(&chol_a, &col);
            for i in 0..d {
                a_inv[(i, k)] = col[i];
            }
        }
        // Symmetrize away the last-bit asymmetry from the two triangular solves.
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (a_inv[(i, j)] + a_inv[(j, i)]);
                a_inv[(i, j)] = s;
                a_inv[(j, i)] = s;
            }
        }

        let mu = &self.m1 - &self.s0 * accrual;
        let a_inv_mu = &a_inv * &mu;
        let a_inv_b = &a_inv * &self.b;
        let mu_a_inv_mu = mu.dot(&a_inv_mu);
        let b_a_inv_b = self.b.dot(&a_inv_b);
        let b_a_inv_mu = self.b.dot(&a_inv_mu);

        Ok(ValidatedModel {
            market: self,
            accrual,
            mu,
            a_inv,
            a_inv_mu,
            a_inv_b,
            mu_a_inv_mu,
            b_a_inv_b,
            b_a_inv_mu,
            chol_a,
            chol_full,
            residual_variance,
        })
    }
}

/// Validated market with cached factorizations and quadratic forms.
#[derive(Debug, Clone)]
pub struct ValidatedModel {
    market: MarketModel,
    accrual: f64,
    mu: DVector<f64>,
    a_inv: DMatrix<f64>,
    a_inv_mu: DVector<f64>,
    a_inv_b: DVector<f64>,
    mu_a_inv_mu: f64,
    b_a_inv_b: f64,
    b_a_inv_mu: f64,
    chol_a: DMatrix<f64>,
    chol_full: DMatrix<f64>,
    residual_variance: f64,
}

impl ValidatedModel {
    pub fn market(&self) -> &MarketModel {
        &self.market
    }

    pub fn d(&self) -> usize {
        self.market.d()
    }

    /// `1 + r + lambda`.
    pub fn accrual(&self) -> f64 {
        self.accrual
    }

    /// Excess return over funded cost, `mu = m1 - s0*(1+r+lambda)`.
    pub fn excess_mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn a_inv_mu(&self) -> &DVector<f64> {
        &self.a_inv_mu
    }

    pub fn a_inv_b(&self) -> &DVector<f64> {
        &self.a_inv_b
    }

    pub fn mu_a_inv_mu(&self) -> f64 {
        self.mu_a_inv_mu
    }

    pub fn b_a_inv_b(&self) -> f64 {
        self.b_a_inv_b
    }

    pub fn b_a_inv_mu(&self) -> f64 {
        self.b_a_inv_mu
    }

    /// Lower-triangular factor of the `d x d` asset covariance.
    pub fn chol_a(&self) -> &DMatrix<f64> {
        &self.chol_a
    }

    /// Lower-triangular factor of the joint `(d+1) x (d+1)` covariance of
    /// `(S1, Y)`. Singular in the last pivot exactly when `Y` is perfectly
    /// hedgeable.
    pub fn chol_full(&self) -> &DMatrix<f64> {
        &self.chol_full
    }

    /// `Var[Y] - b' A^{-1} b`, the unhedgeable part of the deal payoff.
    pub fn residual_variance(&self) -> f64 {
        self.residual_variance
    }

    /// Variance of `X(theta, q)`, the quadratic the capital constraint pins.
    pub fn equity_variance(&self, theta: &DVector<f64>, q: f64) -> f64 {
        let at = &self.market.a * theta;
        theta.dot(&at) + 2.0 * q * theta.dot(&self.market.b) + q * q * self.market.sigma_y2
    }

    /// Mean of `X(theta, q)` at price `p`.
    pub fn equity_mean(&self, theta: &DVector<f64>, q: f64, c0: f64, p: f64) -> f64 {
        q * self.market.m_y + theta.dot(&self.mu) + (c0 + p) * self.accrual
    }
}

/// Equity functional `X` bound to a model, hedge, deal size and price.
///
/// The per-draw value is affine in the draw, so batch estimators fold the
/// constant part into one anchor and stream the dot products.
pub struct EquityEvaluator {
    theta: DVector<f64>,
    q: f64,
    /// `(c0 + price) * accrual - theta' s0 * accrual`, the draw-independent part.
    anchor: f64,
}

impl EquityEvaluator {
    pub fn new(
        model: &ValidatedModel,
        constraint: &CapitalConstraint,
        theta: DVector<f64>,
        q: f64,
        price: f64,
    ) -> Result<Self> {
        if theta.len() != model.d() {
            return Err(KvaError::DimensionMismatch { expected: model.d(), actual: theta.len() });
        }
        let anchor = (constraint.c0 + price) * model.accrual
            - theta.dot(&model.market.s0) * model.accrual;
        Ok(Self { theta, q, anchor })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `X = q*y + theta'(s1 - s0*(1+r+lambda)) + (c0+P)*(1+r+lambda)`.
    pub fn value(&self, s1: &[f64], y: f64) -> Result<f64> {
        if s1.len() != self.theta.len() {
            return Err(KvaError::DimensionMismatch { expected: self.theta.len(), actual: s1.len() });
        }
        Ok(self.value_raw(s1, y))
    }

    #[inline]
    pub(crate) fn value_raw(&self, s1: &[f64], y: f64) -> f64 {
        let mut dot = 0.0;
        for (t, s) in self.theta.iter().zip(s1) {
            dot += t * s;
        }
        dot + self.q * y + self.anchor
    }
}

/// Cholesky with the pivot rule `L[i,i] >= PIVOT_REL_TOL * max_diag`;
/// written out by hand so the rejection rule stays explicit.
fn cholesky_strict(a: &DMatrix<f64>, max_diag: f64) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let floor = PIVOT_REL_TOL * max_diag.max(1.0);
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        // NaN fails this comparison too, which is the rejection we want.
        if !(pivot > 0.0 && pivot.sqrt() >= floor) {
            return Err(KvaError::NotPositiveDefinite(format!("pivot {j} = {pivot:.3e}")));
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn forward_solve(l: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let d = rhs.len();
    let mut x = DVector::zeros(d);
    for i in 0..d {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

fn backward_solve(l: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let d = rhs.len();
    let mut x = DVector::zeros(d);
    for i in (0..d).rev() {
        let mut s = rhs[i];
        for k in (i + 1)..d {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}
