//! Scenario schema: the JSON contract for a pricing run.
//!
//! A scenario carries four blocks: the market model, the capital constraint,
//! the deal, and optional engine settings. Unknown keys are rejected at every
//! level so fixture drift fails loudly. `resolve` fills engine defaults and
//! applies command-line overrides, returning both the validated core types
//! and the fully resolved echo that the report embeds for auditability.

use clap::ValueEnum;
use kva_core::{CapitalConstraint, KvaError, MarketModel, ValidatedModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Linear,
    Shareholder,
    Median,
    Simple,
    Compare,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub spec_version: u32,
    pub model: ModelBlock,
    pub constraint: ConstraintBlock,
    pub deal: DealBlock,
    #[serde(default)]
    pub engine: EngineBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub s0: Vec<f64>,
    pub m1: Vec<f64>,
    pub r: f64,
    pub lambda: f64,
    /// Asset covariance as row-major nested arrays.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub sigma_y2: f64,
    pub m_y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintBlock {
    pub c0: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DealBlock {
    pub q: f64,
    /// Extra deal sizes to price in the same run; defaults to `[q]`.
    #[serde(default)]
    pub q_grid: Option<Vec<f64>>,
}

/// Engine settings, all optional in the input file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineBlock {
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub antithetic: Option<bool>,
    pub h_grid: Option<Vec<f64>>,
    pub bisect_tol: Option<f64>,
    pub mode: Option<Mode>,
}

/// Scenario with every default filled; this is what the report echoes.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedScenario {
    pub spec_version: u32,
    pub model: ModelBlock,
    pub constraint: ConstraintBlock,
    pub deal: ResolvedDeal,
    pub engine: ResolvedEngine,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedDeal {
    pub q: f64,
    pub q_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedEngine {
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub h_grid: Vec<f64>,
    pub bisect_tol: f64,
    pub mode: Mode,
}

/// Command-line overrides applied on top of the scenario's engine block.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
}

/// A run-ready scenario: validated core types plus the resolved echo.
pub struct Resolved {
    pub model: ValidatedModel,
    pub constraint: CapitalConstraint,
    pub engine: ResolvedEngine,
    pub echo: ResolvedScenario,
}

impl Scenario {
    pub fn resolve(&self, over: &Overrides) -> Result<Resolved, KvaError> {
        if self.spec_version != SPEC_VERSION {
            return Err(KvaError::InvalidParameter("unsupported spec_version"));
        }
        let model = self.model.build()?;
        let constraint = CapitalConstraint::new(self.constraint.c0, self.constraint.nu)?;

        let q_grid = match &self.deal.q_grid {
            Some(grid) if !grid.is_empty() => grid.clone(),
            Some(_) => return Err(KvaError::InvalidParameter("q_grid must not be empty")),
            None => vec![self.deal.q],
        };
        if q_grid.iter().any(|q| !q.is_finite()) {
            return Err(KvaError::NonFinite("deal size q"));
        }

        // Default finite-difference widths scale with the default boundary
        // width: the equity stddev (C0/nu) in units of the deal stddev.
        let sigma_y = self.model.sigma_y2.sqrt();
        let h_scale =
            if sigma_y > 0.0 { constraint.radius() / sigma_y } else { constraint.radius() };
        let engine = ResolvedEngine {
            n_paths: over.paths.or(self.engine.n_paths).unwrap_or(1_000_000),
            seed: over.seed.or(self.engine.seed).unwrap_or(42),
            antithetic: self.engine.antithetic.unwrap_or(true),
            h_grid: self
                .engine
                .h_grid
                .clone()
                .unwrap_or_else(|| vec![0.1 * h_scale, 0.05 * h_scale, 0.025 * h_scale]),
            bisect_tol: self.engine.bisect_tol.unwrap_or(1e-9),
            mode: over.mode.or(self.engine.mode).unwrap_or(Mode::Linear),
        };
        if engine.n_paths == 0 {
            return Err(KvaError::InvalidParameter("n_paths must be positive"));
        }
        if engine.h_grid.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            return Err(KvaError::InvalidParameter("h_grid entries must be positive"));
        }
        if !engine.bisect_tol.is_finite() || engine.bisect_tol <= 0.0 {
            return Err(KvaError::InvalidParameter("bisect_tol must be positive"));
        }

        let echo = ResolvedScenario {
            spec_version: self.spec_version,
            model: self.model.clone(),
            constraint: self.constraint.clone(),
            deal: ResolvedDeal { q: self.deal.q, q_grid },
            engine: engine.clone(),
        };
        Ok(Resolved { model, constraint, engine, echo })
    }
}

impl ModelBlock {
    fn build(&self) -> Result<ValidatedModel, KvaError> {
        let d = self.s0.len();
        if self.a.len() != d || self.a.iter().any(|row| row.len() != d) {
            return Err(KvaError::DimensionMismatch {
                expected: d,
                actual: self.a.iter().map(|row| row.len()).chain([self.a.len()]).min().unwrap_or(0),
            });
        }
        let flat: Vec<f64> = self.a.iter().flatten().copied().collect();
        MarketModel {
            s0: DVector::from_vec(self.s0.clone()),
            m1: DVector::from_vec(self.m1.clone()),
            r: self.r,
            lambda: self.lambda,
            a: DMatrix::from_row_slice(d, d, &flat),
            b: DVector::from_vec(self.b.clone()),
            sigma_y2: self.sigma_y2,
            m_y: self.m_y,
        }
        .validate()
    }
}
