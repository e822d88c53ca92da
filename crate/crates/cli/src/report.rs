//! Report assembly: the JSON document a run emits and its CSV projection.
//!
//! Field order is fixed by the struct definitions, and floats are serialized
//! by serde_json's shortest-roundtrip formatter, so identical inputs yield
//! byte-identical documents. Wall-clock metadata is the only nondeterministic
//! part and is zeroed under `--deterministic`.

use serde::Serialize;

use crate::scenario::{Mode, ResolvedScenario};

#[derive(Debug, Serialize)]
pub struct Report {
    pub mode: Mode,
    pub scenario: ResolvedScenario,
    pub raroc: RarocBlock,
    pub results: Vec<QResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shareholder: Option<ShareholderBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_comparison: Option<OracleBlock>,
    pub metadata: Metadata,
}

#[derive(Debug, Serialize)]
pub struct RarocBlock {
    pub raroc0: f64,
    pub hurdle: f64,
    pub expected_pnl: f64,
}

/// One priced deal size.
///
/// The decomposition is pre-discount: `price * (1+r+lambda) = expectation +
/// capital + hedge`. Fields that a mode does not produce are omitted.
#[derive(Debug, Serialize)]
pub struct QResult {
    pub q: f64,
    pub price: f64,
    pub decomposition: Decomposition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survival_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survival_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solvency_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_price: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Decomposition {
    pub expectation: f64,
    pub capital: f64,
    pub hedge: f64,
}

/// Second-order expansion diagnostics from the shareholder pricer.
#[derive(Debug, Serialize)]
pub struct ShareholderBlock {
    pub a1: f64,
    pub a2: f64,
    pub a1_stderr: f64,
    pub a2_stderr: f64,
    pub chi0: f64,
    pub chi0_prime: f64,
    pub theta_prime: Vec<f64>,
    pub psi0: f64,
    pub psi0_stderr: f64,
    pub curvature: f64,
    pub value0: f64,
    pub value0_stderr: f64,
}

#[derive(Debug, Serialize)]
pub struct OracleBlock {
    pub max_abs_price_diff: f64,
}

#[derive(Debug, Serialize)]
pub struct Metadata {
    pub engine_version: String,
    /// Unix milliseconds at run start; 0 under --deterministic.
    pub timestamp_unix_ms: u64,
    /// Wall-clock milliseconds; 0 under --deterministic.
    pub duration_ms: u64,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut doc = serde_json::to_string_pretty(self).expect("report serialization");
        doc.push('\n');
        doc
    }

    /// CSV projection, one row per deal size. Missing fields are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("q,price,expectation_term,capital_term,hedge_term,chi_q,survival_prob,stderr\n");
        for row in &self.results {
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.q,
                row.price,
                row.decomposition.expectation,
                row.decomposition.capital,
                row.decomposition.hedge,
                cell(row.chi_q),
                cell(row.survival_prob),
                cell(row.price_stderr),
            ));
        }
        out
    }
}
