//! End-to-end prediction for a trained random field: binarize the
//! continuous evidence activations, condition the model on them, and answer
//! with marginals (exact / Gibbs / BP) or a MAP assignment.

use super::bp::{bp_marginals, BpConfig};
use super::gibbs::{gibbs_marginals, GibbsConfig};
use super::map::{map_assignment, MapConfig};
use super::{Diagnostics, InferenceMethod, MapResult, MarginalEstimates, PairwiseMrf};
use crate::error::{Error, Result};

/// Which query answers a prediction request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrfMethod {
    Exact,
    Gibbs,
    Bp,
    Map,
}

#[derive(Debug, Clone)]
pub struct DrfConfig {
    pub method: DrfMethod,
    /// Threshold for turning evidence activations into bits (`e > tau`).
    pub tau_e: f64,
    pub gibbs: GibbsConfig,
    pub bp: BpConfig,
    pub map: MapConfig,
}

impl Default for DrfConfig {
    fn default() -> Self {
        DrfConfig {
            method: DrfMethod::Gibbs,
            tau_e: 0.5,
            gibbs: GibbsConfig::default(),
            bp: BpConfig::default(),
            map: MapConfig::default(),
        }
    }
}

/// Either marginal probabilities or a single best assignment.
#[derive(Debug, Clone)]
pub enum DrfOutput {
    Marginals(MarginalEstimates),
    Map(MapResult),
}

impl DrfOutput {
    /// A per-label probability vector in both cases; a MAP answer is
    /// reported as degenerate 0/1 marginals.
    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            DrfOutput::Marginals(m) => m.p.clone(),
            DrfOutput::Map(m) => degenerate_marginals(m).p,
        }
    }
}

/// `1` where the activation exceeds `tau`, strictly.
pub fn binarize_evidence(evidence: &[f64], tau: f64) -> Vec<u8> {
    evidence.iter().map(|&e| (e > tau) as u8).collect()
}

/// Views a MAP assignment as 0/1 marginals so downstream consumers can stay
/// method-agnostic.
pub fn degenerate_marginals(map: &MapResult) -> MarginalEstimates {
    MarginalEstimates {
        p: map.assignment.iter().map(|&b| b as f64).collect(),
        method: InferenceMethod::Map,
        diagnostics: Diagnostics {
            iterations: 1,
            residual: 0.0,
            converged: map.exact,
            truncated_by_budget: false,
            elapsed_ms: 0.0,
        },
    }
}

/// Full prediction path for one example.
pub fn drf_predict(mrf: &PairwiseMrf, evidence: &[f64], cfg: &DrfConfig) -> Result<DrfOutput> {
    if evidence.len() != mrf.n_evidence() {
        return Err(Error::Dimension(format!(
            "{} evidence activations for a model with {} evidence nodes",
            evidence.len(),
            mrf.n_evidence()
        )));
    }
    let bits = binarize_evidence(evidence, cfg.tau_e);
    match cfg.method {
        DrfMethod::Exact => Ok(DrfOutput::Marginals(super::exact::label_marginals(mrf, &bits))),
        DrfMethod::Gibbs => Ok(DrfOutput::Marginals(gibbs_marginals(mrf, &bits, &cfg.gibbs)?)),
        DrfMethod::Bp => Ok(DrfOutput::Marginals(bp_marginals(mrf, &bits, &cfg.bp)?)),
        DrfMethod::Map => Ok(DrfOutput::Map(map_assignment(mrf, &bits, &cfg.map)?)),
    }
}
