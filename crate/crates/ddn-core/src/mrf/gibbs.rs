//! Gibbs sampling for the random field. Evidence nodes are clamped to their
//! observed bits; label nodes are resampled one at a time in fixed index
//! order (the dependency-network sampler in [`crate::ddn`] is the one that
//! permutes its order — the two chains are deliberately separate code).
//! Marginals are the empirical mean of the end-of-sweep states after
//! burn-in.

use super::{Diagnostics, InferenceMethod, MarginalEstimates, PairwiseMrf};
use crate::error::{Error, Result};
use crate::rng::Rng;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct GibbsConfig {
    /// Post-burn-in sweeps; each contributes one state to the average.
    pub n_samples: usize,
    pub burn_in: usize,
    /// Optional wall-clock cap, checked once per sweep. At least one
    /// post-burn-in sweep is always taken so an estimate exists; a run that
    /// stops early says so in its diagnostics.
    pub time_budget: Option<Duration>,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_samples: 5000,
            burn_in: 500,
            time_budget: None,
            seed: 0,
        }
    }
}

/// Estimates `P(x_j = 1 | e)` for every label by Gibbs sampling.
pub fn gibbs_marginals(
    mrf: &PairwiseMrf,
    evidence: &[u8],
    cfg: &GibbsConfig,
) -> Result<MarginalEstimates> {
    if evidence.len() != mrf.n_evidence() {
        return Err(Error::Dimension(format!(
            "{} evidence bits for a model with {} evidence nodes",
            evidence.len(),
            mrf.n_evidence()
        )));
    }
    if cfg.n_samples == 0 {
        return Err(Error::Validation("n_samples must be >= 1".into()));
    }
    let n = mrf.n_labels();
    let inc = mrf.incidence();
    let mut rng = Rng::stream(cfg.seed, "mrf-gibbs");
    let start = Instant::now();

    // Full node vector: labels randomized, evidence clamped for good.
    let mut state: Vec<u8> = Vec::with_capacity(mrf.total_nodes());
    for _ in 0..n {
        state.push(rng.bernoulli(0.5) as u8);
    }
    state.extend_from_slice(evidence);

    let mut counts = vec![0u64; n];
    let mut kept = 0usize;
    let mut sweeps = 0usize;
    let mut truncated = false;
    let total_sweeps = cfg.burn_in + cfg.n_samples;

    while sweeps < total_sweeps {
        // Budget check between sweeps.
        if let Some(budget) = cfg.time_budget {
            if start.elapsed() > budget {
                truncated = true;
                break;
            }
        }
        for j in 0..n {
            let p1 = mrf.conditional_p1(j, &state, &inc);
            state[j] = rng.bernoulli(p1) as u8;
        }
        sweeps += 1;
        if sweeps > cfg.burn_in {
            for (c, &s) in counts.iter_mut().zip(state.iter().take(n)) {
                *c += s as u64;
            }
            kept += 1;
        }
    }

    // If the budget expired inside burn-in, force one kept sweep.
    if kept == 0 {
        for j in 0..n {
            let p1 = mrf.conditional_p1(j, &state, &inc);
            state[j] = rng.bernoulli(p1) as u8;
        }
        sweeps += 1;
        for (c, &s) in counts.iter_mut().zip(state.iter().take(n)) {
            *c += s as u64;
        }
        kept = 1;
        truncated = true;
    }

    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / kept as f64).collect();
    Ok(MarginalEstimates {
        p,
        method: InferenceMethod::Gibbs,
        diagnostics: Diagnostics {
            iterations: sweeps,
            residual: 0.0,
            converged: !truncated,
            truncated_by_budget: truncated,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}
