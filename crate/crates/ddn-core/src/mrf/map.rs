//! MAP (most probable assignment) queries.
//!
//! Exact mode is depth-first branch-and-bound over the labels in index
//! order. The admissible bound at a partial assignment is the score of all
//! *determined* features plus `max(w, 0)` for every feature that could
//! still fire — a conjunction with an assigned-0 endpoint counts as
//! determined 0 even if its other endpoint is free. Ties resolve to the
//! first optimum found (branch order: 1 before 0), which is deterministic.
//!
//! ICM mode is coordinate ascent from random restarts — no optimality
//! guarantee, any model size, anytime under a wall-clock budget.

use super::{MapResult, PairwiseMrf, ReducedModel};
use crate::error::{Error, Result};
use crate::rng::Rng;
use std::time::{Duration, Instant};

/// Largest label count branch-and-bound will accept.
pub const MAX_EXACT_MAP_LABELS: usize = 25;

#[derive(Debug, Clone)]
pub struct MapConfig {
    pub mode: MapMode,
    /// Optional wall-clock cap. Branch-and-bound returns its incumbent with
    /// `exact = false` when the budget trips; ICM stops restarting.
    pub time_budget: Option<Duration>,
    /// Random restarts for ICM (ignored by exact mode).
    pub restarts: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapMode {
    Exact,
    Icm,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            mode: MapMode::Exact,
            time_budget: None,
            restarts: 20,
            seed: 0,
        }
    }
}

/// Finds a MAP label assignment given the evidence.
pub fn map_assignment(mrf: &PairwiseMrf, evidence: &[u8], cfg: &MapConfig) -> Result<MapResult> {
    if evidence.len() != mrf.n_evidence() {
        return Err(Error::Dimension(format!(
            "{} evidence bits for a model with {} evidence nodes",
            evidence.len(),
            mrf.n_evidence()
        )));
    }
    let red = mrf.reduce(evidence);
    match cfg.mode {
        MapMode::Exact => {
            if red.n > MAX_EXACT_MAP_LABELS {
                return Err(Error::Validation(format!(
                    "exact MAP limited to {MAX_EXACT_MAP_LABELS} labels, model has {}; use ICM",
                    red.n
                )));
            }
            Ok(branch_and_bound(&red, cfg.time_budget))
        }
        MapMode::Icm => {
            if cfg.restarts == 0 {
                return Err(Error::Validation("ICM needs at least one restart".into()));
            }
            Ok(icm(&red, cfg))
        }
    }
}

struct BnB<'a> {
    red: &'a ReducedModel,
    /// Pairs incident to each variable: `(other, w, pair_index)`.
    incident: Vec<Vec<(usize, f64)>>,
    assignment: Vec<u8>,
    best: Vec<u8>,
    best_score: f64,
    deadline: Option<Instant>,
    nodes: u64,
    truncated: bool,
}

fn branch_and_bound(red: &ReducedModel, budget: Option<Duration>) -> MapResult {
    let n = red.n;
    let mut incident: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, w) in &red.pairs {
        incident[a].push((b, w));
        incident[b].push((a, w));
    }
    // Root bound slack: every feature could still fire at its best.
    let slack: f64 = red.unary.iter().map(|u| u.max(0.0)).sum::<f64>()
        + red.pairs.iter().map(|&(_, _, w)| w.max(0.0)).sum::<f64>();
    let mut search = BnB {
        red,
        incident,
        assignment: vec![0; n],
        best: vec![0; n],
        best_score: f64::NEG_INFINITY,
        deadline: budget.map(|b| Instant::now() + b),
        nodes: 0,
        truncated: false,
    };
    search.descend(0, red.constant, slack);
    MapResult {
        assignment: search.best,
        score: search.best_score,
        exact: !search.truncated,
    }
}

impl BnB<'_> {
    /// `determined`: score of all features whose value is already fixed
    /// (constant included). `slack`: sum of `max(w, 0)` over undetermined
    /// features. `determined + slack` upper-bounds every completion.
    fn descend(&mut self, depth: usize, determined: f64, slack: f64) {
        if self.truncated {
            return;
        }
        self.nodes += 1;
        if self.nodes % 4096 == 0 {
            if let Some(deadline) = self.deadline {
                if Instant::now() > deadline {
                    self.truncated = true;
                    return;
                }
            }
        }
        if depth == self.red.n {
            if determined > self.best_score {
                // Recompute from scratch so the reported score is exactly
                // the feature sum of the reported assignment (the running
                // total could drift by accumulation order).
                let exact_score = self.red.score(&self.assignment);
                if exact_score > self.best_score {
                    self.best_score = exact_score;
                    self.best = self.assignment.clone();
                }
            }
            return;
        }
        // Prune: nothing below can strictly beat the incumbent.
        if determined + slack <= self.best_score {
            return;
        }
        for value in [1u8, 0u8] {
            self.assignment[depth] = value;
            let mut det = determined;
            let mut slk = slack;
            // The unary on `depth` becomes determined.
            slk -= self.red.unary[depth].max(0.0);
            det += self.red.unary[depth] * value as f64;
            // Pairs (depth, other): determined when the other endpoint is
            // already assigned, or killed outright when value = 0.
            for &(other, w) in &self.incident[depth] {
                if other < depth {
                    // Other endpoint assigned. If it is 0 the pair was
                    // already counted as determined-0 at that point.
                    if self.assignment[other] == 1 {
                        slk -= w.max(0.0);
                        det += w * value as f64;
                    }
                } else if value == 0 {
                    // Free endpoint, but the conjunction can no longer fire.
                    slk -= w.max(0.0);
                }
            }
            self.descend(depth + 1, det, slk);
        }
        self.assignment[depth] = 0;
    }
}

fn icm(red: &ReducedModel, cfg: &MapConfig) -> MapResult {
    let n = red.n;
    let mut incident: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, w) in &red.pairs {
        incident[a].push((b, w));
        incident[b].push((a, w));
    }
    let mut rng = Rng::stream(cfg.seed, "mrf-icm");
    let start = Instant::now();
    let mut best: Vec<u8> = vec![0; n];
    let mut best_score = f64::NEG_INFINITY;
    for _restart in 0..cfg.restarts {
        let mut state: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.5) as u8).collect();
        // Coordinate ascent to a fixed point: x_j = 1 iff its local field
        // is strictly positive.
        loop {
            let mut changed = false;
            for j in 0..n {
                let mut field = red.unary[j];
                for &(other, w) in &incident[j] {
                    field += w * state[other] as f64;
                }
                let want = (field > 0.0) as u8;
                if state[j] != want {
                    state[j] = want;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let score = red.score(&state);
        if score > best_score {
            best_score = score;
            best = state;
        }
        if let Some(budget) = cfg.time_budget {
            if start.elapsed() > budget {
                break;
            }
        }
    }
    MapResult {
        assignment: best,
        score: best_score,
        exact: false,
    }
}
