//! Structure learning: for every node, fit an L1-regularized logistic
//! regression of that node on all others; the nonzero weights name the
//! node's neighbors, and each selected (unordered) pair becomes one
//! conjunctive pairwise feature. The L1 strength is swept over a geometric
//! schedule per node, weakest first, until the neighbor count fits under the
//! cap. Selections are symmetrized with an OR rule; because the union can
//! push a node back over the cap, the weakest incident edges are then pruned
//! deterministically until the cap holds everywhere.

use super::{BinaryData, Feature, PairwiseMrf, NEIGHBOR_CAP_MAX, NEIGHBOR_CAP_MIN};
use crate::error::{Error, Result};
use crate::numeric::sigmoid;
use crate::rng::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureConfig {
    /// Maximum pairwise neighbors per node; must lie in `[2, 10]`.
    pub neighbor_cap: usize,
    /// Geometric L1 schedule: `lambda_min * lambda_factor^k`, capped at
    /// `lambda_max`.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_factor: f64,
    /// Proximal-SGD settings for each per-node regression.
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            neighbor_cap: 10,
            lambda_min: 0.001,
            lambda_max: 10.0,
            lambda_factor: 2.0,
            epochs: 40,
            learning_rate: 0.5,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Result of structure learning: undirected edges (normalized `a < b`,
/// sorted) and any per-node warnings.
#[derive(Debug, Clone)]
pub struct LearnedStructure {
    pub edges: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// Learns the pairwise skeleton of `data` (rows over all nodes, labels then
/// evidence). Deterministic for a fixed config regardless of thread count:
/// each node's regression runs on its own derived RNG stream.
pub fn learn_structure(data: &BinaryData, cfg: &StructureConfig) -> Result<LearnedStructure> {
    if !(NEIGHBOR_CAP_MIN..=NEIGHBOR_CAP_MAX).contains(&cfg.neighbor_cap) {
        return Err(Error::Validation(format!(
            "neighbor_cap {} outside [{NEIGHBOR_CAP_MIN}, {NEIGHBOR_CAP_MAX}]",
            cfg.neighbor_cap
        )));
    }
    if data.is_empty() {
        return Err(Error::Validation("cannot learn structure from empty data".into()));
    }
    if !(cfg.lambda_min > 0.0 && cfg.lambda_max >= cfg.lambda_min && cfg.lambda_factor > 1.0) {
        return Err(Error::Validation("bad lambda schedule".into()));
    }
    let n = data.cols;

    // A constant column carries no information about any other node: it is
    // skipped as a regression target (with a warning) and excluded from every
    // other node's predictor set, so it ends up isolated. Leaving it in as a
    // predictor would let an always-one column soak up intercept mass and
    // manufacture spurious edges.
    let constant: Vec<bool> = (0..n)
        .map(|j| {
            let first = data.rows[0][j];
            data.rows.iter().all(|r| r[j] == first)
        })
        .collect();

    // Per-node selections, in parallel; collect preserves node order.
    let selections: Vec<NodeSelection> = (0..n)
        .into_par_iter()
        .map(|j| select_neighbors(data, j, &constant, cfg))
        .collect();

    let mut warnings: Vec<String> = Vec::new();
    for sel in &selections {
        warnings.extend(sel.warnings.iter().cloned());
    }

    // OR symmetrization; remember the stronger of the two directed weights
    // per edge so over-cap pruning can drop the weakest edges first.
    let mut strength: std::collections::BTreeMap<(usize, usize), f64> =
        std::collections::BTreeMap::new();
    for (j, sel) in selections.iter().enumerate() {
        for &(k, w) in &sel.neighbors {
            let key = (j.min(k), j.max(k));
            let entry = strength.entry(key).or_insert(0.0);
            if w.abs() > *entry {
                *entry = w.abs();
            }
        }
    }

    // Enforce the cap after the union: repeatedly take the most overloaded
    // node (ties to the lowest index) and drop its weakest incident edge
    // (ties to the lexicographically smallest pair).
    let mut degree = vec![0usize; n];
    for &(a, b) in strength.keys() {
        degree[a] += 1;
        degree[b] += 1;
    }
    loop {
        let worst = (0..n).max_by_key(|&v| degree[v]).unwrap_or(0);
        if degree[worst] <= cfg.neighbor_cap {
            break;
        }
        // max_by_key returns the last max; re-pick the lowest index.
        let worst = (0..n).find(|&v| degree[v] == degree[worst]).unwrap();
        let victim = strength
            .iter()
            .filter(|((a, b), _)| *a == worst || *b == worst)
            .min_by(|(ka, wa), (kb, wb)| wa.partial_cmp(wb).unwrap().then(ka.cmp(kb)))
            .map(|(k, _)| *k)
            .expect("overloaded node has incident edges");
        strength.remove(&victim);
        degree[victim.0] -= 1;
        degree[victim.1] -= 1;
        warnings.push(format!(
            "edge ({}, {}) dropped to keep node {worst} within the neighbor cap",
            victim.0, victim.1
        ));
    }

    let edges: Vec<(usize, usize)> = strength.into_keys().collect();
    debug_assert!({
        let mut deg = vec![0usize; n];
        for &(a, b) in &edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg.iter().all(|&d| d <= cfg.neighbor_cap)
    });
    Ok(LearnedStructure { edges, warnings })
}

/// Assembles the model implied by a learned skeleton: one singleton feature
/// per node plus one pair feature per edge, all weights zero (ready for
/// [`super::learning::fit_weights`]).
pub fn mrf_from_structure(
    n_labels: usize,
    n_evidence: usize,
    edges: &[(usize, usize)],
    neighbor_cap: usize,
) -> Result<PairwiseMrf> {
    let mut features: Vec<Feature> = (0..n_labels + n_evidence)
        .map(|node| Feature::Unary { node })
        .collect();
    for &(a, b) in edges {
        features.push(Feature::pair(a, b));
    }
    let weights = vec![0.0; features.len()];
    PairwiseMrf::new(n_labels, n_evidence, features, weights, neighbor_cap)
}

struct NodeSelection {
    /// `(other_node, weight)` for every nonzero regression weight.
    neighbors: Vec<(usize, f64)>,
    warnings: Vec<String>,
}

/// L1 sweep for one node: fit at increasing lambda (warm-started) until at
/// most `neighbor_cap` weights stay nonzero.
fn select_neighbors(
    data: &BinaryData,
    j: usize,
    constant: &[bool],
    cfg: &StructureConfig,
) -> NodeSelection {
    let m = data.len();
    if constant[j] {
        return NodeSelection {
            neighbors: Vec::new(),
            warnings: vec![format!(
                "node {j} is constant ({}) in the training data; it selects no neighbors",
                data.rows[0][j]
            )],
        };
    }

    // Predictor columns: every non-constant node except j, in index order.
    let others: Vec<usize> = (0..data.cols).filter(|&k| k != j && !constant[k]).collect();
    let mut weights = vec![0.0f64; others.len()];
    let mut bias = 0.0f64;
    let mut rng = Rng::stream(cfg.seed, &format!("structure-node-{j}"));
    let mut order: Vec<usize> = (0..m).collect();

    let mut lambda = cfg.lambda_min;
    loop {
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                // Mean data gradient over the batch.
                let mut gw = vec![0.0f64; others.len()];
                let mut gb = 0.0f64;
                for &r in chunk {
                    let row = &data.rows[r];
                    let mut z = bias;
                    for (idx, &k) in others.iter().enumerate() {
                        z += weights[idx] * row[k] as f64;
                    }
                    let err = sigmoid(z) - row[j] as f64;
                    for (idx, &k) in others.iter().enumerate() {
                        gw[idx] += err * row[k] as f64;
                    }
                    gb += err;
                }
                let inv = 1.0 / chunk.len() as f64;
                // Proximal step: gradient descent on the data term, then
                // soft-thresholding for the L1 penalty (bias unpenalized).
                for (w, g) in weights.iter_mut().zip(&gw) {
                    *w = soft_threshold(*w - cfg.learning_rate * g * inv, cfg.learning_rate * lambda);
                }
                bias -= cfg.learning_rate * gb * inv;
            }
        }
        let nonzero = weights.iter().filter(|w| **w != 0.0).count();
        if nonzero <= cfg.neighbor_cap {
            break;
        }
        if lambda >= cfg.lambda_max {
            // Schedule exhausted while still over the cap: keep only the
            // strongest `neighbor_cap` weights.
            let mut ranked: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
            ranked.sort_by(|&a, &b| {
                weights[b].abs().partial_cmp(&weights[a].abs()).unwrap().then(a.cmp(&b))
            });
            for &i in ranked.iter().skip(cfg.neighbor_cap) {
                weights[i] = 0.0;
            }
            return NodeSelection {
                neighbors: collect_nonzero(&others, &weights),
                warnings: vec![format!(
                    "node {j}: lambda schedule exhausted at {lambda} with {nonzero} neighbors; kept the strongest {}",
                    cfg.neighbor_cap
                )],
            };
        }
        lambda = (lambda * cfg.lambda_factor).min(cfg.lambda_max);
    }
    NodeSelection {
        neighbors: collect_nonzero(&others, &weights),
        warnings: Vec::new(),
    }
}

fn collect_nonzero(others: &[usize], weights: &[f64]) -> Vec<(usize, f64)> {
    others
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w != 0.0)
        .map(|(&k, &w)| (k, w))
        .collect()
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}
