//! Pairwise log-linear Markov random field over binary label variables `X`
//! and binarized evidence variables `E`.
//!
//! The distribution is `P(x) = exp(sum_i theta_i f_i(x)) / Z` where every
//! feature is either a singleton indicator `[node = 1]` or a conjunction
//! `[a = 1 and b = 1]` over a pair of nodes. Nodes are indexed globally:
//! `0..n_labels` are labels, `n_labels..n_labels+n_evidence` are evidence.
//!
//! Submodules supply the algorithms: structure learning ([`structure`]),
//! pseudo-likelihood weight learning ([`learning`]), exact enumeration
//! ([`exact`]), Gibbs sampling ([`gibbs`]), cluster-graph belief propagation
//! ([`bp`]), MAP search ([`map`]) and the end-to-end prediction entry point
//! ([`predict`]).

pub mod bp;
pub mod exact;
pub mod gibbs;
pub mod learning;
pub mod map;
pub mod predict;
pub mod structure;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Smallest neighbor cap structure learning will accept.
pub const NEIGHBOR_CAP_MIN: usize = 2;
/// Largest neighbor cap structure learning will accept.
pub const NEIGHBOR_CAP_MAX: usize = 10;

/// A log-linear feature over binary nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    /// Fires when `node = 1`.
    Unary { node: usize },
    /// Fires when both endpoints are 1. Stored with `a < b`.
    Pair { a: usize, b: usize },
}

impl Feature {
    pub fn pair(a: usize, b: usize) -> Feature {
        assert_ne!(a, b, "pair feature needs two distinct nodes");
        Feature::Pair {
            a: a.min(b),
            b: a.max(b),
        }
    }

    /// 1 if the feature fires under `assignment`, else 0.
    pub fn value(&self, assignment: &[u8]) -> u8 {
        match *self {
            Feature::Unary { node } => assignment[node],
            Feature::Pair { a, b } => assignment[a] & assignment[b],
        }
    }
}

/// Pairwise MRF: features plus one weight per feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseMrf {
    n_labels: usize,
    n_evidence: usize,
    features: Vec<Feature>,
    weights: Vec<f64>,
    neighbor_cap: usize,
}

impl PairwiseMrf {
    /// Builds and validates a model. Rules enforced here (and preserved by
    /// every mutator): feature nodes in range, pairs normalized and
    /// duplicate-free, one weight per feature, all weights finite, the
    /// pairwise degree of every node within `neighbor_cap`, and
    /// `neighbor_cap` itself inside `[2, 10]`.
    pub fn new(
        n_labels: usize,
        n_evidence: usize,
        features: Vec<Feature>,
        weights: Vec<f64>,
        neighbor_cap: usize,
    ) -> Result<Self> {
        if n_labels == 0 {
            return Err(Error::Validation("model needs at least one label node".into()));
        }
        if !(NEIGHBOR_CAP_MIN..=NEIGHBOR_CAP_MAX).contains(&neighbor_cap) {
            return Err(Error::Validation(format!(
                "neighbor_cap {neighbor_cap} outside [{NEIGHBOR_CAP_MIN}, {NEIGHBOR_CAP_MAX}]"
            )));
        }
        if features.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} features but {} weights",
                features.len(),
                weights.len()
            )));
        }
        let total = n_labels + n_evidence;
        let mut seen = std::collections::BTreeSet::new();
        let mut degree = vec![0usize; total];
        for f in &features {
            match *f {
                Feature::Unary { node } => {
                    if node >= total {
                        return Err(Error::Validation(format!("feature node {node} out of range")));
                    }
                }
                Feature::Pair { a, b } => {
                    if a >= b {
                        return Err(Error::Validation(format!(
                            "pair feature ({a},{b}) not normalized (need a < b)"
                        )));
                    }
                    if b >= total {
                        return Err(Error::Validation(format!("feature node {b} out of range")));
                    }
                    degree[a] += 1;
                    degree[b] += 1;
                }
            }
            if !seen.insert(*f) {
                return Err(Error::Validation(format!("duplicate feature {f:?}")));
            }
        }
        if let Some(node) = degree.iter().position(|&d| d > neighbor_cap) {
            return Err(Error::Validation(format!(
                "node {node} has pairwise degree {} above neighbor_cap {neighbor_cap}",
                degree[node]
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::Validation("non-finite feature weight".into()));
        }
        Ok(PairwiseMrf {
            n_labels,
            n_evidence,
            features,
            weights,
            neighbor_cap,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_evidence(&self) -> usize {
        self.n_evidence
    }

    pub fn total_nodes(&self) -> usize {
        self.n_labels + self.n_evidence
    }

    pub fn neighbor_cap(&self) -> usize {
        self.neighbor_cap
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces all weights; rejects length mismatch and non-finite values.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.features.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} features",
                weights.len(),
                self.features.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::Validation("non-finite feature weight".into()));
        }
        self.weights = weights;
        Ok(())
    }

    /// Unnormalized log-score `sum_i theta_i f_i(assignment)` over the full
    /// node vector (labels then evidence).
    pub fn score(&self, assignment: &[u8]) -> f64 {
        assert_eq!(assignment.len(), self.total_nodes(), "assignment width mismatch");
        self.features
            .iter()
            .zip(&self.weights)
            .map(|(f, &w)| w * f.value(assignment) as f64)
            .sum()
    }

    /// [`PairwiseMrf::score`] with labels and evidence supplied separately.
    pub fn score_with_evidence(&self, labels: &[u8], evidence: &[u8]) -> f64 {
        assert_eq!(labels.len(), self.n_labels);
        assert_eq!(evidence.len(), self.n_evidence);
        let mut full = Vec::with_capacity(self.total_nodes());
        full.extend_from_slice(labels);
        full.extend_from_slice(evidence);
        self.score(&full)
    }

    /// Per-node incidence lists used by the samplers and by pseudo-
    /// likelihood: for node `j`, the features that mention `j` together with
    /// the opposite endpoint (None for singletons).
    pub fn incidence(&self) -> Incidence {
        let mut per_node: Vec<Vec<(usize, Option<usize>)>> = vec![Vec::new(); self.total_nodes()];
        for (i, f) in self.features.iter().enumerate() {
            match *f {
                Feature::Unary { node } => per_node[node].push((i, None)),
                Feature::Pair { a, b } => {
                    per_node[a].push((i, Some(b)));
                    per_node[b].push((i, Some(a)));
                }
            }
        }
        Incidence { per_node }
    }

    /// Log-odds of node `j` being 1 given the rest of `assignment`:
    /// the sum of weights of features that fire iff `j` flips to 1.
    pub fn local_field(&self, j: usize, assignment: &[u8], inc: &Incidence) -> f64 {
        let mut field = 0.0;
        for &(fi, other) in &inc.per_node[j] {
            match other {
                None => field += self.weights[fi],
                Some(k) => field += self.weights[fi] * assignment[k] as f64,
            }
        }
        field
    }

    /// `P(node j = 1 | rest of assignment)`.
    pub fn conditional_p1(&self, j: usize, assignment: &[u8], inc: &Incidence) -> f64 {
        crate::numeric::sigmoid(self.local_field(j, assignment, inc))
    }

    /// Conditions the model on an evidence assignment, yielding an
    /// equivalent model over the labels only: pair features between a label
    /// and an evidence node become label singletons when the evidence bit is
    /// 1 and vanish when it is 0; evidence-only features fold into an
    /// additive constant.
    pub fn reduce(&self, evidence: &[u8]) -> ReducedModel {
        assert_eq!(evidence.len(), self.n_evidence, "evidence width mismatch");
        let n = self.n_labels;
        let mut unary = vec![0.0; n];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        let mut constant = 0.0;
        let ev = |node: usize| evidence[node - n] as f64;
        for (f, &w) in self.features.iter().zip(&self.weights) {
            match *f {
                Feature::Unary { node } if node < n => unary[node] += w,
                Feature::Unary { node } => constant += w * ev(node),
                Feature::Pair { a, b } if b < n => pairs.push((a, b, w)),
                Feature::Pair { a, b } if a < n => {
                    // b is evidence: the conjunction becomes a singleton on a
                    // when e_b = 1 and never fires when e_b = 0.
                    unary[a] += w * ev(b);
                }
                Feature::Pair { a, b } => constant += w * ev(a) * ev(b),
            }
        }
        ReducedModel {
            n,
            unary,
            pairs,
            constant,
        }
    }
}

/// Per-node feature incidence, built once per inference run.
#[derive(Debug, Clone)]
pub struct Incidence {
    per_node: Vec<Vec<(usize, Option<usize>)>>,
}

impl Incidence {
    pub fn features_at(&self, node: usize) -> &[(usize, Option<usize>)] {
        &self.per_node[node]
    }
}

/// A label-only view of the model after conditioning on evidence.
/// `score(x) = constant + sum_j unary[j] x_j + sum_(a,b) w x_a x_b`.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub n: usize,
    pub unary: Vec<f64>,
    /// `(a, b, w)` with `a < b < n`; one entry per surviving pair feature.
    pub pairs: Vec<(usize, usize, f64)>,
    pub constant: f64,
}

impl ReducedModel {
    /// Full score of a label assignment, constant included.
    pub fn score(&self, labels: &[u8]) -> f64 {
        assert_eq!(labels.len(), self.n);
        let mut s = self.constant;
        for (j, &u) in self.unary.iter().enumerate() {
            s += u * labels[j] as f64;
        }
        for &(a, b, w) in &self.pairs {
            s += w * (labels[a] & labels[b]) as f64;
        }
        s
    }
}

/// How a set of marginals was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    Exact,
    Gibbs,
    Bp,
    Map,
}

/// Run diagnostics attached to every inference result.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// Sweeps (samplers) or message iterations (BP) actually executed.
    pub iterations: usize,
    /// Final max message change (BP); 0 for the other methods.
    pub residual: f64,
    pub converged: bool,
    /// True when a wall-clock budget cut the run short. Truncated runs are
    /// the one place results may differ across machines.
    pub truncated_by_budget: bool,
    pub elapsed_ms: f64,
}

/// Posterior marginals `P(x_j = 1 | e)` per label.
#[derive(Debug, Clone)]
pub struct MarginalEstimates {
    pub p: Vec<f64>,
    pub method: InferenceMethod,
    pub diagnostics: Diagnostics,
}

/// A MAP (most probable assignment) answer.
#[derive(Debug, Clone)]
pub struct MapResult {
    pub assignment: Vec<u8>,
    /// Full model score of `assignment` given the evidence, evidence
    /// features included.
    pub score: f64,
    /// True only when the search provably examined or pruned every
    /// assignment (branch-and-bound that ran to completion).
    pub exact: bool,
}

/// Dense binary design matrix used by structure and weight learning
/// (one row per training example over all nodes, labels then evidence).
#[derive(Debug, Clone)]
pub struct BinaryData {
    pub cols: usize,
    pub rows: Vec<Vec<u8>>,
}

impl BinaryData {
    pub fn new(cols: usize) -> Self {
        BinaryData { cols, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<u8>) {
        assert_eq!(row.len(), self.cols, "row width mismatch");
        debug_assert!(row.iter().all(|&b| b <= 1));
        self.rows.push(row);
    }

    /// Joins label rows with binarized evidence rows, labels first.
    pub fn from_parts(labels: &[Vec<u8>], evidence: &[Vec<u8>]) -> Self {
        assert_eq!(labels.len(), evidence.len(), "row count mismatch");
        let cols = labels.first().map_or(0, |r| r.len())
            + evidence.first().map_or(0, |r| r.len());
        let mut data = BinaryData::new(cols);
        for (l, e) in labels.iter().zip(evidence) {
            let mut row = Vec::with_capacity(cols);
            row.extend_from_slice(l);
            row.extend_from_slice(e);
            data.push(row);
        }
        data
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node_model() -> PairwiseMrf {
        // x0, x1 with unary on each and one pair feature.
        PairwiseMrf::new(
            2,
            0,
            vec![
                Feature::Unary { node: 0 },
                Feature::Unary { node: 1 },
                Feature::pair(0, 1),
            ],
            vec![-1.0, 0.5, 2.0],
            10,
        )
        .unwrap()
    }

    #[test]
    fn score_sums_firing_features() {
        let m = two_node_model();
        assert_eq!(m.score(&[0, 0]), 0.0);
        assert_eq!(m.score(&[1, 0]), -1.0);
        assert_eq!(m.score(&[0, 1]), 0.5);
        assert_eq!(m.score(&[1, 1]), -1.0 + 0.5 + 2.0);
    }

    #[test]
    fn local_field_matches_score_difference() {
        // The field of node j must equal score(x_j=1) - score(x_j=0).
        let m = two_node_model();
        let inc = m.incidence();
        for other in [0u8, 1u8] {
            let field = m.local_field(0, &[0, other], &inc);
            let diff = m.score(&[1, other]) - m.score(&[0, other]);
            assert!((field - diff).abs() < 1e-15);
        }
    }

    #[test]
    fn conditional_is_sigmoid_of_field() {
        let m = two_node_model();
        let inc = m.incidence();
        let p = m.conditional_p1(0, &[0, 1], &inc);
        assert!((p - crate::numeric::sigmoid(-1.0 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn reduce_reproduces_full_scores() {
        // Model with evidence: x0,x1 labels; e0 (node 2) evidence.
        let m = PairwiseMrf::new(
            2,
            1,
            vec![
                Feature::Unary { node: 0 },
                Feature::Unary { node: 2 },
                Feature::pair(0, 2),
                Feature::pair(0, 1),
            ],
            vec![0.3, -0.7, 1.5, -0.4],
            10,
        )
        .unwrap();
        for e in [0u8, 1u8] {
            let red = m.reduce(&[e]);
            for mask in 0..4u32 {
                let labels = [(mask & 1) as u8, ((mask >> 1) & 1) as u8];
                let want = m.score_with_evidence(&labels, &[e]);
                assert!(
                    (red.score(&labels) - want).abs() < 1e-12,
                    "e={e} labels={labels:?}"
                );
            }
        }
    }

    #[test]
    fn validation_catches_bad_models() {
        // Duplicate feature.
        let err = PairwiseMrf::new(
            2,
            0,
            vec![Feature::pair(0, 1), Feature::pair(1, 0)],
            vec![1.0, 1.0],
            5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));

        // Degree above cap: star center with 3 neighbors under cap 2.
        let feats = vec![Feature::pair(0, 1), Feature::pair(0, 2), Feature::pair(0, 3)];
        let err = PairwiseMrf::new(4, 0, feats, vec![1.0; 3], 2).unwrap_err();
        assert!(err.to_string().contains("degree"));

        // Cap outside the allowed band.
        let err = PairwiseMrf::new(2, 0, vec![], vec![], 1).unwrap_err();
        assert!(err.to_string().contains("neighbor_cap"));
    }
}
