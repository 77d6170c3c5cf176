//! Exact inference by enumeration. Exponential in the number of labels, so
//! every entry point guards its input size; these routines exist as ground
//! truth for the approximate methods and as the sampler behind synthetic
//! data generation.

use super::{
    Diagnostics, InferenceMethod, MapResult, MarginalEstimates, PairwiseMrf, ReducedModel,
};
use crate::numeric::log_sum_exp;

/// Hard ceiling on enumerated variables (2^20 states).
pub const MAX_ENUM_NODES: usize = 20;

fn assignment_of_mask(mask: u64, n: usize) -> Vec<u8> {
    (0..n).map(|j| ((mask >> j) & 1) as u8).collect()
}

/// Exact posterior label marginals `P(x_j = 1 | e)` by summing all
/// `2^n_labels` label assignments.
pub fn label_marginals(mrf: &PairwiseMrf, evidence: &[u8]) -> MarginalEstimates {
    let red = mrf.reduce(evidence);
    let start = std::time::Instant::now();
    let p = reduced_marginals(&red);
    MarginalEstimates {
        p,
        method: InferenceMethod::Exact,
        diagnostics: Diagnostics {
            iterations: 1,
            residual: 0.0,
            converged: true,
            truncated_by_budget: false,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    }
}

/// Marginals of an already-reduced model.
pub fn reduced_marginals(red: &ReducedModel) -> Vec<f64> {
    let n = red.n;
    assert!(n <= MAX_ENUM_NODES, "enumeration limited to {MAX_ENUM_NODES} labels, got {n}");
    let mut scores = Vec::with_capacity(1usize << n);
    for mask in 0..(1u64 << n) {
        scores.push(red.score(&assignment_of_mask(mask, n)));
    }
    let logz = log_sum_exp(&scores);
    let mut p = vec![0.0; n];
    for (mask, s) in scores.iter().enumerate() {
        let w = (s - logz).exp();
        for (j, pj) in p.iter_mut().enumerate() {
            if (mask >> j) & 1 == 1 {
                *pj += w;
            }
        }
    }
    p
}

/// Exact MAP by brute force; ties resolve to the lowest enumeration mask.
pub fn map_bruteforce(mrf: &PairwiseMrf, evidence: &[u8]) -> MapResult {
    let red = mrf.reduce(evidence);
    let n = red.n;
    assert!(n <= MAX_ENUM_NODES, "enumeration limited to {MAX_ENUM_NODES} labels, got {n}");
    let mut best_mask = 0u64;
    let mut best = f64::NEG_INFINITY;
    for mask in 0..(1u64 << n) {
        let s = red.score(&assignment_of_mask(mask, n));
        if s > best {
            best = s;
            best_mask = mask;
        }
    }
    MapResult {
        assignment: assignment_of_mask(best_mask, n),
        score: best,
        exact: true,
    }
}

/// Normalized joint probability table over *all* nodes (labels and
/// evidence); entry `mask` assigns bit `j` of `mask` to node `j`. Used to
/// draw exact samples for synthetic datasets.
pub fn joint_table(mrf: &PairwiseMrf) -> Vec<f64> {
    let n = mrf.total_nodes();
    assert!(n <= 16, "joint enumeration limited to 16 nodes, got {n}");
    let mut scores = Vec::with_capacity(1usize << n);
    for mask in 0..(1u64 << n) {
        scores.push(mrf.score(&assignment_of_mask(mask, n)));
    }
    let logz = log_sum_exp(&scores);
    scores.iter().map(|s| (s - logz).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::Feature;

    #[test]
    fn uniform_model_has_half_marginals() {
        let m = PairwiseMrf::new(
            3,
            0,
            vec![Feature::Unary { node: 0 }, Feature::pair(0, 1)],
            vec![0.0, 0.0],
            10,
        )
        .unwrap();
        let est = label_marginals(&m, &[]);
        for p in est.p {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_marginal_is_sigmoid() {
        // One node, unary weight t: P(x=1) = e^t / (1 + e^t) = sigmoid(t).
        for t in [-2.0, -0.3, 0.0, 1.7] {
            let m = PairwiseMrf::new(1, 0, vec![Feature::Unary { node: 0 }], vec![t], 10).unwrap();
            let est = label_marginals(&m, &[]);
            assert!((est.p[0] - crate::numeric::sigmoid(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn conditioning_flows_through_evidence() {
        // x0 tied to e0 with weight 3: posterior of x0 moves with e0.
        let m = PairwiseMrf::new(
            1,
            1,
            vec![Feature::Unary { node: 0 }, Feature::pair(0, 1)],
            vec![-1.5, 3.0],
            10,
        )
        .unwrap();
        let p_e0 = label_marginals(&m, &[0]).p[0];
        let p_e1 = label_marginals(&m, &[1]).p[0];
        assert!((p_e0 - crate::numeric::sigmoid(-1.5)).abs() < 1e-12);
        assert!((p_e1 - crate::numeric::sigmoid(1.5)).abs() < 1e-12);
    }

    #[test]
    fn map_bruteforce_finds_documented_optimum() {
        // Features {x0 and x1: +2, x0: -1}: scores 00->0, 10->-1, 01->0,
        // 11->+1, so the optimum is (1,1) with score 1.
        let m = PairwiseMrf::new(
            2,
            0,
            vec![Feature::pair(0, 1), Feature::Unary { node: 0 }],
            vec![2.0, -1.0],
            10,
        )
        .unwrap();
        let map = map_bruteforce(&m, &[]);
        assert_eq!(map.assignment, vec![1, 1]);
        assert!((map.score - 1.0).abs() < 1e-15);
        assert!(map.exact);
    }

    #[test]
    fn map_tie_goes_to_lowest_mask() {
        // All-zero weights: every assignment scores 0; mask 0 wins.
        let m = PairwiseMrf::new(2, 0, vec![Feature::pair(0, 1)], vec![0.0], 10).unwrap();
        let map = map_bruteforce(&m, &[]);
        assert_eq!(map.assignment, vec![0, 0]);
        assert_eq!(map.score, 0.0);
    }

    #[test]
    fn joint_table_sums_to_one_and_matches_scores() {
        let m = PairwiseMrf::new(
            2,
            1,
            vec![Feature::Unary { node: 0 }, Feature::pair(1, 2)],
            vec![0.8, -0.6],
            10,
        )
        .unwrap();
        let table = joint_table(&m);
        assert_eq!(table.len(), 8);
        let total: f64 = table.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Ratio check against unnormalized scores for two states.
        let s5 = m.score(&[1, 0, 1]); // mask 5 = 101
        let s0 = m.score(&[0, 0, 0]);
        assert!((table[5] / table[0] - (s5 - s0).exp()).abs() < 1e-12);
    }
}
