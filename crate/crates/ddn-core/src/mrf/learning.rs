//! Pseudo-likelihood weight learning.
//!
//! The pseudo-log-likelihood of a weight vector on data `x^(1..M)` is
//!
//! ```text
//! pll = (1/M) sum_m sum_j ln P(x_j^(m) | x_-j^(m))
//! ```
//!
//! where each conditional is the sigmoid of the node's local field. Its
//! gradient w.r.t. feature `i` is `(1/M) sum_m sum_{j in f_i} (x_j -
//! sigma(field_j)) * a_ij`, with `a_ij = 1` for a singleton on `j` and
//! `a_ij = x_k` for a pair `(j,k)` — pair features pick up a term from each
//! endpoint's conditional. Optimization is plain mini-batch gradient ascent
//! with an optional L2 penalty.

use super::{BinaryData, PairwiseMrf};
use crate::error::{Error, Result};
use crate::numeric::{ln_sigmoid, sigmoid};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Mini-batch SGD settings shared by the trainers in this crate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L2 strength; 0 disables the penalty.
    pub l2: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.1,
            l2: 0.0,
            seed: 0,
        }
    }
}

/// Objective value per epoch (the quantity being maximized or minimized,
/// stated by the producing trainer).
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_values: Vec<f64>,
}

/// Mean per-example pseudo-log-likelihood of the data under `mrf`.
/// Rows carry all nodes, labels then evidence.
pub fn pll(mrf: &PairwiseMrf, data: &BinaryData) -> f64 {
    assert_eq!(data.cols, mrf.total_nodes(), "data width mismatch");
    assert!(!data.is_empty(), "pll of empty data");
    let inc = mrf.incidence();
    let mut total = 0.0;
    for row in &data.rows {
        for j in 0..mrf.total_nodes() {
            let field = mrf.local_field(j, row, &inc);
            // ln P(x_j | rest): ln sigmoid(field) when x_j = 1, else
            // ln sigmoid(-field).
            total += if row[j] == 1 {
                ln_sigmoid(field)
            } else {
                ln_sigmoid(-field)
            };
        }
    }
    total / data.len() as f64
}

/// Gradient of [`pll`] w.r.t. every feature weight (ascent direction),
/// averaged over examples.
pub fn pll_grad(mrf: &PairwiseMrf, data: &BinaryData) -> Vec<f64> {
    assert_eq!(data.cols, mrf.total_nodes(), "data width mismatch");
    assert!(!data.is_empty(), "pll_grad of empty data");
    let inc = mrf.incidence();
    let mut grad = vec![0.0; mrf.weights().len()];
    let mut residual = vec![0.0; mrf.total_nodes()];
    for row in &data.rows {
        for j in 0..mrf.total_nodes() {
            residual[j] = row[j] as f64 - sigmoid(mrf.local_field(j, row, &inc));
        }
        for (i, f) in mrf.features().iter().enumerate() {
            match *f {
                super::Feature::Unary { node } => grad[i] += residual[node],
                super::Feature::Pair { a, b } => {
                    grad[i] += residual[a] * row[b] as f64 + residual[b] * row[a] as f64;
                }
            }
        }
    }
    let m = data.len() as f64;
    for g in &mut grad {
        *g /= m;
    }
    grad
}

/// Maximizes `pll - (l2/2) ||theta||^2` by mini-batch gradient ascent,
/// starting from the model's current weights. Reports the full-data pll
/// after each epoch and fails with [`Error::Divergence`] if it ever goes
/// non-finite. Deterministic for a fixed config.
pub fn fit_weights(mrf: &mut PairwiseMrf, data: &BinaryData, cfg: &SgdConfig) -> Result<TrainReport> {
    assert_eq!(data.cols, mrf.total_nodes(), "data width mismatch");
    if data.is_empty() {
        return Err(Error::Validation("cannot fit weights on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Validation("batch_size must be >= 1".into()));
    }
    let mut rng = Rng::stream(cfg.seed, "mrf-fit-weights");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport { epoch_values: Vec::with_capacity(cfg.epochs) };

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = BinaryData {
                cols: data.cols,
                rows: chunk.iter().map(|&r| data.rows[r].clone()).collect(),
            };
            let grad = pll_grad(mrf, &batch);
            let mut weights = mrf.weights().to_vec();
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w += cfg.learning_rate * (g - cfg.l2 * *w);
            }
            if !weights.iter().all(|w| w.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite weight at epoch {epoch} (learning rate {} too large?)",
                    cfg.learning_rate
                )));
            }
            mrf.set_weights(weights)?;
        }
        let value = pll(mrf, data);
        if !value.is_finite() {
            return Err(Error::Divergence(format!("non-finite pll at epoch {epoch}")));
        }
        report.epoch_values.push(value);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::Feature;
    use crate::numeric::grad_check;

    #[test]
    fn zero_weights_give_n_ln_half() {
        let m = PairwiseMrf::new(
            3,
            0,
            vec![Feature::Unary { node: 0 }, Feature::pair(1, 2)],
            vec![0.0, 0.0],
            10,
        )
        .unwrap();
        let mut data = BinaryData::new(3);
        data.push(vec![1, 0, 1]);
        data.push(vec![0, 0, 0]);
        // Every conditional is 0.5: pll = 3 ln(1/2) per example.
        let want = 3.0 * 0.5f64.ln();
        assert!((pll(&m, &data) - want).abs() < 1e-12);
    }

    #[test]
    fn single_positive_node_closed_form() {
        // One node, one singleton of weight t, all-ones data: pll = ln sigmoid(t).
        let t = 0.85;
        let m = PairwiseMrf::new(1, 0, vec![Feature::Unary { node: 0 }], vec![t], 10).unwrap();
        let mut data = BinaryData::new(1);
        data.push(vec![1]);
        data.push(vec![1]);
        assert!((pll(&m, &data) - crate::numeric::ln_sigmoid(t)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(41);
        // Chain over 4 nodes plus one evidence node, random weights and data.
        let features = vec![
            Feature::Unary { node: 0 },
            Feature::Unary { node: 1 },
            Feature::Unary { node: 2 },
            Feature::Unary { node: 3 },
            Feature::Unary { node: 4 },
            Feature::pair(0, 1),
            Feature::pair(1, 2),
            Feature::pair(2, 3),
            Feature::pair(3, 4),
        ];
        for _ in 0..10 {
            let weights: Vec<f64> = (0..features.len()).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let m = PairwiseMrf::new(4, 1, features.clone(), weights.clone(), 10).unwrap();
            let mut data = BinaryData::new(5);
            for _ in 0..20 {
                data.push((0..5).map(|_| rng.bernoulli(0.5) as u8).collect());
            }
            let analytic = pll_grad(&m, &data);
            let mut probe = m.clone();
            let report = grad_check(
                |theta| {
                    probe.set_weights(theta.to_vec()).unwrap();
                    pll(&probe, &data)
                },
                &analytic,
                &weights,
                1e-5,
            );
            assert!(report.max_rel_err < 1e-7, "rel err {}", report.max_rel_err);
        }
    }

    #[test]
    fn fitting_improves_pll_and_zero_epochs_is_identity() {
        let mut rng = Rng::new(7);
        let features = vec![
            Feature::Unary { node: 0 },
            Feature::Unary { node: 1 },
            Feature::pair(0, 1),
        ];
        let target = PairwiseMrf::new(2, 0, features.clone(), vec![0.7, -0.4, 1.6], 10).unwrap();
        // Sample data from the target by enumeration.
        let table = crate::mrf::exact::joint_table(&target);
        let mut data = BinaryData::new(2);
        for _ in 0..400 {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut mask = 0usize;
            for (k, p) in table.iter().enumerate() {
                acc += p;
                if u < acc {
                    mask = k;
                    break;
                }
            }
            data.push(vec![(mask & 1) as u8, ((mask >> 1) & 1) as u8]);
        }

        let mut m = PairwiseMrf::new(2, 0, features.clone(), vec![0.0; 3], 10).unwrap();
        let before = pll(&m, &data);

        let mut untouched = m.clone();
        let r0 = fit_weights(
            &mut untouched,
            &data,
            &SgdConfig { epochs: 0, ..Default::default() },
        )
        .unwrap();
        assert!(r0.epoch_values.is_empty());
        assert_eq!(untouched.weights(), m.weights());

        let report = fit_weights(
            &mut m,
            &data,
            &SgdConfig { epochs: 40, learning_rate: 0.3, seed: 5, ..Default::default() },
        )
        .unwrap();
        let after = *report.epoch_values.last().unwrap();
        assert!(after > before + 0.05, "pll {before} -> {after}");
    }

    #[test]
    fn huge_l2_pins_weights_near_zero() {
        let features = vec![Feature::Unary { node: 0 }, Feature::pair(0, 1)];
        let mut m = PairwiseMrf::new(2, 0, features, vec![1.5, -2.5], 10).unwrap();
        let mut data = BinaryData::new(2);
        data.push(vec![1, 1]);
        data.push(vec![0, 1]);
        data.push(vec![1, 0]);
        let cfg = SgdConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-6,
            l2: 1e6,
            seed: 1,
        };
        fit_weights(&mut m, &data, &cfg).unwrap();
        // lr * l2 = 1: each step replaces the weight with lr * grad, which
        // is O(1e-6); everything collapses toward 0.
        for w in m.weights() {
            assert!(w.abs() < 1e-2, "weight {w} not shrunk");
        }
    }

    #[test]
    fn divergent_rate_reports_divergence() {
        let features = vec![Feature::Unary { node: 0 }, Feature::pair(0, 1)];
        let mut m = PairwiseMrf::new(2, 0, features, vec![0.0, 0.0], 10).unwrap();
        let mut data = BinaryData::new(2);
        data.push(vec![1, 1]);
        data.push(vec![0, 0]);
        let cfg = SgdConfig {
            epochs: 400,
            batch_size: 2,
            learning_rate: 1e150,
            l2: 1e150,
            seed: 1,
        };
        let err = fit_weights(&mut m, &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }
}
