//! Synthetic dataset generators used by the test suites and the CLI `gen`
//! command: exact samples from small planted random fields (optionally with
//! noisy continuous evidence), and a planted-dependency set where one label
//! is the XOR of two others — expressible only by a model that lets labels
//! talk to each other.

use crate::data::{Dataset, Example};
use crate::error::Result;
use crate::mrf::{exact, Feature, PairwiseMrf};
use crate::rng::Rng;

/// Draws `count` exact i.i.d. states from a small model (total nodes <= 16)
/// by inverse-CDF sampling of the enumerated joint.
pub fn sample_states(mrf: &PairwiseMrf, count: usize, rng: &mut Rng) -> Vec<Vec<u8>> {
    let table = exact::joint_table(mrf);
    let mut cumulative = Vec::with_capacity(table.len());
    let mut acc = 0.0;
    for p in &table {
        acc += p;
        cumulative.push(acc);
    }
    let n = mrf.total_nodes();
    (0..count)
        .map(|_| {
            let u = rng.uniform();
            let mask = cumulative.partition_point(|&c| c <= u).min(table.len() - 1);
            (0..n).map(|j| ((mask >> j) & 1) as u8).collect()
        })
        .collect()
}

/// Builds a label-only chain/graph model with the given edges and weights
/// (one unary weight per node, one pair weight per edge).
pub fn planted_model(
    n_labels: usize,
    edges: &[(usize, usize)],
    unary_weights: &[f64],
    pair_weights: &[f64],
) -> Result<PairwiseMrf> {
    assert_eq!(unary_weights.len(), n_labels);
    assert_eq!(pair_weights.len(), edges.len());
    let mut features: Vec<Feature> = (0..n_labels).map(|node| Feature::Unary { node }).collect();
    for &(a, b) in edges {
        features.push(Feature::pair(a, b));
    }
    let mut weights = unary_weights.to_vec();
    weights.extend_from_slice(pair_weights);
    PairwiseMrf::new(n_labels, 0, features, weights, 10)
}

/// Exact samples from a planted model, packaged as a dataset. With
/// `noise_sigma` set, each example also carries continuous evidence
/// `v_j = x_j + N(0, sigma)` (one feature per label); without it the
/// dataset is label-only (`d = 0`).
pub fn planted_mrf_dataset(
    mrf: &PairwiseMrf,
    count: usize,
    noise_sigma: Option<f64>,
    seed: u64,
) -> Result<Dataset> {
    assert_eq!(mrf.n_evidence(), 0, "planted generator wants a label-only model");
    let n = mrf.n_labels();
    let d = if noise_sigma.is_some() { n } else { 0 };
    let mut rng = Rng::stream(seed, "planted-mrf");
    let states = sample_states(mrf, count, &mut rng);
    let mut ds = Dataset::new(d, n)?;
    let width = count.to_string().len();
    for (i, labels) in states.into_iter().enumerate() {
        let features = match noise_sigma {
            Some(sigma) => labels.iter().map(|&x| x as f64 + sigma * rng.gauss()).collect(),
            None => Vec::new(),
        };
        ds.push(Example {
            id: format!("ex{i:0width$}"),
            features,
            labels,
        })?;
    }
    Ok(ds)
}

/// Planted-dependency dataset: labels `(x0, x1, x0 XOR x2... )` — precisely,
/// `x0, x1 ~ Bernoulli(1/2)` independent, `x2 = x0 XOR x1`, and the two
/// evidence features are noisy copies of `x0` and `x1` only. No feature
/// carries information about `x2` beyond what the other two labels imply,
/// so per-label prediction caps out at chance on `x2` while a model that
/// reads the other labels can recover it.
pub fn xor_dataset(count: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    let mut rng = Rng::stream(seed, "xor-dataset");
    let mut ds = Dataset::new(2, 3)?;
    let width = count.to_string().len();
    for i in 0..count {
        let x0 = rng.bernoulli(0.5) as u8;
        let x1 = rng.bernoulli(0.5) as u8;
        let x2 = x0 ^ x1;
        let features = vec![
            x0 as f64 + noise_sigma * rng.gauss(),
            x1 as f64 + noise_sigma * rng.gauss(),
        ];
        ds.push(Example {
            id: format!("xor{i:0width$}"),
            features,
            labels: vec![x0, x1, x2],
        })?;
    }
    Ok(ds)
}
