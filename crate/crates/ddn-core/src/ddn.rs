//! Deep dependency network: a trainable backbone mapping raw features to an
//! evidence embedding, a conditional dependency-network head over that
//! embedding, joint training on conditional pseudo-log-likelihood, and
//! sampling-based inference with a mixture estimator.
//!
//! The sampler here is deliberately not the one in [`crate::mrf::gibbs`]:
//! random-field inference sweeps labels in fixed index order and averages
//! sampled states, while this one draws a fresh random permutation every
//! sweep and averages the conditional probabilities evaluated at each
//! sweep's final state. The two estimators answer to different definitions
//! and share no sampler code.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::dn::{cross_entropy_grad, ClassifierGrads, ConditionalClassifier, ConditionalDn};
use crate::error::{Error, Result};
use crate::mrf::learning::{SgdConfig, TrainReport};
use crate::mrf::{Diagnostics, InferenceMethod, MarginalEstimates};
use crate::nn::{Mlp, MlpGrads};
use crate::rng::{derive_seed, Rng};

/// Feature map `v -> e`: an MLP with ReLU hidden layers and sigmoid
/// outputs, so every embedding coordinate lies in (0,1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Backbone {
    pub net: Mlp,
}

impl Backbone {
    /// Fresh backbone `feature_dim -> hidden... -> embedding_dim`.
    pub fn new(
        feature_dim: usize,
        embedding_dim: usize,
        hidden: &[usize],
        rng: &mut Rng,
    ) -> Self {
        let mut dims = vec![feature_dim];
        dims.extend_from_slice(hidden);
        dims.push(embedding_dim);
        Backbone { net: Mlp::new(&dims, rng) }
    }

    /// Default architecture: one hidden layer of width `4 * max(d, n)`.
    pub fn default_hidden(feature_dim: usize, label_count: usize) -> Vec<usize> {
        vec![4 * feature_dim.max(label_count).max(1)]
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// The evidence embedding `e = N(v)`.
    pub fn embed(&self, features: &[f64]) -> Vec<f64> {
        self.net.forward(features)
    }
}

/// Pretrains the backbone alone by treating each embedding coordinate as a
/// direct prediction of the matching label (so it requires `m = n`), with
/// mean per-label binary cross-entropy and decoupled L2 on the weights.
/// Returns the loss curve, one mean-BCE value per epoch.
pub fn pretrain_backbone(
    backbone: &mut Backbone,
    data: &Dataset,
    cfg: &SgdConfig,
) -> Result<TrainReport> {
    if backbone.embedding_dim() != data.label_count {
        return Err(Error::Dimension(format!(
            "backbone pretraining needs one output per label: {} outputs vs {} labels",
            backbone.embedding_dim(),
            data.label_count
        )));
    }
    if backbone.feature_dim() != data.feature_dim {
        return Err(Error::Dimension(format!(
            "backbone takes {} features, dataset has {}",
            backbone.feature_dim(),
            data.feature_dim
        )));
    }
    if data.examples.is_empty() {
        return Err(Error::Validation("cannot pretrain on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Validation("batch_size must be >= 1".into()));
    }

    let n = data.label_count as f64;
    let mut rng = Rng::stream(cfg.seed, "backbone-pretrain");
    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut epoch_values = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc = MlpGrads::zeros_like(&backbone.net);
            for &r in chunk {
                let ex = &data.examples[r];
                let targets: Vec<f64> = ex.labels.iter().map(|&b| b as f64).collect();
                let (_, trace) = backbone.net.bce_loss_trace(&ex.features, &targets);
                // Mean over labels: scale the output residuals by 1/n.
                let dz: Vec<f64> = trace
                    .output()
                    .iter()
                    .zip(&targets)
                    .map(|(&p, &t)| (p - t) / n)
                    .collect();
                acc.add(&backbone.net.backward(&trace, &dz));
            }
            backbone.net.decay_weights(1.0 - cfg.learning_rate * cfg.l2);
            backbone.net.add_scaled(&acc, -cfg.learning_rate / chunk.len() as f64);
            if backbone.net.has_non_finite() {
                return Err(Error::Divergence(format!(
                    "backbone parameters became non-finite at epoch {epoch}"
                )));
            }
        }
        let loss = backbone_bce(backbone, data);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "backbone loss became non-finite at epoch {epoch}"
            )));
        }
        epoch_values.push(loss);
    }
    Ok(TrainReport { epoch_values })
}

/// Mean (over examples and labels) binary cross-entropy of the backbone's
/// outputs against the labels. Requires `m = n`, like pretraining.
pub fn backbone_bce(backbone: &Backbone, data: &Dataset) -> f64 {
    assert_eq!(backbone.embedding_dim(), data.label_count);
    let mut total = 0.0;
    for ex in &data.examples {
        let targets: Vec<f64> = ex.labels.iter().map(|&b| b as f64).collect();
        total += backbone.net.bce_loss_trace(&ex.features, &targets).0;
    }
    total / (data.examples.len() as f64 * data.label_count as f64)
}

/// Backbone plus head. The parameters split into the backbone block and
/// the per-classifier head block; gradients follow the same split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeepDependencyNetwork {
    pub backbone: Backbone,
    pub head: ConditionalDn,
}

impl DeepDependencyNetwork {
    pub fn new(backbone: Backbone, head: ConditionalDn) -> Result<Self> {
        if backbone.embedding_dim() != head.evidence_dim {
            return Err(Error::Dimension(format!(
                "backbone embeds into {} values but head expects {}",
                backbone.embedding_dim(),
                head.evidence_dim
            )));
        }
        head.validate()?;
        Ok(DeepDependencyNetwork { backbone, head })
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn label_count(&self) -> usize {
        self.head.label_count
    }

    /// Every parameter as one flat vector: backbone first (layer by layer,
    /// weights then biases), then each head classifier in label order (LR:
    /// weights then bias; MLP: layer by layer as above). [`DdnGrads::flat`]
    /// uses the same order, so the two line up coordinate by coordinate.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = self.backbone.net.params_flat();
        for clf in &self.head.classifiers {
            match clf {
                ConditionalClassifier::Lr(lr) => {
                    flat.extend_from_slice(&lr.weights);
                    flat.push(lr.bias);
                }
                ConditionalClassifier::Mlp { net } => flat.extend(net.params_flat()),
            }
        }
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let bb = self.backbone.net.params_flat().len();
        self.backbone.net.set_params_flat(&flat[..bb]);
        let mut at = bb;
        for clf in &mut self.head.classifiers {
            match clf {
                ConditionalClassifier::Lr(lr) => {
                    let k = lr.weights.len();
                    lr.weights.copy_from_slice(&flat[at..at + k]);
                    lr.bias = flat[at + k];
                    at += k + 1;
                }
                ConditionalClassifier::Mlp { net } => {
                    let k = net.params_flat().len();
                    net.set_params_flat(&flat[at..at + k]);
                    at += k;
                }
            }
        }
        assert_eq!(at, flat.len(), "flat parameter vector has the wrong length");
    }
}

/// Gradient of a summed CPLL over a batch, split like the parameters:
/// one accumulator per head classifier plus one for the backbone.
#[derive(Debug, Clone)]
pub struct DdnGrads {
    pub head: Vec<ClassifierGrads>,
    pub backbone: MlpGrads,
}

impl DdnGrads {
    fn zeros_like(ddn: &DeepDependencyNetwork) -> Self {
        let head = ddn
            .head
            .classifiers
            .iter()
            .map(|clf| match clf {
                ConditionalClassifier::Lr(lr) => ClassifierGrads::Lr {
                    weights: vec![0.0; lr.weights.len()],
                    bias: 0.0,
                    input: vec![0.0; lr.weights.len()],
                },
                ConditionalClassifier::Mlp { net } => {
                    ClassifierGrads::Mlp(MlpGrads::zeros_like(net))
                }
            })
            .collect();
        DdnGrads { head, backbone: MlpGrads::zeros_like(&ddn.backbone.net) }
    }

    fn add_head(&mut self, i: usize, g: &ClassifierGrads) {
        match (&mut self.head[i], g) {
            (
                ClassifierGrads::Lr { weights, bias, input },
                ClassifierGrads::Lr { weights: gw, bias: gb, input: gi },
            ) => {
                for (a, b) in weights.iter_mut().zip(gw) {
                    *a += b;
                }
                *bias += gb;
                for (a, b) in input.iter_mut().zip(gi) {
                    *a += b;
                }
            }
            (ClassifierGrads::Mlp(acc), ClassifierGrads::Mlp(g)) => acc.add(g),
            _ => unreachable!("classifier kind changed mid-batch"),
        }
    }

    /// Flattens to the order of [`DeepDependencyNetwork::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut flat = Mlp::grads_flat(&self.backbone);
        for g in &self.head {
            match g {
                ClassifierGrads::Lr { weights, bias, .. } => {
                    flat.extend_from_slice(weights);
                    flat.push(*bias);
                }
                ClassifierGrads::Mlp(g) => flat.extend(Mlp::grads_flat(g)),
            }
        }
        flat
    }
}

/// Conditional pseudo-log-likelihood loss of one example: the backbone runs
/// once, then each label contributes the cross-entropy of its conditional
/// given the embedding and the other true labels.
pub fn cpll_loss(ddn: &DeepDependencyNetwork, features: &[f64], labels: &[u8]) -> f64 {
    let e = ddn.backbone.embed(features);
    let mut total = 0.0;
    for i in 0..ddn.head.label_count {
        let input = ddn.head.input_for(i, &e, labels);
        total += cross_entropy_grad(&ddn.head.classifiers[i], &input, labels[i]).0;
    }
    total
}

/// Mean CPLL over a dataset.
pub fn dataset_cpll(ddn: &DeepDependencyNetwork, data: &Dataset) -> f64 {
    assert!(!data.examples.is_empty(), "CPLL of an empty dataset");
    let total: f64 = data
        .examples
        .iter()
        .map(|ex| cpll_loss(ddn, &ex.features, &ex.labels))
        .sum();
    total / data.examples.len() as f64
}

/// Summed CPLL over `batch` and its exact gradient. Head gradients are the
/// per-classifier cross-entropy gradients; the backbone gradient collects
/// every conditional's input-gradient on the embedding block (the embedding
/// is shared, so all `n` conditionals contribute) and back-propagates the
/// sum through the backbone. Everything is summed, never averaged, so
/// duplicating the batch exactly doubles the result.
pub fn cpll_grad(ddn: &DeepDependencyNetwork, batch: &[&Example]) -> (f64, DdnGrads) {
    assert!(!batch.is_empty(), "gradient of an empty batch");
    let m = ddn.head.evidence_dim;
    let mut grads = DdnGrads::zeros_like(ddn);
    let mut loss = 0.0;
    for ex in batch {
        let trace = ddn.backbone.net.forward_trace(&ex.features);
        let e = trace.output().to_vec();
        let mut de = vec![0.0; m];
        for i in 0..ddn.head.label_count {
            let input = ddn.head.input_for(i, &e, &ex.labels);
            let (l, g) = cross_entropy_grad(&ddn.head.classifiers[i], &input, ex.labels[i]);
            loss += l;
            for (acc, &gi) in de.iter_mut().zip(&g.input()[..m]) {
                *acc += gi;
            }
            grads.add_head(i, &g);
        }
        // The embedding is a sigmoid output, so d(loss)/d(pre-activation)
        // is the embedding-gradient times e(1-e).
        let dz: Vec<f64> = de.iter().zip(&e).map(|(&d, &p)| d * p * (1.0 - p)).collect();
        grads.backbone.add(&ddn.backbone.net.backward(&trace, &dz));
    }
    (loss, grads)
}

/// Settings for joint CPLL training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Start of the step schedule.
    pub initial_lr: f64,
    /// Multiplier applied every `decay_every` epochs; 1 disables decay.
    pub lr_decay: f64,
    pub decay_every: usize,
    /// Decoupled L2 on weight matrices (biases exempt), both blocks.
    pub l2: f64,
    pub seed: u64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            epochs: 50,
            batch_size: 32,
            initial_lr: 1e-3,
            lr_decay: 0.5,
            decay_every: 20,
            l2: 0.01,
            seed: 0,
        }
    }
}

/// Mini-batch SGD on mean CPLL over both parameter blocks. The learning
/// rate follows the step schedule in `cfg`; the report carries the mean
/// dataset CPLL after each epoch. Deterministic given the seed.
pub fn train_joint(
    ddn: &mut DeepDependencyNetwork,
    data: &Dataset,
    cfg: &JointConfig,
) -> Result<TrainReport> {
    if data.feature_dim != ddn.feature_dim() || data.label_count != ddn.label_count() {
        return Err(Error::Dimension(format!(
            "dataset has shape ({}, {}), model expects ({}, {})",
            data.feature_dim,
            data.label_count,
            ddn.feature_dim(),
            ddn.label_count()
        )));
    }
    if data.examples.is_empty() {
        return Err(Error::Validation("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 || cfg.decay_every == 0 {
        return Err(Error::Validation("batch_size and decay_every must be >= 1".into()));
    }
    if !(cfg.initial_lr > 0.0) || !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
        return Err(Error::Validation(
            "initial_lr must be positive and lr_decay in (0, 1]".into(),
        ));
    }

    let mut rng = Rng::stream(cfg.seed, "ddn-joint");
    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut epoch_values = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.initial_lr * cfg.lr_decay.powi((epoch / cfg.decay_every) as i32);
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&r| &data.examples[r]).collect();
            let (_, grads) = cpll_grad(ddn, &batch);
            apply_joint_step(ddn, &grads, lr, cfg.l2, chunk.len());
            if has_non_finite(ddn) {
                return Err(Error::Divergence(format!(
                    "parameters became non-finite at epoch {epoch}"
                )));
            }
        }
        let loss = dataset_cpll(ddn, data);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "CPLL became non-finite at epoch {epoch}"
            )));
        }
        epoch_values.push(loss);
    }
    Ok(TrainReport { epoch_values })
}

fn apply_joint_step(
    ddn: &mut DeepDependencyNetwork,
    grads: &DdnGrads,
    lr: f64,
    l2: f64,
    batch_len: usize,
) {
    let scale = -lr / batch_len as f64;
    let decay = 1.0 - lr * l2;
    ddn.backbone.net.decay_weights(decay);
    ddn.backbone.net.add_scaled(&grads.backbone, scale);
    for (clf, g) in ddn.head.classifiers.iter_mut().zip(&grads.head) {
        match (clf, g) {
            (ConditionalClassifier::Lr(lr_clf), ClassifierGrads::Lr { weights, bias, .. }) => {
                for (w, gw) in lr_clf.weights.iter_mut().zip(weights) {
                    *w = *w * decay + scale * gw;
                }
                lr_clf.bias += scale * bias;
            }
            (ConditionalClassifier::Mlp { net }, ClassifierGrads::Mlp(g)) => {
                net.decay_weights(decay);
                net.add_scaled(g, scale);
            }
            _ => unreachable!("gradient kind does not match classifier kind"),
        }
    }
}

fn has_non_finite(ddn: &DeepDependencyNetwork) -> bool {
    if ddn.backbone.net.has_non_finite() {
        return true;
    }
    ddn.head.classifiers.iter().any(|clf| match clf {
        ConditionalClassifier::Lr(lr) => {
            !lr.bias.is_finite() || lr.weights.iter().any(|w| !w.is_finite())
        }
        ConditionalClassifier::Mlp { net } => net.has_non_finite(),
    })
}

/// Settings for sampling-based inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DdnGibbsConfig {
    /// Sweeps that contribute to the estimate.
    pub n_samples: usize,
    /// Discarded leading sweeps. The sampler starts from a random state
    /// and the estimator already averages conditionals, so the default
    /// keeps every sweep.
    pub burn_in: usize,
    #[serde(skip)]
    pub time_budget: Option<Duration>,
    pub seed: u64,
}

impl Default for DdnGibbsConfig {
    fn default() -> Self {
        DdnGibbsConfig { n_samples: 1000, burn_in: 0, time_budget: None, seed: 0 }
    }
}

/// Everything the sampler saw: one entry per kept sweep.
#[derive(Debug, Clone)]
pub struct GibbsTrace {
    pub seed: u64,
    /// Final label state of each kept sweep.
    pub samples: Vec<Vec<u8>>,
    /// The permutation that ordered each kept sweep's resampling.
    pub permutations: Vec<Vec<usize>>,
    /// `P(x_i = 1 | e, sample)` evaluated at each kept sweep's final state;
    /// the estimate is the per-label mean of these rows.
    pub conditionals: Vec<Vec<f64>>,
}

/// Marginal inference for one example (see [`infer_traced`]).
pub fn infer(
    ddn: &DeepDependencyNetwork,
    features: &[f64],
    cfg: &DdnGibbsConfig,
) -> MarginalEstimates {
    infer_inner(ddn, features, cfg, false).0
}

/// Marginal inference, also returning the full sampling trace.
///
/// Runs the sampler: embed once, initialize labels uniformly at random,
/// then for each sweep draw a fresh uniform random permutation and resample
/// every label in that order from its conditional. After each kept sweep
/// the conditionals at the sweep's final state are accumulated, and the
/// estimate for label `i` is the mean of those conditionals — a mixture
/// estimator, not a count of sampled states.
pub fn infer_traced(
    ddn: &DeepDependencyNetwork,
    features: &[f64],
    cfg: &DdnGibbsConfig,
) -> (MarginalEstimates, GibbsTrace) {
    let (est, trace) = infer_inner(ddn, features, cfg, true);
    (est, trace.expect("trace was requested"))
}

fn infer_inner(
    ddn: &DeepDependencyNetwork,
    features: &[f64],
    cfg: &DdnGibbsConfig,
    want_trace: bool,
) -> (MarginalEstimates, Option<GibbsTrace>) {
    assert_eq!(features.len(), ddn.feature_dim(), "feature width mismatch");
    assert!(cfg.n_samples >= 1, "n_samples must be >= 1");
    let n = ddn.label_count();
    let e = ddn.backbone.embed(features);
    let mut rng = Rng::stream(cfg.seed, "ddn-infer");
    let start = Instant::now();

    let mut state: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.5) as u8).collect();
    let mut acc = vec![0.0; n];
    let mut kept = 0usize;
    let mut truncated = false;
    let mut trace = want_trace.then(|| GibbsTrace {
        seed: cfg.seed,
        samples: Vec::new(),
        permutations: Vec::new(),
        conditionals: Vec::new(),
    });

    let total = cfg.burn_in + cfg.n_samples;
    let mut sweep = 0;
    while sweep < total || kept == 0 {
        if kept > 0 {
            if let Some(budget) = cfg.time_budget {
                if start.elapsed() >= budget {
                    truncated = true;
                    break;
                }
            }
        } else if cfg.time_budget.is_some_and(|b| start.elapsed() >= b) {
            // Out of time before keeping anything: finish one kept sweep
            // anyway so the estimate is defined, and say so.
            truncated = true;
        }
        let keep = sweep >= cfg.burn_in || (truncated && kept == 0);
        let perm = rng.permutation(n);
        for &i in &perm {
            let p = ddn.head.conditional(i, &e, &state);
            state[i] = rng.bernoulli(p) as u8;
        }
        if keep {
            kept += 1;
            let row: Vec<f64> =
                (0..n).map(|i| ddn.head.conditional(i, &e, &state)).collect();
            // Running mean instead of sum-then-divide: when a conditional
            // is constant across sweeps the update adds exactly zero, so
            // the estimate equals that constant bit-for-bit at any N.
            for (a, &p) in acc.iter_mut().zip(&row) {
                *a += (p - *a) / kept as f64;
            }
            if let Some(t) = trace.as_mut() {
                t.samples.push(state.clone());
                t.permutations.push(perm);
                t.conditionals.push(row);
            }
        }
        sweep += 1;
        if truncated && kept > 0 {
            break;
        }
    }

    let p = acc;
    let est = MarginalEstimates {
        p,
        method: InferenceMethod::Gibbs,
        diagnostics: Diagnostics {
            iterations: kept,
            residual: 0.0,
            converged: !truncated,
            truncated_by_budget: truncated,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    };
    (est, trace)
}

/// Runs [`infer`] over every dataset example concurrently. Each example
/// gets its own RNG stream derived from its id, so the output is the same
/// regardless of thread count or completion order.
pub fn infer_dataset(
    ddn: &DeepDependencyNetwork,
    data: &Dataset,
    cfg: &DdnGibbsConfig,
) -> Result<Vec<Vec<f64>>> {
    if data.feature_dim != ddn.feature_dim() || data.label_count != ddn.label_count() {
        return Err(Error::Dimension(format!(
            "dataset has shape ({}, {}), model expects ({}, {})",
            data.feature_dim,
            data.label_count,
            ddn.feature_dim(),
            ddn.label_count()
        )));
    }
    Ok(data
        .examples
        .par_iter()
        .map(|ex| {
            let sub = DdnGibbsConfig {
                seed: derive_seed(cfg.seed, &format!("example-{}", ex.id)),
                ..cfg.clone()
            };
            infer(ddn, &ex.features, &sub).p
        })
        .collect())
}

/// Thresholds marginals into a label vector: `x_i = 1` iff `p_i` is
/// strictly greater than `threshold`.
pub fn predict_labels(p: &[f64], threshold: f64) -> Vec<u8> {
    assert!((0.0..=1.0).contains(&threshold), "threshold must be in [0,1]");
    p.iter().map(|&v| (v > threshold) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dn::LrClassifier;
    use crate::numeric::grad_check;

    fn tiny_dataset(count: usize, d: usize, n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let mut data = Dataset::new(d, n).unwrap();
        for i in 0..count {
            let features: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.5) as u8).collect();
            data.push(Example { id: format!("t{i}"), features, labels }).unwrap();
        }
        data
    }

    fn random_ddn(d: usize, m: usize, n: usize, mlp_head: bool, seed: u64) -> DeepDependencyNetwork {
        let mut rng = Rng::new(seed);
        let backbone = Backbone::new(d, m, &[3], &mut rng);
        let head = if mlp_head {
            ConditionalDn::new_mlp(m, n, &[4], seed ^ 1).unwrap()
        } else {
            let mut head = ConditionalDn::new_lr(m, n).unwrap();
            for clf in &mut head.classifiers {
                if let ConditionalClassifier::Lr(lr) = clf {
                    for w in &mut lr.weights {
                        *w = rng.uniform_in(-1.0, 1.0);
                    }
                    lr.bias = rng.uniform_in(-0.5, 0.5);
                }
            }
            head
        };
        DeepDependencyNetwork::new(backbone, head).unwrap()
    }

    #[test]
    fn zero_head_cpll_is_n_ln_2() {
        let mut rng = Rng::new(1);
        let backbone = Backbone::new(3, 2, &[4], &mut rng);
        let head = ConditionalDn::new_lr(2, 3).unwrap();
        let ddn = DeepDependencyNetwork::new(backbone, head).unwrap();
        let loss = cpll_loss(&ddn, &[0.1, -0.4, 2.0], &[1, 0, 1]);
        // 3 labels, each conditional exactly 1/2: loss = 3 ln 2.
        assert!((loss - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cpll_matches_direct_recomputation() {
        let ddn = random_ddn(3, 2, 3, true, 7);
        let v = [0.3, -1.0, 0.7];
        let x = [1u8, 1, 0];
        let loss = cpll_loss(&ddn, &v, &x);
        // Independent recomputation straight from the definition, using
        // plain ln on the forward probabilities.
        let e = ddn.backbone.embed(&v);
        let mut expect = 0.0;
        for i in 0..3 {
            let p = ddn.head.conditional(i, &e, &x);
            expect -= if x[i] == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
    }

    #[test]
    fn cpll_grad_matches_finite_differences() {
        for (mlp_head, seed) in [(false, 11u64), (true, 12u64)] {
            let ddn = random_ddn(3, 2, 3, mlp_head, seed);
            let data = tiny_dataset(4, 3, 3, seed ^ 99);
            let batch: Vec<&Example> = data.examples.iter().collect();
            let (_, grads) = cpll_grad(&ddn, &batch);
            let analytic = grads.flat();
            let theta = ddn.params_flat();
            let mut probe = ddn.clone();
            let report = grad_check(
                |t| {
                    probe.set_params_flat(t);
                    cpll_grad(&probe, &batch).0
                },
                &analytic,
                &theta,
                1e-5,
            );
            assert!(
                report.max_rel_err < 1e-6,
                "mlp_head={mlp_head}: rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn zero_evidence_weights_kill_backbone_gradient() {
        let mut ddn = random_ddn(3, 2, 3, false, 21);
        for clf in &mut ddn.head.classifiers {
            if let ConditionalClassifier::Lr(lr) = clf {
                for w in &mut lr.weights[..2] {
                    *w = 0.0; // e-block weights only
                }
            }
        }
        let data = tiny_dataset(3, 3, 3, 22);
        let batch: Vec<&Example> = data.examples.iter().collect();
        let (_, grads) = cpll_grad(&ddn, &batch);
        // No path from the embedding to the loss: exact zeros, not small.
        assert!(Mlp::grads_flat(&grads.backbone).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn duplicating_the_batch_doubles_the_summed_gradient() {
        let ddn = random_ddn(2, 2, 2, true, 31);
        let data = tiny_dataset(3, 2, 2, 32);
        let single: Vec<&Example> = data.examples.iter().collect();
        let mut double = single.clone();
        double.extend(single.iter().copied());
        let (l1, g1) = cpll_grad(&ddn, &single);
        let (l2, g2) = cpll_grad(&ddn, &double);
        assert!((l2 - 2.0 * l1).abs() < 1e-12 * l1.abs().max(1.0));
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert!((b - 2.0 * a).abs() < 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn full_batch_joint_training_is_monotone() {
        let mut ddn = random_ddn(2, 2, 2, false, 41);
        let data = tiny_dataset(30, 2, 2, 42);
        let cfg = JointConfig {
            epochs: 50,
            batch_size: data.examples.len(),
            initial_lr: 1e-4,
            lr_decay: 1.0,
            decay_every: 1,
            l2: 0.0,
            seed: 5,
        };
        let report = train_joint(&mut ddn, &data, &cfg).unwrap();
        for w in report.epoch_values.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn zero_epochs_leaves_the_model_alone() {
        let mut ddn = random_ddn(2, 2, 2, true, 51);
        let before = ddn.params_flat();
        let data = tiny_dataset(10, 2, 2, 52);
        let report =
            train_joint(&mut ddn, &data, &JointConfig { epochs: 0, ..Default::default() })
                .unwrap();
        assert!(report.epoch_values.is_empty());
        assert_eq!(ddn.params_flat(), before);
    }

    #[test]
    fn joint_training_reports_divergence() {
        let mut ddn = random_ddn(2, 2, 2, true, 61);
        let data = tiny_dataset(10, 2, 2, 62);
        // Parameters of 1e200 overflow the head's output pre-activation to
        // infinity, so either the first step's gradients or the epoch loss go
        // non-finite and training must stop with a divergence error.
        let huge = vec![1e200; ddn.params_flat().len()];
        ddn.set_params_flat(&huge);
        let cfg = JointConfig {
            epochs: 2,
            initial_lr: 0.1,
            lr_decay: 1.0,
            decay_every: 1,
            l2: 0.0,
            ..Default::default()
        };
        assert!(matches!(train_joint(&mut ddn, &data, &cfg), Err(Error::Divergence(_))));
    }

    #[test]
    fn pretraining_requires_one_output_per_label() {
        let mut rng = Rng::new(71);
        let mut backbone = Backbone::new(3, 2, &[4], &mut rng);
        let data = tiny_dataset(5, 3, 3, 72);
        let err = pretrain_backbone(&mut backbone, &data, &SgdConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn pretraining_solves_the_copy_task() {
        // v = x exactly: labels are perfectly recoverable.
        let mut rng = Rng::new(81);
        let mut data = Dataset::new(3, 3).unwrap();
        for i in 0..400 {
            let labels: Vec<u8> = (0..3).map(|_| rng.bernoulli(0.5) as u8).collect();
            let features = labels.iter().map(|&b| b as f64).collect();
            data.push(Example { id: format!("c{i}"), features, labels }).unwrap();
        }
        let mut backbone = Backbone::new(3, 3, &Backbone::default_hidden(3, 3), &mut rng);
        let report = pretrain_backbone(
            &mut backbone,
            &data,
            &SgdConfig { epochs: 40, learning_rate: 0.5, l2: 0.0, seed: 1, ..Default::default() },
        )
        .unwrap();
        assert!(report.epoch_values.last().unwrap() < &0.1);
        let mut correct = 0usize;
        let mut total = 0usize;
        for ex in &data.examples {
            let e = backbone.embed(&ex.features);
            for (p, &t) in e.iter().zip(&ex.labels) {
                correct += ((*p > 0.5) as u8 == t) as usize;
                total += 1;
            }
        }
        assert!(correct as f64 / total as f64 >= 0.99, "{correct}/{total}");
    }

    #[test]
    fn pretraining_on_noise_recovers_base_rates() {
        // Features carry nothing; the BCE optimum is the label base rate.
        let mut rng = Rng::new(91);
        let mut data = Dataset::new(2, 2).unwrap();
        for i in 0..600 {
            let features = vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let labels = vec![rng.bernoulli(0.3) as u8, rng.bernoulli(0.7) as u8];
            data.push(Example { id: format!("n{i}"), features, labels }).unwrap();
        }
        let base: Vec<f64> = (0..2)
            .map(|j| {
                data.examples.iter().map(|ex| ex.labels[j] as f64).sum::<f64>()
                    / data.examples.len() as f64
            })
            .collect();
        let mut backbone = Backbone::new(2, 2, &[8], &mut rng);
        pretrain_backbone(
            &mut backbone,
            &data,
            &SgdConfig { epochs: 30, learning_rate: 0.2, l2: 0.001, seed: 2, ..Default::default() },
        )
        .unwrap();
        for j in 0..2 {
            let mean: f64 = data
                .examples
                .iter()
                .map(|ex| backbone.embed(&ex.features)[j])
                .sum::<f64>()
                / data.examples.len() as f64;
            assert!((mean - base[j]).abs() <= 0.05, "label {j}: {mean} vs {}", base[j]);
        }
    }

    #[test]
    fn pretraining_zero_epochs_changes_nothing() {
        let mut rng = Rng::new(93);
        let mut backbone = Backbone::new(2, 2, &[4], &mut rng);
        let before = backbone.net.params_flat();
        let data = tiny_dataset(5, 2, 2, 94);
        pretrain_backbone(&mut backbone, &data, &SgdConfig { epochs: 0, ..Default::default() })
            .unwrap();
        assert_eq!(backbone.net.params_flat(), before);
    }

    /// A two-label head whose conditionals come from the joint table
    /// [p00, p01, p10, p11] = [0.1, 0.2, 0.3, 0.4] (consistent by
    /// construction). Exact marginals: P(x0=1) = 0.7, P(x1=1) = 0.6.
    fn consistent_two_label_ddn() -> DeepDependencyNetwork {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        // P(x0=1|x1=0) = .3/.4, P(x0=1|x1=1) = .4/.6.
        let c0 = LrClassifier {
            weights: vec![0.0, logit(0.4 / 0.6) - logit(0.75)],
            bias: logit(0.75),
        };
        // P(x1=1|x0=0) = .2/.3, P(x1=1|x0=1) = .4/.7.
        let c1 = LrClassifier {
            weights: vec![0.0, logit(4.0 / 7.0) - logit(2.0 / 3.0)],
            bias: logit(2.0 / 3.0),
        };
        let head = ConditionalDn {
            evidence_dim: 1,
            label_count: 2,
            classifiers: vec![ConditionalClassifier::Lr(c0), ConditionalClassifier::Lr(c1)],
        };
        let mut rng = Rng::new(0);
        DeepDependencyNetwork::new(Backbone::new(1, 1, &[], &mut rng), head).unwrap()
    }

    #[test]
    fn mixture_estimator_tracks_an_enumerated_joint() {
        let ddn = consistent_two_label_ddn();
        let cfg = DdnGibbsConfig { n_samples: 20_000, seed: 3, ..Default::default() };
        let est = infer(&ddn, &[0.0], &cfg);
        assert!((est.p[0] - 0.7).abs() < 0.01, "p0 = {}", est.p[0]);
        assert!((est.p[1] - 0.6).abs() < 0.01, "p1 = {}", est.p[1]);
    }

    #[test]
    fn label_independent_head_is_exact_for_any_sample_count() {
        // Head reads only the embedding; conditionals never vary with the
        // label state, so the mixture average is exactly the conditional.
        let mut head = ConditionalDn::new_lr(1, 2).unwrap();
        for clf in &mut head.classifiers {
            if let ConditionalClassifier::Lr(lr) = clf {
                lr.weights[0] = 2.0; // e-slot only; label slot stays 0
                lr.bias = -0.5;
            }
        }
        let mut rng = Rng::new(4);
        let ddn = DeepDependencyNetwork::new(Backbone::new(1, 1, &[], &mut rng), head).unwrap();
        let e = ddn.backbone.embed(&[0.3]);
        let direct = ddn.head.conditional(0, &e, &[0, 0]);
        for n_samples in [1usize, 2, 17] {
            let est = infer(&ddn, &[0.3], &DdnGibbsConfig { n_samples, seed: 9, ..Default::default() });
            assert_eq!(est.p[0], direct);
            assert_eq!(est.p[1], direct);
        }
    }

    #[test]
    fn symmetric_head_gives_symmetric_marginals() {
        // Both conditionals are sigmoid(1.5 * other): a consistent pair
        // whose joint is symmetric in the two labels.
        let mk = || LrClassifier { weights: vec![0.0, 1.5], bias: 0.0 };
        let head = ConditionalDn {
            evidence_dim: 1,
            label_count: 2,
            classifiers: vec![
                ConditionalClassifier::Lr(mk()),
                ConditionalClassifier::Lr(mk()),
            ],
        };
        let mut rng = Rng::new(5);
        let ddn = DeepDependencyNetwork::new(Backbone::new(1, 1, &[], &mut rng), head).unwrap();
        let est = infer(&ddn, &[0.0], &DdnGibbsConfig { n_samples: 20_000, seed: 11, ..Default::default() });
        assert!((est.p[0] - est.p[1]).abs() <= 0.02, "{:?}", est.p);
        // Exact marginal by enumeration: states 00,01,10 weigh 1 and 11
        // weighs e^1.5, so P(x0=1) = (1 + e^1.5) / (3 + e^1.5).
        let exact = (1.0 + 1.5f64.exp()) / (3.0 + 1.5f64.exp());
        assert!((est.p[0] - exact).abs() < 0.02, "{} vs {exact}", est.p[0]);
    }

    #[test]
    fn inference_is_bitwise_deterministic() {
        let ddn = random_ddn(2, 2, 3, true, 101);
        let cfg = DdnGibbsConfig { n_samples: 500, seed: 77, ..Default::default() };
        let a = infer(&ddn, &[0.2, -0.4], &cfg);
        let b = infer(&ddn, &[0.2, -0.4], &cfg);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.p), bits(&b.p));
    }

    #[test]
    fn trace_rows_match_the_estimate() {
        let ddn = random_ddn(2, 2, 3, false, 111);
        let cfg = DdnGibbsConfig { n_samples: 50, burn_in: 10, seed: 13, ..Default::default() };
        let (est, trace) = infer_traced(&ddn, &[0.1, 0.9], &cfg);
        assert_eq!(trace.samples.len(), 50);
        assert_eq!(trace.permutations.len(), 50);
        assert_eq!(trace.conditionals.len(), 50);
        for i in 0..3 {
            let mean: f64 =
                trace.conditionals.iter().map(|row| row[i]).sum::<f64>() / 50.0;
            assert!((mean - est.p[i]).abs() < 1e-12);
        }
        // Conditionals at each stored sample must re-evaluate identically.
        let e = ddn.backbone.embed(&[0.1, 0.9]);
        for (s, row) in trace.samples.iter().zip(&trace.conditionals) {
            for i in 0..3 {
                assert_eq!(ddn.head.conditional(i, &e, s), row[i]);
            }
        }
    }

    #[test]
    fn zero_budget_still_returns_an_estimate() {
        let ddn = random_ddn(2, 2, 2, false, 121);
        let cfg = DdnGibbsConfig {
            n_samples: 1_000_000,
            burn_in: 1_000_000,
            time_budget: Some(Duration::from_millis(0)),
            seed: 1,
        };
        let est = infer(&ddn, &[0.0, 0.0], &cfg);
        assert!(est.diagnostics.truncated_by_budget);
        assert_eq!(est.diagnostics.iterations, 1);
        assert!(est.p.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
    }

    #[test]
    fn dataset_inference_is_order_independent() {
        let ddn = random_ddn(2, 2, 2, false, 131);
        let mut data = tiny_dataset(6, 2, 2, 132);
        let cfg = DdnGibbsConfig { n_samples: 200, seed: 50, ..Default::default() };
        let probs = infer_dataset(&ddn, &data, &cfg).unwrap();
        // Reverse the dataset: each id must keep its exact marginals.
        data.examples.reverse();
        let reversed = infer_dataset(&ddn, &data, &cfg).unwrap();
        for (row, rev) in probs.iter().zip(reversed.iter().rev()) {
            assert_eq!(
                row.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                rev.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn predict_labels_uses_a_strict_threshold() {
        assert_eq!(predict_labels(&[0.29, 0.31], 0.3), vec![0, 1]);
        assert_eq!(predict_labels(&[0.0, 0.7], 0.0), vec![0, 1]);
        assert_eq!(predict_labels(&[0.4], 0.5), vec![0]);
        assert_eq!(predict_labels(&[0.4], 0.3), vec![1]);
        assert_eq!(predict_labels(&[0.5], 0.5), vec![0]);
    }
}
