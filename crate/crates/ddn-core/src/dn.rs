//! Conditional dependency network: one binary classifier per label, each
//! predicting its label from the evidence vector plus all *other* labels.
//!
//! Classifier input layout is fixed everywhere: the `m` evidence values
//! first, then the `n - 1` other labels in ascending index order with the
//! classifier's own label skipped. Training is teacher-forced (true labels
//! on the input side) and embarrassingly parallel across classifiers; each
//! classifier draws from its own RNG stream, so the result is identical no
//! matter how many threads run.

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads};
use crate::numeric::{ln_sigmoid, sigmoid};
use crate::rng::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Logistic-regression conditional: `p = sigmoid(w . input + bias)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LrClassifier {
    pub fn zeros(input_dim: usize) -> Self {
        LrClassifier { weights: vec![0.0; input_dim], bias: 0.0 }
    }

    pub fn logit(&self, input: &[f64]) -> f64 {
        crate::numeric::dot(&self.weights, input) + self.bias
    }
}

/// One conditional classifier; both variants expose the same probability
/// and gradient interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionalClassifier {
    Lr(LrClassifier),
    Mlp { net: Mlp },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Lr,
    Mlp,
}

impl ConditionalClassifier {
    pub fn input_dim(&self) -> usize {
        match self {
            ConditionalClassifier::Lr(lr) => lr.weights.len(),
            ConditionalClassifier::Mlp { net } => net.input_dim(),
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            ConditionalClassifier::Lr(_) => ClassifierKind::Lr,
            ConditionalClassifier::Mlp { .. } => ClassifierKind::Mlp,
        }
    }

    /// `P(label = 1 | input)`.
    pub fn predict(&self, input: &[f64]) -> f64 {
        match self {
            ConditionalClassifier::Lr(lr) => sigmoid(lr.logit(input)),
            ConditionalClassifier::Mlp { net } => net.forward(input)[0],
        }
    }
}

/// Gradients of the (unregularized) cross-entropy of one prediction, with
/// respect to the classifier parameters and to the input vector.
#[derive(Debug, Clone)]
pub enum ClassifierGrads {
    Lr { weights: Vec<f64>, bias: f64, input: Vec<f64> },
    Mlp(MlpGrads),
}

impl ClassifierGrads {
    pub fn input(&self) -> &[f64] {
        match self {
            ClassifierGrads::Lr { input, .. } => input,
            ClassifierGrads::Mlp(g) => &g.input,
        }
    }
}

/// Cross-entropy `-(t ln p + (1-t) ln(1-p))` of one example and its exact
/// gradients. Regularization is applied by the optimizers at step time, so
/// a perfectly confident correct prediction has an exactly zero parameter
/// gradient here.
pub fn cross_entropy_grad(
    clf: &ConditionalClassifier,
    input: &[f64],
    target: u8,
) -> (f64, ClassifierGrads) {
    debug_assert!(target <= 1);
    let t = target as f64;
    match clf {
        ConditionalClassifier::Lr(lr) => {
            let z = lr.logit(input);
            let p = sigmoid(z);
            let loss = -(t * ln_sigmoid(z) + (1.0 - t) * ln_sigmoid(-z));
            let dz = p - t;
            let weights = input.iter().map(|&x| dz * x).collect();
            let ginput = lr.weights.iter().map(|&w| dz * w).collect();
            (loss, ClassifierGrads::Lr { weights, bias: dz, input: ginput })
        }
        ConditionalClassifier::Mlp { net } => {
            let (loss, trace) = net.bce_loss_trace(input, &[t]);
            let dz = [trace.output()[0] - t];
            (loss, ClassifierGrads::Mlp(net.backward(&trace, &dz)))
        }
    }
}

/// The head: `label_count` classifiers over a shared evidence width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalDn {
    pub evidence_dim: usize,
    pub label_count: usize,
    pub classifiers: Vec<ConditionalClassifier>,
}

impl ConditionalDn {
    /// All-zero logistic-regression head.
    pub fn new_lr(evidence_dim: usize, label_count: usize) -> Result<Self> {
        if label_count < 2 {
            return Err(Error::Validation(
                "a dependency network needs at least 2 labels".into(),
            ));
        }
        let input_dim = evidence_dim + label_count - 1;
        Ok(ConditionalDn {
            evidence_dim,
            label_count,
            classifiers: (0..label_count)
                .map(|_| ConditionalClassifier::Lr(LrClassifier::zeros(input_dim)))
                .collect(),
        })
    }

    /// MLP head with the given hidden widths; classifier `i` is initialized
    /// from stream `(seed, "dn-init-i")`.
    pub fn new_mlp(
        evidence_dim: usize,
        label_count: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if label_count < 2 {
            return Err(Error::Validation(
                "a dependency network needs at least 2 labels".into(),
            ));
        }
        let input_dim = evidence_dim + label_count - 1;
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(ConditionalDn {
            evidence_dim,
            label_count,
            classifiers: (0..label_count)
                .map(|i| {
                    let mut rng = Rng::stream(seed, &format!("dn-init-{i}"));
                    ConditionalClassifier::Mlp { net: Mlp::new(&dims, &mut rng) }
                })
                .collect(),
        })
    }

    /// Hidden widths used when no explicit architecture is requested: four
    /// hidden layers, each `max(2 * (evidence_dim + label_count), 64)` wide.
    pub fn default_mlp_hidden(evidence_dim: usize, label_count: usize) -> Vec<usize> {
        vec![(2 * (evidence_dim + label_count)).max(64); 4]
    }

    pub fn kind(&self) -> ClassifierKind {
        self.classifiers[0].kind()
    }

    /// Assembles classifier `i`'s input `[e | x_without_i]` from a full
    /// label vector.
    pub fn input_for(&self, i: usize, evidence: &[f64], labels: &[u8]) -> Vec<f64> {
        assert!(i < self.label_count);
        assert_eq!(evidence.len(), self.evidence_dim, "evidence width mismatch");
        assert_eq!(labels.len(), self.label_count, "label width mismatch");
        let mut input = Vec::with_capacity(self.evidence_dim + self.label_count - 1);
        input.extend_from_slice(evidence);
        for (j, &x) in labels.iter().enumerate() {
            if j != i {
                input.push(x as f64);
            }
        }
        input
    }

    /// `P(x_i = 1 | e, x_-i)`. The value of `labels[i]` is ignored.
    pub fn conditional(&self, i: usize, evidence: &[f64], labels: &[u8]) -> f64 {
        let input = self.input_for(i, evidence, labels);
        self.classifiers[i].predict(&input)
    }

    /// Checks every classifier has the width implied by `(m, n)`.
    pub fn validate(&self) -> Result<()> {
        if self.classifiers.len() != self.label_count {
            return Err(Error::Dimension(format!(
                "{} classifiers for {} labels",
                self.classifiers.len(),
                self.label_count
            )));
        }
        let want = self.evidence_dim + self.label_count - 1;
        for (i, c) in self.classifiers.iter().enumerate() {
            if c.input_dim() != want {
                return Err(Error::Dimension(format!(
                    "classifier {i} takes {} inputs, expected {want}",
                    c.input_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Settings for pipeline (per-classifier, teacher-forced) head training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L1 strength for LR classifiers (proximal step), L2 strength for MLP
    /// classifiers (decoupled weight decay).
    pub reg: f64,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            reg: 0.01,
            seed: 0,
        }
    }
}

/// Trains every classifier independently on `(evidence, labels)` rows with
/// teacher forcing. Returns the mean data-term loss per epoch (averaged over
/// classifiers and examples). Divergence is reported per classifier.
pub fn train_pipeline(
    dn: &mut ConditionalDn,
    rows: &[(Vec<f64>, Vec<u8>)],
    cfg: &HeadTrainConfig,
) -> Result<crate::mrf::learning::TrainReport> {
    if rows.is_empty() {
        return Err(Error::Validation("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Validation("batch_size must be >= 1".into()));
    }
    for (e, x) in rows {
        if e.len() != dn.evidence_dim || x.len() != dn.label_count {
            return Err(Error::Dimension(format!(
                "row has shape ({}, {}), head expects ({}, {})",
                e.len(),
                x.len(),
                dn.evidence_dim,
                dn.label_count
            )));
        }
    }

    // Pre-build each classifier's design matrix once (input rows + target).
    let label_count = dn.label_count;
    let results: Vec<std::result::Result<(ConditionalClassifier, Vec<f64>), String>> = dn
        .classifiers
        .par_iter()
        .enumerate()
        .map(|(i, clf)| {
            let inputs: Vec<Vec<f64>> = rows
                .iter()
                .map(|(e, x)| {
                    let mut input = Vec::with_capacity(e.len() + label_count - 1);
                    input.extend_from_slice(e);
                    for (j, &b) in x.iter().enumerate() {
                        if j != i {
                            input.push(b as f64);
                        }
                    }
                    input
                })
                .collect();
            let targets: Vec<u8> = rows.iter().map(|(_, x)| x[i]).collect();
            train_one_classifier(clf.clone(), &inputs, &targets, cfg, i)
        })
        .collect();

    let mut per_classifier_losses = Vec::with_capacity(label_count);
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok((clf, losses)) => {
                dn.classifiers[i] = clf;
                per_classifier_losses.push(losses);
            }
            Err(msg) => return Err(Error::Divergence(format!("classifier {i}: {msg}"))),
        }
    }

    // Mean loss curve across classifiers.
    let epoch_values = (0..cfg.epochs)
        .map(|t| {
            per_classifier_losses.iter().map(|l| l[t]).sum::<f64>() / label_count as f64
        })
        .collect();
    Ok(crate::mrf::learning::TrainReport { epoch_values })
}

fn train_one_classifier(
    mut clf: ConditionalClassifier,
    inputs: &[Vec<f64>],
    targets: &[u8],
    cfg: &HeadTrainConfig,
    index: usize,
) -> std::result::Result<(ConditionalClassifier, Vec<f64>), String> {
    let m = inputs.len();
    let mut rng = Rng::stream(cfg.seed, &format!("dn-train-{index}"));
    let mut order: Vec<usize> = (0..m).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            match &mut clf {
                ConditionalClassifier::Lr(lr) => {
                    let mut gw = vec![0.0; lr.weights.len()];
                    let mut gb = 0.0;
                    for &r in chunk {
                        let dz = sigmoid(lr.logit(&inputs[r])) - targets[r] as f64;
                        for (g, &x) in gw.iter_mut().zip(&inputs[r]) {
                            *g += dz * x;
                        }
                        gb += dz;
                    }
                    let inv = 1.0 / chunk.len() as f64;
                    // Proximal L1: descend on the data term, then shrink.
                    for (w, g) in lr.weights.iter_mut().zip(&gw) {
                        let stepped = *w - cfg.learning_rate * g * inv;
                        *w = soft_threshold(stepped, cfg.learning_rate * cfg.reg);
                    }
                    lr.bias -= cfg.learning_rate * gb * inv;
                    if !lr.bias.is_finite() || lr.weights.iter().any(|w| !w.is_finite()) {
                        return Err(format!("non-finite parameter at epoch {epoch}"));
                    }
                }
                ConditionalClassifier::Mlp { net } => {
                    let mut acc = MlpGrads::zeros_like(net);
                    for &r in chunk {
                        let (_, trace) = net.bce_loss_trace(&inputs[r], &[targets[r] as f64]);
                        let dz = [trace.output()[0] - targets[r] as f64];
                        acc.add(&net.backward(&trace, &dz));
                    }
                    // Decoupled L2, then the averaged gradient step.
                    net.decay_weights(1.0 - cfg.learning_rate * cfg.reg);
                    net.add_scaled(&acc, -cfg.learning_rate / chunk.len() as f64);
                    if net.has_non_finite() {
                        return Err(format!("non-finite parameter at epoch {epoch}"));
                    }
                }
            }
        }
        // Full-data data-term loss after the epoch.
        let mut total = 0.0;
        for (input, &t) in inputs.iter().zip(targets) {
            total += cross_entropy_grad(&clf, input, t).0;
        }
        let mean = total / m as f64;
        if !mean.is_finite() {
            return Err(format!("non-finite loss at epoch {epoch}"));
        }
        losses.push(mean);
    }
    Ok((clf, losses))
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
