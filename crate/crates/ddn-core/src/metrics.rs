//! Multi-label evaluation metrics.
//!
//! All functions take a score matrix (rows = examples, columns = labels,
//! entries in [0,1]) and a same-shaped binary truth matrix. Thresholding is
//! strict everywhere: a label is predicted iff its score is strictly
//! greater than the threshold, matching prediction elsewhere in the crate.
//!
//! Ranking metrics break ties by the worst rank of the tie group: a score
//! tied with `k` others is ranked below all of them. The policy is
//! deterministic, identical for mAP and LRAP, and makes every metric
//! invariant to permuting example order even in the presence of ties.

use crate::error::{Error, Result};

/// Checks the score/truth pair: same shape, at least one example, scores
/// in [0,1], truth binary. Metrics treat violations as contract errors
/// (panics); [`validate_pair`] is the fallible version for callers that
/// take the matrices from user files.
fn check(scores: &[Vec<f64>], truth: &[Vec<u8>]) {
    validate_pair(scores, truth).expect("invalid score/truth matrices");
}

/// Same checks as the metric contracts, but as a recoverable error.
pub fn validate_pair(scores: &[Vec<f64>], truth: &[Vec<u8>]) -> Result<()> {
    if scores.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} score rows vs {} truth rows",
            scores.len(),
            truth.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Validation("metrics need at least one example".into()));
    }
    let n = scores[0].len();
    if n == 0 {
        return Err(Error::Validation("metrics need at least one label".into()));
    }
    for (r, (s, t)) in scores.iter().zip(truth).enumerate() {
        if s.len() != n || t.len() != n {
            return Err(Error::Dimension(format!(
                "row {r} has {} scores and {} truth bits, expected {n}",
                s.len(),
                t.len()
            )));
        }
        if let Some(bad) = s.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("row {r}: score {bad} outside [0,1]")));
        }
        if t.iter().any(|&b| b > 1) {
            return Err(Error::Validation(format!("row {r}: truth bits must be 0 or 1")));
        }
    }
    Ok(())
}

/// Fraction of examples whose thresholded prediction matches the truth
/// row exactly.
pub fn subset_accuracy(scores: &[Vec<f64>], truth: &[Vec<u8>], threshold: f64) -> f64 {
    check(scores, truth);
    assert!((0.0..=1.0).contains(&threshold), "threshold must be in [0,1]");
    let exact = scores
        .iter()
        .zip(truth)
        .filter(|(s, t)| s.iter().zip(t.iter()).all(|(&v, &b)| (v > threshold) as u8 == b))
        .count();
    exact as f64 / scores.len() as f64
}

/// Mean over examples of |pred ∩ true| / |pred ∪ true|, with the
/// empty-vs-empty case defined as 1.
pub fn jaccard_index(scores: &[Vec<f64>], truth: &[Vec<u8>], threshold: f64) -> f64 {
    check(scores, truth);
    assert!((0.0..=1.0).contains(&threshold), "threshold must be in [0,1]");
    let mut total = 0.0;
    for (s, t) in scores.iter().zip(truth) {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&v, &b) in s.iter().zip(t) {
            let p = (v > threshold) as u8;
            inter += (p == 1 && b == 1) as usize;
            union += (p == 1 || b == 1) as usize;
        }
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    total / scores.len() as f64
}

/// Macro mean over labels of average precision. A positive example's
/// precision is (positives ranked at or above it) / (its worst-tie rank);
/// AP averages that over the label's positives. Labels without a single
/// positive example cannot be ranked and are skipped; their indices come
/// back as warnings. If every label is skipped the mean is 0.
pub fn mean_average_precision(scores: &[Vec<f64>], truth: &[Vec<u8>]) -> (f64, Vec<usize>) {
    check(scores, truth);
    let n = scores[0].len();
    let mut skipped = Vec::new();
    let mut sum = 0.0;
    let mut used = 0usize;
    for label in 0..n {
        let col: Vec<f64> = scores.iter().map(|row| row[label]).collect();
        let pos: Vec<bool> = truth.iter().map(|row| row[label] == 1).collect();
        match average_precision(&col, &pos) {
            Some(ap) => {
                sum += ap;
                used += 1;
            }
            None => skipped.push(label),
        }
    }
    let map = if used == 0 { 0.0 } else { sum / used as f64 };
    (map, skipped)
}

/// AP for one label; `None` when there are no positives.
fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    // Sort indices by descending score; walk tie groups so each member is
    // charged the group's worst rank.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut sum = 0.0;
    let mut seen_pos = 0usize; // positives ranked strictly above this group
    let mut at = 0usize;
    while at < order.len() {
        let mut end = at;
        while end < order.len() && scores[order[end]] == scores[order[at]] {
            end += 1;
        }
        let group_pos = order[at..end].iter().filter(|&&i| positive[i]).count();
        let hits = seen_pos + group_pos; // positives at rank <= worst rank
        let worst_rank = end; // 1-based rank of the group's last member
        sum += group_pos as f64 * hits as f64 / worst_rank as f64;
        seen_pos = hits;
        at = end;
    }
    Some(sum / n_pos as f64)
}

/// Label-ranking average precision: per example, each true label ℓ scores
/// |{true k : s_k ≥ s_ℓ}| / |{k : s_k ≥ s_ℓ}| (that is, ties take the
/// worst rank); average over true labels, then over examples. Examples
/// without any true label are skipped; 0 if every example is skipped.
pub fn lrap(scores: &[Vec<f64>], truth: &[Vec<u8>]) -> f64 {
    check(scores, truth);
    let mut total = 0.0;
    let mut used = 0usize;
    for (s, t) in scores.iter().zip(truth) {
        let true_idx: Vec<usize> = (0..s.len()).filter(|&i| t[i] == 1).collect();
        if true_idx.is_empty() {
            continue;
        }
        let mut example = 0.0;
        for &l in &true_idx {
            let num = true_idx.iter().filter(|&&k| s[k] >= s[l]).count();
            let den = s.iter().filter(|&&v| v >= s[l]).count();
            example += num as f64 / den as f64;
        }
        total += example / true_idx.len() as f64;
        used += 1;
    }
    if used == 0 {
        0.0
    } else {
        total / used as f64
    }
}

/// Per-category (macro) and overall (micro) precision/recall/F1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfSet {
    /// Macro precision: mean over labels with at least one prediction.
    pub cp: f64,
    /// Macro recall: mean over labels with at least one positive.
    pub cr: f64,
    /// Harmonic mean of `cp` and `cr`.
    pub cf1: f64,
    /// Micro precision: total true positives / total predictions.
    pub op: f64,
    /// Micro recall: total true positives / total positives.
    pub or_: f64,
    /// Harmonic mean of `op` and `or_`.
    pub of1: f64,
}

/// How scores become predicted label sets for the PRF suite.
#[derive(Debug, Clone, Copy)]
pub enum PrfMode {
    /// Predict every label scoring strictly above the value.
    Threshold(f64),
    /// Predict each example's k highest-scoring labels (ties at the cut
    /// resolved toward the lower label index).
    TopK(usize),
}

/// Computes the six appendix-style precision/recall/F1 numbers under the
/// given prediction rule. Macro averages skip labels whose denominator is
/// empty; micro ratios with an empty denominator are defined as 0.
pub fn prf_suite(scores: &[Vec<f64>], truth: &[Vec<u8>], mode: PrfMode) -> PrfSet {
    check(scores, truth);
    let n = scores[0].len();
    let pred: Vec<Vec<u8>> = match mode {
        PrfMode::Threshold(t) => {
            assert!((0.0..=1.0).contains(&t), "threshold must be in [0,1]");
            scores
                .iter()
                .map(|row| row.iter().map(|&v| (v > t) as u8).collect())
                .collect()
        }
        PrfMode::TopK(k) => {
            assert!(k >= 1, "top-k needs k >= 1");
            scores.iter().map(|row| top_k_bits(row, k)).collect()
        }
    };

    let mut tp = vec![0usize; n];
    let mut predicted = vec![0usize; n];
    let mut actual = vec![0usize; n];
    for (p, t) in pred.iter().zip(truth) {
        for i in 0..n {
            tp[i] += (p[i] == 1 && t[i] == 1) as usize;
            predicted[i] += (p[i] == 1) as usize;
            actual[i] += (t[i] == 1) as usize;
        }
    }

    let macro_mean = |num: &[usize], den: &[usize]| {
        let mut sum = 0.0;
        let mut used = 0usize;
        for i in 0..n {
            if den[i] > 0 {
                sum += num[i] as f64 / den[i] as f64;
                used += 1;
            }
        }
        if used == 0 {
            0.0
        } else {
            sum / used as f64
        }
    };
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };

    let cp = macro_mean(&tp, &predicted);
    let cr = macro_mean(&tp, &actual);
    let op = ratio(tp.iter().sum(), predicted.iter().sum());
    let or_ = ratio(tp.iter().sum(), actual.iter().sum());
    PrfSet { cp, cr, cf1: f1(cp, cr), op, or_, of1: f1(op, or_) }
}

/// Bit vector with 1s on the k highest-scoring labels (stable toward the
/// lower index on ties).
fn top_k_bits(row: &[f64], k: usize) -> Vec<u8> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
    let mut bits = vec![0u8; row.len()];
    for &i in order.iter().take(k) {
        bits[i] = 1;
    }
    bits
}

/// Every metric this crate reports for one (scores, truth) pair.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub map: f64,
    pub lrap: f64,
    pub sa: f64,
    pub ji: f64,
    /// Threshold used for SA, JI, and the threshold PRF block.
    pub threshold: f64,
    pub prf_threshold: PrfSet,
    /// Present when a top-k PRF block was requested; carries `(k, prf)`.
    pub prf_topk: Option<(usize, PrfSet)>,
    /// Labels skipped from the mAP mean for lack of positives.
    pub map_skipped_labels: Vec<usize>,
}

/// Computes the full report at one threshold, optionally adding a top-k
/// PRF block.
pub fn full_report(
    scores: &[Vec<f64>],
    truth: &[Vec<u8>],
    threshold: f64,
    top_k: Option<usize>,
) -> MetricReport {
    let (map, map_skipped_labels) = mean_average_precision(scores, truth);
    MetricReport {
        map,
        lrap: lrap(scores, truth),
        sa: subset_accuracy(scores, truth, threshold),
        ji: jaccard_index(scores, truth, threshold),
        threshold,
        prf_threshold: prf_suite(scores, truth, PrfMode::Threshold(threshold)),
        prf_topk: top_k.map(|k| (k, prf_suite(scores, truth, PrfMode::TopK(k)))),
        map_skipped_labels,
    }
}

impl MetricReport {
    /// Flat `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: f64| out.push_str(&format!("{k}={v:.6}\n"));
        kv("map", self.map);
        kv("lrap", self.lrap);
        kv("sa", self.sa);
        kv("ji", self.ji);
        kv("threshold", self.threshold);
        let prf = |out: &mut String, suffix: &str, s: &PrfSet| {
            out.push_str(&format!(
                "cp{suffix}={:.6}\ncr{suffix}={:.6}\ncf1{suffix}={:.6}\n\
                 op{suffix}={:.6}\nor{suffix}={:.6}\nof1{suffix}={:.6}\n",
                s.cp, s.cr, s.cf1, s.op, s.or_, s.of1
            ));
        };
        prf(&mut out, "", &self.prf_threshold);
        if let Some((k, s)) = &self.prf_topk {
            out.push_str(&format!("topk={k}\n"));
            prf(&mut out, "_topk", s);
        }
        if !self.map_skipped_labels.is_empty() {
            let list: Vec<String> =
                self.map_skipped_labels.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("map_skipped_labels={}\n", list.join(",")));
        }
        out
    }

    /// Aligned two-column text for humans.
    pub fn to_aligned(&self) -> String {
        let mut out = String::new();
        let mut row = |k: &str, v: f64| out.push_str(&format!("{k:<22}{v:.6}\n"));
        row("mAP", self.map);
        row("LRAP", self.lrap);
        row(&format!("SA@{}", self.threshold), self.sa);
        row(&format!("JI@{}", self.threshold), self.ji);
        let prf = |out: &mut String, tag: &str, s: &PrfSet| {
            for (name, v) in [
                ("CP", s.cp),
                ("CR", s.cr),
                ("CF1", s.cf1),
                ("OP", s.op),
                ("OR", s.or_),
                ("OF1", s.of1),
            ] {
                out.push_str(&format!("{:<22}{v:.6}\n", format!("{name}{tag}")));
            }
        };
        prf(&mut out, &format!("@{}", self.threshold), &self.prf_threshold);
        if let Some((k, s)) = &self.prf_topk {
            prf(&mut out, &format!("@top{k}"), s);
        }
        if !self.map_skipped_labels.is_empty() {
            out.push_str(&format!(
                "(mAP skipped {} label(s) without positives)\n",
                self.map_skipped_labels.len()
            ));
        }
        out
    }
}
