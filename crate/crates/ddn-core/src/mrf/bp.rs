//! Cluster-graph belief propagation with mini-bucket clustering.
//!
//! Construction: condition on the evidence (so only label variables
//! remain), eliminate variables along a min-degree order, and place each
//! potential in the bucket of its earliest variable. Every bucket is split
//! greedily (first fit, arrival order) into mini-buckets whose joint scope
//! stays within `i_bound` variables; each mini-bucket becomes a cluster.
//! A cluster's schematic message (its scope minus the bucket variable) is
//! routed to the bucket where that message would be processed, creating a
//! graph edge with the message scope as separator; mini-buckets of the same
//! bucket are chained with separator `{v}`. When every bucket fits in a
//! single mini-bucket the graph is the bucket tree and the fixed point is
//! exact — that happens exactly when `i_bound >=` [`induced_width`].
//!
//! Inference: damped synchronous sum-product with normalized messages,
//! iterated until the largest message change falls below `tol`.

use super::{Diagnostics, InferenceMethod, MarginalEstimates, PairwiseMrf, ReducedModel};
use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct BpConfig {
    /// Maximum variables in one cluster.
    pub i_bound: usize,
    pub max_iters: usize,
    /// New message = `damping * old + (1 - damping) * computed`.
    pub damping: f64,
    /// Convergence threshold on the max absolute message change.
    pub tol: f64,
    pub time_budget: Option<Duration>,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            i_bound: 10,
            max_iters: 1000,
            damping: 0.5,
            tol: 1e-9,
            time_budget: None,
        }
    }
}

/// Maximum number of variables in any bucket along the min-degree
/// elimination order of the label graph — the smallest `i_bound` for which
/// every bucket fits in one mini-bucket, making BP exact.
pub fn induced_width(mrf: &PairwiseMrf) -> usize {
    let red = mrf.reduce(&vec![0; mrf.n_evidence()]);
    let edges: Vec<(usize, usize)> = red.pairs.iter().map(|&(a, b, _)| (a, b)).collect();
    min_degree_order(red.n, &edges).1
}

/// Min-degree elimination order (ties to the lowest index) and the maximum
/// bucket size (eliminated variable plus its neighbors in the filled graph).
fn min_degree_order(n: usize, edges: &[(usize, usize)]) -> (Vec<usize>, usize) {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        adj[a].insert(b);
        adj[b].insert(a);
    }
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    let mut max_cluster = if n > 0 { 1 } else { 0 };
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| alive[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .unwrap();
        max_cluster = max_cluster.max(adj[v].len() + 1);
        let neighbors: Vec<usize> = adj[v].iter().copied().collect();
        // Fill edges between the remaining neighbors.
        for (i, &p) in neighbors.iter().enumerate() {
            for &q in &neighbors[i + 1..] {
                adj[p].insert(q);
                adj[q].insert(p);
            }
        }
        for &p in &neighbors {
            adj[p].remove(&v);
        }
        alive[v] = false;
        order.push(v);
    }
    (order, max_cluster)
}

/// A factor over a sorted variable scope; `table[idx]` is the value of the
/// assignment where bit `k` of `idx` gives the value of `scope[k]`.
#[derive(Debug, Clone)]
struct Potential {
    scope: Vec<usize>,
    table: Vec<f64>,
}

impl Potential {
    fn uniform(scope: Vec<usize>) -> Self {
        let size = 1usize << scope.len();
        Potential {
            table: vec![1.0 / size as f64; size],
            scope,
        }
    }
}

/// Multiplies `src` into `dst` (src scope must be a subset of dst scope).
fn mul_into(dst_scope: &[usize], dst: &mut [f64], src: &Potential) {
    // For each src var, its bit position inside dst.
    let positions: Vec<usize> = src
        .scope
        .iter()
        .map(|v| dst_scope.binary_search(v).expect("src scope not within dst scope"))
        .collect();
    for (idx, value) in dst.iter_mut().enumerate() {
        let mut sidx = 0usize;
        for (k, &pos) in positions.iter().enumerate() {
            sidx |= ((idx >> pos) & 1) << k;
        }
        *value *= src.table[sidx];
    }
}

/// Sums `src` down to `keep` (a sorted subset of the source scope).
fn marginalize(src_scope: &[usize], src: &[f64], keep: &[usize]) -> Vec<f64> {
    let positions: Vec<usize> = keep
        .iter()
        .map(|v| src_scope.binary_search(v).expect("keep var not in scope"))
        .collect();
    let mut out = vec![0.0; 1usize << keep.len()];
    for (idx, &value) in src.iter().enumerate() {
        let mut kidx = 0usize;
        for (k, &pos) in positions.iter().enumerate() {
            kidx |= ((idx >> pos) & 1) << k;
        }
        out[kidx] += value;
    }
    out
}

fn normalize(table: &mut [f64]) {
    let sum: f64 = table.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        for v in table.iter_mut() {
            *v /= sum;
        }
    }
}

#[derive(Debug)]
struct Cluster {
    scope: Vec<usize>,
    pots: Vec<usize>,
}

#[derive(Debug)]
struct CgEdge {
    a: usize,
    b: usize,
    sep: Vec<usize>,
}

struct ClusterGraph {
    clusters: Vec<Cluster>,
    edges: Vec<CgEdge>,
    potentials: Vec<Potential>,
}

/// An item awaiting placement: an original potential or a schematic message
/// emitted by an already-built cluster.
enum Item {
    Pot(usize),
    Msg { from: usize, scope: Vec<usize> },
}

impl Item {
    fn scope<'a>(&'a self, pots: &'a [Potential]) -> &'a [usize] {
        match self {
            Item::Pot(i) => &pots[*i].scope,
            Item::Msg { scope, .. } => scope,
        }
    }
}

fn build_cluster_graph(red: &ReducedModel, i_bound: usize) -> ClusterGraph {
    let n = red.n;
    let edges_skel: Vec<(usize, usize)> = red.pairs.iter().map(|&(a, b, _)| (a, b)).collect();
    let (order, _) = min_degree_order(n, &edges_skel);
    let mut pos = vec![0usize; n];
    for (i, &v) in order.iter().enumerate() {
        pos[v] = i;
    }

    // Original potentials: a singleton for every variable (weight may be 0,
    // which guarantees each variable appears in some cluster), one pairwise
    // factor per surviving pair feature.
    let mut potentials: Vec<Potential> = Vec::new();
    for (j, &u) in red.unary.iter().enumerate() {
        potentials.push(Potential { scope: vec![j], table: vec![1.0, u.exp()] });
    }
    for &(a, b, w) in &red.pairs {
        potentials.push(Potential {
            scope: vec![a, b],
            table: vec![1.0, 1.0, 1.0, w.exp()],
        });
    }

    // Queue every item at the bucket of its earliest-eliminated variable.
    let earliest = |scope: &[usize]| -> usize {
        *scope.iter().min_by_key(|&&v| pos[v]).expect("empty scope")
    };
    let mut pending: Vec<Vec<Item>> = (0..n).map(|_| Vec::new()).collect();
    for i in 0..potentials.len() {
        pending[earliest(&potentials[i].scope)].push(Item::Pot(i));
    }

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut edges: Vec<CgEdge> = Vec::new();

    for &v in &order {
        let items = std::mem::take(&mut pending[v]);
        if items.is_empty() {
            continue; // cannot happen for label vars (singleton potential), kept for safety
        }
        // Greedy first-fit partition into mini-buckets.
        let mut minibuckets: Vec<(Vec<usize>, Vec<Item>)> = Vec::new(); // (scope, items)
        for item in items {
            let iscope = item.scope(&potentials).to_vec();
            let fit = minibuckets.iter().enumerate().find_map(|(bi, (scope, _))| {
                let mut s: BTreeSet<usize> = scope.iter().copied().collect();
                s.extend(iscope.iter().copied());
                (s.len() <= i_bound).then(|| (bi, s.into_iter().collect::<Vec<_>>()))
            });
            match fit {
                Some((bi, union)) => {
                    minibuckets[bi].0 = union;
                    minibuckets[bi].1.push(item);
                }
                None => minibuckets.push((iscope, vec![item])),
            }
        }

        let mut prev_cluster: Option<usize> = None;
        for (scope, members) in minibuckets {
            let cid = clusters.len();
            let mut pots = Vec::new();
            for item in members {
                match item {
                    Item::Pot(i) => pots.push(i),
                    Item::Msg { from, scope } => edges.push(CgEdge { a: from, b: cid, sep: scope }),
                }
            }
            clusters.push(Cluster { scope: scope.clone(), pots });
            // Chain mini-buckets of the same bucket through the shared var.
            if let Some(prev) = prev_cluster {
                edges.push(CgEdge { a: prev, b: cid, sep: vec![v] });
            }
            prev_cluster = Some(cid);
            // Emit the schematic message for later buckets.
            let msg_scope: Vec<usize> = scope.iter().copied().filter(|&u| u != v).collect();
            if !msg_scope.is_empty() {
                let dst = earliest(&msg_scope);
                pending[dst].push(Item::Msg { from: cid, scope: msg_scope });
            }
        }
    }

    ClusterGraph { clusters, edges, potentials }
}

impl ClusterGraph {
    /// Product of a cluster's potentials and the given incoming messages.
    fn cluster_product(&self, cid: usize, incoming: &[&Potential]) -> Vec<f64> {
        let scope = &self.clusters[cid].scope;
        let mut table = vec![1.0; 1usize << scope.len()];
        for &pi in &self.clusters[cid].pots {
            mul_into(scope, &mut table, &self.potentials[pi]);
        }
        for msg in incoming {
            mul_into(scope, &mut table, msg);
        }
        // Guard against overflow when many strong factors stack up; the
        // scale cancels once the result is normalized.
        let max = table.iter().cloned().fold(0.0f64, f64::max);
        if max > 1e100 {
            for t in table.iter_mut() {
                *t /= max;
            }
        }
        table
    }
}

/// Posterior label marginals by mini-bucket cluster-graph BP.
pub fn bp_marginals(
    mrf: &PairwiseMrf,
    evidence: &[u8],
    cfg: &BpConfig,
) -> Result<MarginalEstimates> {
    if evidence.len() != mrf.n_evidence() {
        return Err(Error::Dimension(format!(
            "{} evidence bits for a model with {} evidence nodes",
            evidence.len(),
            mrf.n_evidence()
        )));
    }
    if cfg.i_bound < 2 {
        return Err(Error::Validation("i_bound must be >= 2 (pairwise factors)".into()));
    }
    if !(0.0..1.0).contains(&cfg.damping) {
        return Err(Error::Validation("damping must lie in [0, 1)".into()));
    }
    if cfg.tol <= 0.0 || cfg.max_iters == 0 {
        return Err(Error::Validation("tol must be > 0 and max_iters >= 1".into()));
    }
    let start = Instant::now();
    let red = mrf.reduce(evidence);
    let graph = build_cluster_graph(&red, cfg.i_bound);

    // Two directed messages per edge: dir 0 is a->b, dir 1 is b->a.
    let mut msgs: Vec<Potential> = Vec::with_capacity(graph.edges.len() * 2);
    for e in &graph.edges {
        msgs.push(Potential::uniform(e.sep.clone()));
        msgs.push(Potential::uniform(e.sep.clone()));
    }
    // Incoming directed-message ids per cluster.
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); graph.clusters.len()];
    for (ei, e) in graph.edges.iter().enumerate() {
        incoming[e.b].push(2 * ei); // a->b arrives at b
        incoming[e.a].push(2 * ei + 1); // b->a arrives at a
    }

    let mut iterations = 0usize;
    let mut residual = f64::INFINITY;
    let mut truncated = false;
    while iterations < cfg.max_iters {
        if let Some(budget) = cfg.time_budget {
            if start.elapsed() > budget {
                truncated = true;
                break;
            }
        }
        iterations += 1;
        let mut next: Vec<Potential> = msgs.clone();
        residual = 0.0;
        for (ei, e) in graph.edges.iter().enumerate() {
            for dir in 0..2 {
                let (src, _dst) = if dir == 0 { (e.a, e.b) } else { (e.b, e.a) };
                let exclude = 2 * ei + (1 - dir); // the reverse message on this edge
                let inc: Vec<&Potential> = incoming[src]
                    .iter()
                    .filter(|&&mid| mid != exclude)
                    .map(|&mid| &msgs[mid])
                    .collect();
                let table = graph.cluster_product(src, &inc);
                let mut reduced = marginalize(&graph.clusters[src].scope, &table, &e.sep);
                normalize(&mut reduced);
                let out = &mut next[2 * ei + dir];
                for (slot, &fresh) in out.table.iter_mut().zip(&reduced) {
                    let blended = cfg.damping * *slot + (1.0 - cfg.damping) * fresh;
                    residual = residual.max((blended - *slot).abs());
                    *slot = blended;
                }
            }
        }
        msgs = next;
        if residual < cfg.tol {
            break;
        }
    }
    let converged = residual < cfg.tol;

    // Read each variable's marginal from the smallest cluster containing it.
    let mut home = vec![usize::MAX; red.n];
    for (cid, c) in graph.clusters.iter().enumerate() {
        for &v in &c.scope {
            if home[v] == usize::MAX || c.scope.len() < graph.clusters[home[v]].scope.len() {
                home[v] = cid;
            }
        }
    }
    let mut p = vec![0.5; red.n];
    for v in 0..red.n {
        let cid = home[v];
        assert_ne!(cid, usize::MAX, "variable {v} missing from every cluster");
        let inc: Vec<&Potential> = incoming[cid].iter().map(|&mid| &msgs[mid]).collect();
        let table = graph.cluster_product(cid, &inc);
        let mut marg = marginalize(&graph.clusters[cid].scope, &table, &[v]);
        normalize(&mut marg);
        p[v] = marg[1];
    }

    Ok(MarginalEstimates {
        p,
        method: InferenceMethod::Bp,
        diagnostics: Diagnostics {
            iterations,
            residual,
            converged,
            truncated_by_budget: truncated,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}
