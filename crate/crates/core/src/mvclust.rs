//! Graph-based multi-view clustering over the knowledge layers.
//!
//! Each layer (view) gets a row-stochastic similarity-induced graph (SIG)
//! learned from its binary incidence features with adaptive neighbors. The
//! SIGs are fused into a unified graph `U` whose symmetrized Laplacian is
//! pushed towards exactly `c` zero eigenvalues, i.e. `c` connected
//! components; those components are the clusters. Each fusion round
//!
//! 1. re-solves every row of `U` as the simplex projection of the weighted
//!    SIG average minus `lambda/2` times the embedding distances,
//! 2. re-weights views by agreement, `w_v ∝ 1 / (2 ‖U - S_v‖_F)`,
//! 3. refines each SIG row towards `U` (restricted to its neighbor set),
//! 4. recomputes the embedding `F` from the `c` smallest eigenvectors,
//! 5. adapts `lambda` from the component count of the symmetrized `U`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::InstrumentId;
use crate::knowledge::{KnowledgeItem, Layer, MultiLayerNetwork};

pub const DEFAULT_K_NEIGHBORS: usize = 15;
pub const DEFAULT_MAX_ITER: usize = 50;
const INITIAL_LAMBDA: f64 = 1.0;
const LAMBDA_FACTOR: f64 = 2.0;
const LAMBDA_BOUNDS: (f64, f64) = (1e-30, 1e30);
const EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GmcError {
    #[error("view {0:?}: all rows are identical")]
    DegenerateView(Layer),
    #[error("view {0:?} has no columns")]
    EmptyView(Layer),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("eigen-decomposition failed to converge")]
    NumericalFailure,
    #[error("unknown instrument {0}")]
    UnknownInstrument(InstrumentId),
}

/// Binary incidence features of one view, stored as the set of nonzero
/// columns of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeatures {
    pub layer: Layer,
    pub columns: usize,
    pub rows: Vec<Vec<usize>>,
}

impl ViewFeatures {
    pub fn new(layer: Layer, columns: usize, rows: Vec<Vec<usize>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r
            })
            .collect();
        Self {
            layer,
            columns,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Squared Euclidean distance between two binary rows (their Hamming
    /// distance).
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.rows[i], &self.rows[j]);
        let (mut p, mut q, mut common) = (0, 0, 0);
        while p < a.len() && q < b.len() {
            match a[p].cmp(&b[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    common += 1;
                    p += 1;
                    q += 1;
                }
            }
        }
        (a.len() + b.len() - 2 * common) as f64
    }

    /// Same rows in a new order: row `k` of the result is row `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            layer: self.layer,
            columns: self.columns,
            rows: order.iter().map(|&k| self.rows[k].clone()).collect(),
        }
    }
}

/// One view per layer for `companies` (row order follows the slice).
pub fn views_from_network(
    net: &MultiLayerNetwork,
    companies: &[InstrumentId],
) -> Result<Vec<ViewFeatures>, GmcError> {
    let mut views = Vec::new();
    for layer in Layer::ALL {
        let columns: BTreeMap<&KnowledgeItem, usize> = net
            .items()
            .filter(|i| i.layer() == layer)
            .enumerate()
            .map(|(k, i)| (i, k))
            .collect();
        if columns.is_empty() {
            return Err(GmcError::EmptyView(layer));
        }
        let rows = companies
            .iter()
            .map(|c| {
                let items = net
                    .items_of(c)
                    .ok_or_else(|| GmcError::UnknownInstrument(c.clone()))?;
                Ok(items
                    .iter()
                    .filter_map(|i| columns.get(i).copied())
                    .collect())
            })
            .collect::<Result<Vec<Vec<usize>>, GmcError>>()?;
        views.push(ViewFeatures::new(layer, columns.len(), rows));
    }
    Ok(views)
}

/// Row of a SIG: weights over a fixed neighbor set.
#[derive(Debug, Clone, PartialEq)]
pub struct SigRow {
    pub neighbors: Vec<usize>,
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
    /// Regularization that makes the initial weights the exact adaptive
    /// neighbor solution; zero when the neighbors are all equidistant.
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigMatrix {
    pub layer: Layer,
    pub k_neighbors: usize,
    pub rows: Vec<SigRow>,
}

impl SigMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        row.neighbors
            .iter()
            .position(|&n| n == j)
            .map(|p| row.weights[p])
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, &w) in row.neighbors.iter().zip(&row.weights) {
                m[(i, j)] = w;
            }
        }
        m
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    // remove the rounding residue so rows sum to one
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        out.iter_mut().for_each(|x| *x /= sum);
    } else {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|x| *x = u);
    }
    out
}

/// Adaptive-neighbor SIG for one view.
///
/// `tie_keys` orders equidistant neighbors (pass ranks of a stable company
/// key so results do not depend on row order). Row `i` keeps its `k`
/// nearest rows with weights `(d_{k+1} - d_ij) / (k d_{k+1} - Σ_h d_ih)`;
/// when `k = n - 1` the missing `d_{k+1}` is taken as `d_k`.
pub fn init_sig(
    view: &ViewFeatures,
    k_neighbors: usize,
    tie_keys: &[usize],
) -> Result<SigMatrix, GmcError> {
    let n = view.len();
    if n < 3 || k_neighbors < 2 || k_neighbors > n - 1 {
        return Err(GmcError::InvalidParameter(format!(
            "k_neighbors = {k_neighbors} must lie in [2, n-1] for n = {n}"
        )));
    }
    if tie_keys.len() != n {
        return Err(GmcError::InvalidParameter("tie_keys length".into()));
    }
    if view.rows.iter().all(|r| *r == view.rows[0]) {
        return Err(GmcError::DegenerateView(view.layer));
    }
    let k = k_neighbors;
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (view.distance(i, j), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(tie_keys[a.1].cmp(&tie_keys[b.1])));
            let next = others.get(k).map(|o| o.0).unwrap_or(others[k - 1].0);
            let nearest = &others[..k];
            let total: f64 = nearest.iter().map(|o| o.0).sum();
            let denom = k as f64 * next - total;
            let (weights, gamma) = if denom > EPS {
                (
                    nearest.iter().map(|o| (next - o.0) / denom).collect(),
                    denom / 2.0,
                )
            } else {
                (vec![1.0 / k as f64; k], 0.0)
            };
            SigRow {
                neighbors: nearest.iter().map(|o| o.1).collect(),
                distances: nearest.iter().map(|o| o.0).collect(),
                weights,
                gamma,
            }
        })
        .collect();
    Ok(SigMatrix {
        layer: view.layer,
        k_neighbors: k,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmcState {
    pub sigs: Vec<SigMatrix>,
    /// Normalized to sum to one.
    pub weights: Vec<f64>,
    pub unified: DMatrix<f64>,
    pub embedding: DMatrix<f64>,
    pub lambda: f64,
    pub c: usize,
}

/// `(U + Uᵀ) / 2`.
pub fn symmetrize(u: &DMatrix<f64>) -> DMatrix<f64> {
    (u + u.transpose()) * 0.5
}

/// Component label per node of a weighted graph (edge iff weight > 0),
/// labels in order of first appearance.
pub fn graph_components(adjacency: &DMatrix<f64>) -> Vec<usize> {
    let n = adjacency.nrows();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for w in 0..n {
                if label[w] == usize::MAX && adjacency[(v, w)] > 0.0 {
                    label[w] = next;
                    stack.push(w);
                }
            }
        }
        next += 1;
    }
    label
}

pub fn component_count(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

/// The `c` eigenvectors of the Laplacian `D - A` with smallest eigenvalues,
/// each signed so its largest-magnitude entry is positive.
pub fn spectral_embedding(adjacency: &DMatrix<f64>, c: usize) -> Result<DMatrix<f64>, GmcError> {
    let n = adjacency.nrows();
    let mut laplacian = -adjacency.clone();
    for i in 0..n {
        let degree: f64 = adjacency.row(i).iter().sum();
        laplacian[(i, i)] += degree;
    }
    let eigen = nalgebra::SymmetricEigen::try_new(laplacian, 1e-12, 10_000)
        .ok_or(GmcError::NumericalFailure)?;
    if eigen.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(GmcError::NumericalFailure);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[a]
            .total_cmp(&eigen.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let mut f = DMatrix::zeros(n, c);
    for (col, &k) in order.iter().take(c).enumerate() {
        let v = eigen.eigenvectors.column(k);
        let pivot = (0..n).fold(
            0,
            |best, i| if v[i].abs() > v[best].abs() { i } else { best },
        );
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            f[(i, col)] = sign * v[i];
        }
    }
    Ok(f)
}

fn weighted_average(sigs: &[SigMatrix], weights: &[f64]) -> DMatrix<f64> {
    let n = sigs[0].len();
    let total: f64 = weights.iter().sum();
    let mut avg = DMatrix::zeros(n, n);
    for (sig, &w) in sigs.iter().zip(weights) {
        for (i, row) in sig.rows.iter().enumerate() {
            for (&j, &s) in row.neighbors.iter().zip(&row.weights) {
                avg[(i, j)] += w * s / total;
            }
        }
    }
    avg
}

fn frobenius_gap(u: &DMatrix<f64>, sig: &SigMatrix) -> f64 {
    let mut sq: f64 = u.iter().map(|x| x * x).sum();
    for (i, row) in sig.rows.iter().enumerate() {
        for (&j, &s) in row.neighbors.iter().zip(&row.weights) {
            sq += s * s - 2.0 * u[(i, j)] * s;
        }
    }
    sq.max(0.0).sqrt()
}

/// Agreement weights `1 / (2 ‖U - S_v‖_F)`, normalized to sum to one.
pub fn agreement_weights(u: &DMatrix<f64>, sigs: &[SigMatrix]) -> Vec<f64> {
    let raw: Vec<f64> = sigs
        .iter()
        .map(|s| 1.0 / (2.0 * frobenius_gap(u, s).max(EPS)))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

fn embedding_distances(f: &DMatrix<f64>) -> DMatrix<f64> {
    let n = f.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        (0..f.ncols())
            .map(|k| (f[(i, k)] - f[(j, k)]).powi(2))
            .sum()
    })
}

impl GmcState {
    /// Initial state from already-learned SIGs: equal weights, `U` the SIG
    /// average, `lambda = 1`.
    pub fn from_sigs(sigs: Vec<SigMatrix>, c: usize) -> Result<Self, GmcError> {
        if sigs.is_empty() {
            return Err(GmcError::InvalidParameter("no views".into()));
        }
        let n = sigs[0].len();
        if sigs.iter().any(|s| s.len() != n) {
            return Err(GmcError::InvalidParameter(
                "views disagree on row count".into(),
            ));
        }
        if c < 1 || c >= n {
            return Err(GmcError::InvalidParameter(format!(
                "c = {c} must lie in [1, n-1] for n = {n}"
            )));
        }
        let weights = vec![1.0 / sigs.len() as f64; sigs.len()];
        let unified = weighted_average(&sigs, &weights);
        let embedding = spectral_embedding(&symmetrize(&unified), c)?;
        Ok(Self {
            sigs,
            weights,
            unified,
            embedding,
            lambda: INITIAL_LAMBDA,
            c,
        })
    }

    pub fn labels(&self) -> Vec<usize> {
        graph_components(&symmetrize(&self.unified))
    }
}

/// One fusion round; see the module docs for the five updates.
pub fn fuse_step(state: &GmcState) -> Result<GmcState, GmcError> {
    let n = state.unified.nrows();
    let dist_f = embedding_distances(&state.embedding);
    let avg = weighted_average(&state.sigs, &state.weights);

    // (1) unified graph rows
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let v: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| avg[(i, j)] - 0.5 * state.lambda * dist_f[(i, j)])
                .collect();
            let p = project_simplex(&v);
            let mut row = Vec::with_capacity(n);
            row.extend_from_slice(&p[..i]);
            row.push(0.0);
            row.extend_from_slice(&p[i..]);
            row
        })
        .collect();
    let unified = DMatrix::from_fn(n, n, |i, j| rows[i][j]);

    // (2) agreement weights
    let weights = agreement_weights(&unified, &state.sigs);

    // (3) pull each SIG row towards U within its neighbor set
    let sigs: Vec<SigMatrix> = state
        .sigs
        .iter()
        .zip(&weights)
        .map(|(sig, &w)| SigMatrix {
            layer: sig.layer,
            k_neighbors: sig.k_neighbors,
            rows: sig
                .rows
                .par_iter()
                .enumerate()
                .map(|(i, row)| refine_row(row, &unified, i, w))
                .collect(),
        })
        .collect();

    // (4) embedding
    let sym = symmetrize(&unified);
    let embedding = spectral_embedding(&sym, state.c)?;

    // (5) lambda: more separation when under-split, less when over-split
    let comps = component_count(&graph_components(&sym));
    let lambda = if comps < state.c {
        state.lambda * LAMBDA_FACTOR
    } else if comps > state.c {
        state.lambda / LAMBDA_FACTOR
    } else {
        state.lambda
    }
    .clamp(LAMBDA_BOUNDS.0, LAMBDA_BOUNDS.1);

    Ok(GmcState {
        sigs,
        weights,
        unified,
        embedding,
        lambda,
        c: state.c,
    })
}

/// Minimize `Σ d_j s_j + γ‖s‖² + wγ‖s - u‖²` over the simplex on the
/// row's neighbor set. With `γ = 0` the distance term is flat and the
/// solution is the projection of `u`.
fn refine_row(row: &SigRow, unified: &DMatrix<f64>, i: usize, w: f64) -> SigRow {
    let u: Vec<f64> = row.neighbors.iter().map(|&j| unified[(i, j)]).collect();
    let target: Vec<f64> = if row.gamma > EPS {
        let g = row.gamma;
        u.iter()
            .zip(&row.distances)
            .map(|(uj, dj)| (2.0 * w * g * uj - dj) / (2.0 * g * (1.0 + w)))
            .collect()
    } else {
        u
    };
    SigRow {
        weights: project_simplex(&target),
        ..row.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmcResult {
    pub c: usize,
    pub weights: BTreeMap<Layer, f64>,
    pub assignment: BTreeMap<InstrumentId, usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl GmcResult {
    /// All members of `stock`'s cluster, itself included.
    pub fn knowledge_cluster_of(
        &self,
        stock: &InstrumentId,
    ) -> Result<BTreeSet<InstrumentId>, GmcError> {
        let id = self
            .assignment
            .get(stock)
            .ok_or_else(|| GmcError::UnknownInstrument(stock.clone()))?;
        Ok(self
            .assignment
            .iter()
            .filter(|(_, c)| *c == id)
            .map(|(s, _)| s.clone())
            .collect())
    }

    pub fn clusters(&self) -> Vec<BTreeSet<InstrumentId>> {
        let mut out = vec![BTreeSet::new(); self.c];
        for (s, &c) in &self.assignment {
            if c < out.len() {
                out[c].insert(s.clone());
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "c": self.c,
            "weights": {
                "location": self.weights.get(&Layer::Location),
                "human": self.weights.get(&Layer::Human),
                "business": self.weights.get(&Layer::Business),
            },
            "assignment": self.assignment.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            "iterations": self.iterations,
            "converged": self.converged,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmcParams {
    pub c: usize,
    pub k_neighbors: usize,
    pub max_iter: usize,
}

impl GmcParams {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Merge surplus components and split deficient ones until exactly `c`
/// remain. Merges take the smallest component into the one it has the most
/// SIG affinity to; splits cut the weakest maximum-spanning-tree edge of the
/// largest component.
fn repair_labels(labels: &[usize], state: &GmcState, c: usize) -> Vec<usize> {
    let n = labels.len();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); component_count(labels)];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    let affinity = weighted_average(&state.sigs, &state.weights);
    let sym = symmetrize(&state.unified);

    while groups.len() > c {
        let (small, _) = groups
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.1[0].cmp(&a.1[0])))
            .map(|(k, g)| (k, g.len()))
            .unwrap_or((0, 0));
        let score = |g: &Vec<usize>| -> f64 {
            groups[small]
                .iter()
                .flat_map(|&i| g.iter().map(move |&j| (i, j)))
                .map(|(i, j)| affinity[(i, j)] + affinity[(j, i)])
                .sum()
        };
        let target = (0..groups.len())
            .filter(|&k| k != small)
            .max_by(|&a, &b| {
                score(&groups[a])
                    .total_cmp(&score(&groups[b]))
                    .then(groups[a].len().cmp(&groups[b].len()))
                    .then(groups[b][0].cmp(&groups[a][0]))
            })
            .unwrap_or(0);
        let moved = std::mem::take(&mut groups[small]);
        groups[target].extend(moved);
        groups[target].sort_unstable();
        groups.remove(small);
    }

    while groups.len() < c {
        let largest = (0..groups.len())
            .max_by(|&a, &b| {
                groups[a]
                    .len()
                    .cmp(&groups[b].len())
                    .then(groups[b][0].cmp(&groups[a][0]))
            })
            .unwrap_or(0);
        let members = groups.remove(largest);
        let (left, right) = split_weakest_tree_edge(&members, &sym);
        groups.push(left);
        groups.push(right);
    }

    let mut out = vec![0; n];
    for (k, g) in groups.iter().enumerate() {
        for &i in g {
            out[i] = k;
        }
    }
    out
}

/// Build a maximum spanning tree of `members` under `weights` (Prim) and
/// cut its lightest edge. Non-edges count as weight 0, so a disconnected
/// member set still splits.
fn split_weakest_tree_edge(members: &[usize], weights: &DMatrix<f64>) -> (Vec<usize>, Vec<usize>) {
    let m = members.len();
    if m < 2 {
        return (members.to_vec(), Vec::new());
    }
    let mut in_tree = vec![false; m];
    let mut best = vec![f64::NEG_INFINITY; m];
    let mut parent = vec![usize::MAX; m];
    let mut tree_edges: Vec<(f64, usize, usize)> = Vec::new();
    best[0] = f64::INFINITY;
    for _ in 0..m {
        let v = (0..m)
            .filter(|&k| !in_tree[k])
            .max_by(|&a, &b| best[a].total_cmp(&best[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        in_tree[v] = true;
        if parent[v] != usize::MAX {
            tree_edges.push((best[v], parent[v], v));
        }
        for w in 0..m {
            let weight = weights[(members[v], members[w])];
            if !in_tree[w] && weight > best[w] {
                best[w] = weight;
                parent[w] = v;
            }
        }
    }
    let cut = tree_edges
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .unwrap_or(0);
    tree_edges.remove(cut);
    // the side holding member 0 keeps its edges; flood from it
    let mut side = vec![false; m];
    side[0] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for &(_, a, b) in &tree_edges {
            if side[a] != side[b] {
                side[a] = true;
                side[b] = true;
                changed = true;
            }
        }
    }
    let left = (0..m).filter(|&k| side[k]).map(|k| members[k]).collect();
    let right = (0..m).filter(|&k| !side[k]).map(|k| members[k]).collect();
    (left, right)
}

/// Relabel so cluster ids follow the smallest company key of each cluster.
fn canonical_labels(labels: &[usize], keys: &[usize]) -> Vec<usize> {
    let mut first: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let e = first.entry(l).or_insert(keys[i]);
        *e = (*e).min(keys[i]);
    }
    let mut order: Vec<(usize, usize)> = first.into_iter().map(|(l, k)| (k, l)).collect();
    order.sort_unstable();
    let map: BTreeMap<usize, usize> = order
        .iter()
        .enumerate()
        .map(|(new, &(_, old))| (old, new))
        .collect();
    labels.iter().map(|l| map[l]).collect()
}

/// Full clustering run over `companies` (row order of every view).
pub fn run_gmc(
    companies: &[InstrumentId],
    views: &[ViewFeatures],
    params: &GmcParams,
) -> Result<GmcResult, GmcError> {
    let n = companies.len();
    if views.is_empty() {
        return Err(GmcError::InvalidParameter(
            "at least one view is required".into(),
        ));
    }
    if views.iter().any(|v| v.len() != n) {
        return Err(GmcError::InvalidParameter(
            "views disagree on row count".into(),
        ));
    }
    if params.c < 2 || params.c + 1 > n {
        return Err(GmcError::InvalidParameter(format!(
            "c = {} must lie in [2, n-1] for n = {n}",
            params.c
        )));
    }
    let keys = {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| companies[a].cmp(&companies[b]));
        let mut rank = vec![0; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        rank
    };
    let k = params.k_neighbors.clamp(2, n - 1);
    let sigs = views
        .iter()
        .map(|v| init_sig(v, k, &keys))
        .collect::<Result<Vec<_>, _>>()?;
    let mut state = GmcState::from_sigs(sigs, params.c)?;

    let mut previous: Option<Vec<usize>> = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        state = fuse_step(&state)?;
        iterations += 1;
        let labels = canonical_labels(&state.labels(), &keys);
        if component_count(&labels) == params.c {
            if previous.as_ref() == Some(&labels) {
                converged = true;
                break;
            }
            previous = Some(labels);
        } else {
            previous = None;
        }
    }

    let mut labels = state.labels();
    if component_count(&labels) != params.c {
        log::warn!(
            "multi-view clustering ended with {} components for c = {}; repairing",
            component_count(&labels),
            params.c
        );
        labels = repair_labels(&labels, &state, params.c);
    }
    let labels = canonical_labels(&labels, &keys);
    Ok(GmcResult {
        c: params.c,
        weights: views
            .iter()
            .map(|v| v.layer)
            .zip(state.weights.iter().copied())
            .collect(),
        assignment: companies.iter().cloned().zip(labels).collect(),
        iterations,
        converged,
    })
}

/// Normalized mutual information, `I(a; b) / sqrt(H(a) H(b))`. Two constant
/// labelings score 1.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *pa.entry(x).or_default() += 1.0;
        *pb.entry(y).or_default() += 1.0;
    }
    let entropy =
        |p: &BTreeMap<usize, f64>| -> f64 { p.values().map(|c| c / n).map(|q| -q * q.ln()).sum() };
    let (ha, hb) = (entropy(&pa), entropy(&pb));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c / n;
            pxy * (pxy / ((pa[&x] / n) * (pb[&y] / n))).ln()
        })
        .sum();
    (mi / (ha * hb).sqrt()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    fn one_hot(n: usize) -> ViewFeatures {
        ViewFeatures::new(Layer::Business, n, (0..n).map(|i| vec![i]).collect())
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = project_simplex(&[2.0, 0.0, -1.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.2, 0.3, 0.1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[1] - p[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_prefer_each_other() {
        let view = ViewFeatures::new(
            Layer::Location,
            4,
            vec![vec![0, 1], vec![0, 1], vec![2], vec![3], vec![1, 2]],
        );
        let sig = init_sig(&view, 2, &keys(5)).unwrap();
        for (i, twin) in [(0, 1), (1, 0)] {
            let row = &sig.rows[i];
            let best = row.neighbors[(0..row.weights.len())
                .max_by(|&a, &b| row.weights[a].total_cmp(&row.weights[b]))
                .unwrap()];
            assert_eq!(best, twin);
        }
    }

    #[test]
    fn one_hot_full_neighborhood_is_uniform() {
        let n = 6;
        let sig = init_sig(&one_hot(n), n - 1, &keys(n)).unwrap();
        for row in &sig.rows {
            assert_eq!(row.weights.len(), n - 1);
            assert!(row
                .weights
                .iter()
                .all(|w| (w - 1.0 / (n - 1) as f64).abs() < 1e-15));
        }
    }

    #[test]
    fn sig_invariants_and_errors() {
        let view = ViewFeatures::new(Layer::Human, 3, vec![vec![0]; 5]);
        assert_eq!(
            init_sig(&view, 2, &keys(5)),
            Err(GmcError::DegenerateView(Layer::Human))
        );
        assert!(matches!(
            init_sig(&one_hot(5), 5, &keys(5)),
            Err(GmcError::InvalidParameter(_))
        ));
        assert!(matches!(
            init_sig(&one_hot(5), 1, &keys(5)),
            Err(GmcError::InvalidParameter(_))
        ));
        let sig = init_sig(&one_hot(5), 3, &keys(5)).unwrap();
        let dense = sig.to_dense();
        for i in 0..5 {
            assert_eq!(dense[(i, i)], 0.0);
        }
    }

    #[test]
    fn nmi_values() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert!(nmi(&[0, 1, 0, 1], &[0, 0, 1, 1]).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0], &[1, 1, 1]), 1.0);
    }

    #[test]
    fn components_of_block_matrix() {
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        m[(2, 3)] = 0.5;
        m[(3, 2)] = 0.5;
        assert_eq!(graph_components(&m), vec![0, 0, 1, 1]);
    }

    #[test]
    fn weakest_tree_edge_split() {
        // path 0-1-2-3 with the 1-2 link weakest
        let mut w = DMatrix::zeros(4, 4);
        for (a, b, x) in [(0, 1, 0.9), (1, 2, 0.1), (2, 3, 0.8)] {
            w[(a, b)] = x;
            w[(b, a)] = x;
        }
        let (l, r) = split_weakest_tree_edge(&[0, 1, 2, 3], &w);
        assert_eq!(l, vec![0, 1]);
        assert_eq!(r, vec![2, 3]);
    }

    #[test]
    fn canonical_relabeling() {
        assert_eq!(
            canonical_labels(&[5, 5, 2, 9], &[3, 0, 1, 2]),
            vec![0, 0, 1, 2]
        );
    }
}
