//! Threshold-pruned correlation graphs.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::cache::{Measure, YearlyCorrelationCache};
use crate::ingest::InstrumentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub tau_spearman: f64,
    pub tau_pearson: f64,
    pub min_overlap: u32,
    #[serde(default)]
    pub must_have: BTreeSet<InstrumentId>,
    #[serde(default)]
    pub industry_tags: BTreeSet<String>,
    /// Instruments never placed in the graph (the benchmark index).
    #[serde(default)]
    pub exclude: BTreeSet<InstrumentId>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            tau_spearman: 0.5,
            tau_pearson: 0.5,
            min_overlap: 30,
            must_have: BTreeSet::new(),
            industry_tags: BTreeSet::new(),
            exclude: BTreeSet::new(),
        }
    }
}

impl ThresholdConfig {
    pub fn with_thresholds(tau_spearman: f64, tau_pearson: f64) -> Self {
        Self {
            tau_spearman,
            tau_pearson,
            ..Self::default()
        }
    }

    fn clamped(v: f64) -> f64 {
        if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, 1.0)
        }
    }
}

/// Undirected simple graph over instruments. Nodes are sorted by ticker, so
/// a smaller node index always means a smaller ticker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrGraph {
    pub nodes: Vec<InstrumentId>,
    adjacency: Vec<Vec<usize>>,
}

impl CorrGraph {
    /// Build from `(i, j)` node-index pairs; nodes must already be sorted.
    pub fn from_edges(
        nodes: Vec<InstrumentId>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (a, b) in edges {
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { nodes, adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn position(&self, id: &InstrumentId) -> Option<usize> {
        self.nodes.binary_search(id).ok()
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, list)| list.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    /// Induced subgraph on `keep` (any order); returned node indices follow
    /// sorted order of `keep`.
    pub fn induced(&self, keep: &[usize]) -> (CorrGraph, Vec<usize>) {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut local = vec![usize::MAX; self.nodes.len()];
        for (k, &v) in keep.iter().enumerate() {
            local[v] = k;
        }
        let nodes = keep.iter().map(|&v| self.nodes[v].clone()).collect();
        let edges: Vec<(usize, usize)> = keep
            .iter()
            .flat_map(|&v| {
                self.adjacency[v]
                    .iter()
                    .filter(|&&w| local[w] != usize::MAX && v < w)
                    .map(|&w| (local[v], local[w]))
                    .collect::<Vec<_>>()
            })
            .collect();
        (CorrGraph::from_edges(nodes, edges), keep)
    }
}

/// Keep a pair iff its price Spearman and price Pearson both clear their
/// thresholds. Isolated nodes are dropped unless they are must-have.
pub fn prune_graph(cache: &YearlyCorrelationCache, cfg: &ThresholdConfig) -> CorrGraph {
    let tau_s = ThresholdConfig::clamped(cfg.tau_spearman);
    let tau_p = ThresholdConfig::clamped(cfg.tau_pearson);
    let m = cache.len();
    let eligible: Vec<bool> = cache
        .instruments
        .iter()
        .map(|id| !cfg.exclude.contains(id))
        .collect();
    let mut edges = Vec::new();
    for i in 0..m {
        if !eligible[i] {
            continue;
        }
        for j in i + 1..m {
            if !eligible[j] || cache.overlap_days(i, j) < cfg.min_overlap {
                continue;
            }
            // monotonicity gate first, then linear strength
            let Some(s) = cache.value(Measure::SpearmanPrice, i, j) else {
                continue;
            };
            if s < tau_s {
                continue;
            }
            match cache.value(Measure::PearsonPrice, i, j) {
                Some(p) if p >= tau_p => edges.push((i, j)),
                _ => {}
            }
        }
    }
    let mut degree = vec![0usize; m];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let keep: Vec<usize> = (0..m)
        .filter(|&v| {
            eligible[v] && (degree[v] > 0 || cfg.must_have.contains(&cache.instruments[v]))
        })
        .collect();
    let mut local = vec![usize::MAX; m];
    for (k, &v) in keep.iter().enumerate() {
        local[v] = k;
    }
    CorrGraph::from_edges(
        keep.iter().map(|&v| cache.instruments[v].clone()).collect(),
        edges.into_iter().map(|(a, b)| (local[a], local[b])),
    )
}

/// Connected components, largest first, ties by smallest ticker. Members of
/// each component are sorted by node index.
pub fn connected_components(graph: &CorrGraph) -> Vec<Vec<usize>> {
    let n = graph.node_count();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in graph.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

/// Unnormalized shortest-path betweenness for an unweighted undirected
/// graph: for every unordered pair, the fraction of shortest paths through
/// each intermediate node.
pub fn betweenness(graph: &CorrGraph) -> Vec<f64> {
    let n = graph.node_count();
    let mut centrality = vec![0.0; n];
    let mut stack = Vec::with_capacity(n);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0f64; n];
    let mut queue = VecDeque::with_capacity(n);

    for s in 0..n {
        stack.clear();
        for v in 0..n {
            preds[v].clear();
            sigma[v] = 0.0;
            dist[v] = -1;
            delta[v] = 0.0;
        }
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in graph.neighbors(v) {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                centrality[w] += delta[w];
            }
        }
    }
    // every unordered pair was visited from both ends
    centrality.iter_mut().for_each(|c| *c /= 2.0);
    centrality
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> CorrGraph {
        let nodes = (0..n)
            .map(|k| InstrumentId::new(format!("S{k:02}")).unwrap())
            .collect();
        CorrGraph::from_edges(nodes, edges.iter().copied())
    }

    #[test]
    fn path_star_triangle() {
        assert_eq!(
            betweenness(&graph(3, &[(0, 1), (1, 2)])),
            vec![0.0, 1.0, 0.0]
        );
        let star = betweenness(&graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]));
        assert_eq!(star[0], 6.0);
        assert!(star[1..].iter().all(|&c| c == 0.0));
        assert_eq!(
            betweenness(&graph(3, &[(0, 1), (1, 2), (0, 2)])),
            vec![0.0; 3]
        );
    }

    #[test]
    fn split_paths_share_credit() {
        // square 0-1-3, 0-2-3: pair (0,3) has two shortest paths
        let c = betweenness(&graph(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]));
        assert_eq!(c, vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn components_order() {
        let g = graph(3, &[(0, 1)]);
        assert_eq!(connected_components(&g), vec![vec![0, 1], vec![2]]);
        assert!(connected_components(&graph(0, &[])).is_empty());
        let g = graph(5, &[(3, 4), (0, 1)]);
        assert_eq!(
            connected_components(&g),
            vec![vec![0, 1], vec![3, 4], vec![2]]
        );
    }

    #[test]
    fn induced_subgraph() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let (sub, map) = g.induced(&[3, 1, 2]);
        assert_eq!(map, vec![1, 2, 3]);
        assert_eq!(sub.edges(), vec![(0, 1), (1, 2)]);
    }
}
