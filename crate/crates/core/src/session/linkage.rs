//! Average-linkage agglomerative clustering and silhouette cuts over a
//! dense dissimilarity matrix.

/// One agglomeration step. Clusters `0..m` are the leaves; step `k` creates
/// cluster `m + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

/// UPGMA over a symmetric `m × m` dissimilarity matrix (row-major). Ties
/// merge the lexicographically smallest pair of active cluster ids.
pub fn average_linkage(dist: &[f64], m: usize) -> Vec<Merge> {
    assert_eq!(dist.len(), m * m);
    let mut d: Vec<Vec<f64>> = (0..m).map(|i| dist[i * m..(i + 1) * m].to_vec()).collect();
    // active slots map to cluster ids and sizes
    let mut id: Vec<usize> = (0..m).collect();
    let mut size = vec![1usize; m];
    let mut active: Vec<usize> = (0..m).collect();
    let mut merges = Vec::with_capacity(m.saturating_sub(1));
    while active.len() > 1 {
        // (distance, smaller id, larger id, slot a, slot b)
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for (p, &a) in active.iter().enumerate() {
            for &b in &active[p + 1..] {
                let cand = (d[a][b], id[a].min(id[b]), id[a].max(id[b]), a, b);
                let better = best.is_none_or(|cur| {
                    cand.0 < cur.0 || (cand.0 == cur.0 && (cand.1, cand.2) < (cur.1, cur.2))
                });
                if better {
                    best = Some(cand);
                }
            }
        }
        let (distance, _, _, a, b) = best.expect("at least two active clusters");
        let merged = size[a] + size[b];
        for &c in &active {
            if c != a && c != b {
                let v = (d[a][c] * size[a] as f64 + d[b][c] * size[b] as f64) / merged as f64;
                d[a][c] = v;
                d[c][a] = v;
            }
        }
        merges.push(Merge {
            left: id[a].min(id[b]),
            right: id[a].max(id[b]),
            distance,
            size: merged,
        });
        id[a] = m + merges.len() - 1;
        size[a] = merged;
        active.retain(|&c| c != b);
    }
    merges
}

/// Flat labels for `k` clusters: undo the last `k - 1` merges. Labels are
/// numbered by first leaf appearance.
pub fn cut(merges: &[Merge], m: usize, k: usize) -> Vec<usize> {
    let k = k.clamp(1, m.max(1));
    let mut parent: Vec<usize> = (0..m + merges.len()).collect();
    for (step, mg) in merges.iter().enumerate().take(m.saturating_sub(k)) {
        parent[mg.left] = m + step;
        parent[mg.right] = m + step;
    }
    let root = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let mut labels = vec![usize::MAX; m];
    let mut seen: Vec<usize> = Vec::new();
    for leaf in 0..m {
        let r = root(leaf);
        let l = match seen.iter().position(|&s| s == r) {
            Some(p) => p,
            None => {
                seen.push(r);
                seen.len() - 1
            }
        };
        labels[leaf] = l;
    }
    labels
}

/// Mean silhouette; singletons contribute 0.
pub fn silhouette(dist: &[f64], m: usize, labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |x| x + 1);
    if k < 2 || m < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..m {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in (0..m).filter(|&j| j != i) {
            sums[labels[j]] += dist[i * m + j];
            counts[labels[j]] += 1;
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / m as f64
}

/// Leaf order of the dendrogram, placing at every merge the child with the
/// larger `weight` sum first (ties: smaller cluster id first).
pub fn leaf_order(merges: &[Merge], m: usize, weight: &[f64]) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    let mut totals: Vec<f64> = weight.to_vec();
    totals.resize(m + merges.len(), 0.0);
    for (step, mg) in merges.iter().enumerate() {
        totals[m + step] = totals[mg.left] + totals[mg.right];
    }
    let root = m + merges.len() - 1;
    let mut out = Vec::with_capacity(m);
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if node < m {
            out.push(node);
            continue;
        }
        let mg = merges[node - m];
        let (first, second) = if totals[mg.right] > totals[mg.left] {
            (mg.right, mg.left)
        } else {
            (mg.left, mg.right)
        };
        stack.push(second);
        stack.push(first);
    }
    out
}
