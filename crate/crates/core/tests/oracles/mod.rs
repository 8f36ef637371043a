//! Independent reference implementations used by the property tests and
//! the acceptance runner. Deliberately naive: no shared code with the
//! library beyond input types.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

/// Two-pass Pearson over pairs where both values are finite. `None` below
/// `min_points` usable pairs or with zero variance.
pub fn pearson(xs: &[f64], ys: &[f64], min_points: usize) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .collect();
    if pairs.len() < min_points.max(2) {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let vx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let vy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

/// Average ranks by counting: rank = (#less) + (#equal + 1) / 2.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&ranks(xs), &ranks(ys), 3)
}

/// Prism cell `(x, y)` recomputed from scratch on the window ending at `x`.
pub fn prism_cell(xs: &[f64], ys: &[f64], x: usize, y: usize, min_window: usize) -> Option<f64> {
    let n = xs.len();
    let w = n - y;
    let start = x + 1 - w;
    pearson(&xs[start..=x], &ys[start..=x], min_window)
}

/// Betweenness by enumerating every shortest path explicitly. Each
/// unordered pair `{s, t}` contributes, to every interior node `v`, the
/// fraction of shortest s-t paths that visit `v`.
pub fn brute_betweenness(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b && !adj[a].contains(&b) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let dist_from = |s: usize| {
        let mut d = vec![usize::MAX; n];
        d[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &w in &adj[u] {
                if d[w] == usize::MAX {
                    d[w] = d[u] + 1;
                    q.push_back(w);
                }
            }
        }
        d
    };
    let mut score = vec![0.0; n];
    for s in 0..n {
        let d = dist_from(s);
        for t in s + 1..n {
            if d[t] == usize::MAX || d[t] < 2 {
                continue;
            }
            let mut paths: Vec<Vec<usize>> = Vec::new();
            let mut stack = vec![vec![s]];
            while let Some(path) = stack.pop() {
                let last = *path.last().unwrap();
                if last == t {
                    paths.push(path);
                    continue;
                }
                if path.len() > d[t] {
                    continue;
                }
                for &w in &adj[last] {
                    if !path.contains(&w) {
                        let mut next = path.clone();
                        next.push(w);
                        stack.push(next);
                    }
                }
            }
            let shortest: Vec<&Vec<usize>> = paths.iter().filter(|p| p.len() == d[t] + 1).collect();
            let total = shortest.len() as f64;
            for v in 0..n {
                if v == s || v == t {
                    continue;
                }
                let through = shortest.iter().filter(|p| p.contains(&v)).count() as f64;
                score[v] += through / total;
            }
        }
    }
    score
}

/// Normalized mutual information from the contingency table,
/// `I / sqrt(H_a H_b)`; two constant labelings score 1.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    let h = |p: &BTreeMap<usize, f64>| -p.values().map(|v| v * v.ln()).sum::<f64>();
    let (ha, hb) = (h(&pa), h(&pb));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln())
        .sum();
    mi / (ha * hb).sqrt()
}

pub fn jaccard<T: Ord + Clone>(a: &[T], b: &[T]) -> f64 {
    let a: std::collections::BTreeSet<T> = a.iter().cloned().collect();
    let b: std::collections::BTreeSet<T> = b.iter().cloned().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Connected components by repeated flooding, as sorted node lists.
pub fn components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut label: Vec<usize> = (0..n).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for &(a, b) in edges {
            let m = label[a].min(label[b]);
            if label[a] != m || label[b] != m {
                label[a] = m;
                label[b] = m;
                changed = true;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &l) in label.iter().enumerate() {
        groups.entry(l).or_default().push(v);
    }
    groups.into_values().collect()
}
