//! Communities: connected components of the pruned graph, with oversized
//! components broken apart at their super-connectors.
//!
//! Splitting removes the current highest-betweenness node until the
//! component falls apart, then hands each removed node back (latest removal
//! first) to the piece it has the most edges to, preferring the larger piece
//! on ties. Pieces still above `max_size` are split again. A component that
//! never disconnects (a clique, say) is cut into consecutive chunks of its
//! removal order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cache::YearlyCorrelationCache;
use super::graph::{betweenness, connected_components, prune_graph, CorrGraph, ThresholdConfig};
use crate::ingest::InstrumentId;

pub const DEFAULT_MAX_SIZE: usize = 40;
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub year: i32,
    /// Descending betweenness within the community, ties by ticker.
    pub members: Vec<InstrumentId>,
    pub betweenness: Vec<f64>,
    pub size: usize,
}

/// Index of the highest score, smallest index among near-ties.
fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] + TIE_EPS => {}
            _ => best = Some(k),
        }
    }
    best
}

fn split(graph: &CorrGraph, comp: Vec<usize>, max_size: usize, out: &mut Vec<Vec<usize>>) {
    if comp.len() <= max_size {
        out.push(comp);
        return;
    }
    let mut remaining: BTreeSet<usize> = comp.iter().copied().collect();
    let mut removed = Vec::new();
    let mut pieces: Vec<Vec<usize>> = Vec::new();
    while remaining.len() > 1 {
        let current: Vec<usize> = remaining.iter().copied().collect();
        let (sub, map) = graph.induced(&current);
        let Some(top) = argmax(&betweenness(&sub)) else {
            break;
        };
        remaining.remove(&map[top]);
        removed.push(map[top]);
        let (sub, map) = graph.induced(&remaining.iter().copied().collect::<Vec<_>>());
        let parts = connected_components(&sub);
        if parts.len() >= 2 {
            pieces = parts
                .into_iter()
                .map(|p| p.into_iter().map(|v| map[v]).collect())
                .collect();
            break;
        }
    }

    if pieces.is_empty() {
        // no disconnection possible: chunk the removal order
        removed.extend(remaining);
        for chunk in removed.chunks(max_size) {
            let mut chunk = chunk.to_vec();
            chunk.sort_unstable();
            out.push(chunk);
        }
        return;
    }

    for &node in removed.iter().rev() {
        let best = pieces
            .iter()
            .enumerate()
            .map(|(k, p)| {
                (
                    k,
                    p.iter().filter(|&&v| graph.has_edge(node, v)).count(),
                    p.len(),
                )
            })
            .filter(|&(_, links, _)| links > 0)
            .max_by(|a, b| {
                a.1.cmp(&b.1)
                    .then(a.2.cmp(&b.2))
                    .then(pieces[b.0][0].cmp(&pieces[a.0][0]))
            });
        match best {
            Some((k, _, _)) => {
                let piece = &mut pieces[k];
                let at = piece.partition_point(|&v| v < node);
                piece.insert(at, node);
            }
            None => pieces.push(vec![node]),
        }
    }
    for piece in pieces {
        split(graph, piece, max_size, out);
    }
}

/// Node-index partition of the pruned graph into pieces of at most
/// `max_size`, before ordering and filtering.
pub fn partition(graph: &CorrGraph, max_size: usize) -> Vec<Vec<usize>> {
    let max_size = max_size.max(2);
    let mut out = Vec::new();
    for comp in connected_components(graph) {
        split(graph, comp, max_size, &mut out);
    }
    out
}

/// Communities of the pruned graph, largest first.
///
/// With `cfg.industry_tags` non-empty, only communities with at least one
/// member whose industry (looked up in `industries`) is tagged are kept.
pub fn communities(
    cache: &YearlyCorrelationCache,
    cfg: &ThresholdConfig,
    max_size: usize,
    industries: &BTreeMap<InstrumentId, String>,
) -> Vec<Community> {
    let graph = prune_graph(cache, cfg);
    let mut out: Vec<Community> = partition(&graph, max_size)
        .into_iter()
        .map(|piece| {
            let (sub, map) = graph.induced(&piece);
            let scores = betweenness(&sub);
            let mut order: Vec<usize> = (0..map.len()).collect();
            order.sort_by(|&a, &b| {
                if (scores[a] - scores[b]).abs() <= TIE_EPS {
                    a.cmp(&b)
                } else {
                    scores[b].total_cmp(&scores[a])
                }
            });
            Community {
                year: cache.year,
                members: order.iter().map(|&k| sub.nodes[k].clone()).collect(),
                betweenness: order.iter().map(|&k| scores[k]).collect(),
                size: map.len(),
            }
        })
        .filter(|c| {
            cfg.industry_tags.is_empty()
                || c.members.iter().any(|m| {
                    industries
                        .get(m)
                        .is_some_and(|ind| cfg.industry_tags.contains(ind))
                })
        })
        .collect();
    out.sort_by(|a, b| {
        b.size.cmp(&a.size).then_with(|| {
            let min = |c: &Community| c.members.iter().min().cloned();
            min(a).cmp(&min(b))
        })
    });
    out
}
