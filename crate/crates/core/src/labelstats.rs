//! Empirical label-consistency statistics over exact hop neighborhoods.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{LabeledGraph, UnreachablePolicy};

/// Per-hop empirical label consistency.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub hops: Vec<usize>,
    /// Average over anchors with a non-empty hop set of the same-label fraction.
    pub lc_values: Vec<f64>,
    /// Number of anchors that contributed at each hop.
    pub per_node_counts: Vec<usize>,
}

impl DecayCurve {
    /// `LC_emp(1)`, the edge-level homophily of the graph.
    pub fn homophily(&self) -> f64 {
        self.lc_values[0]
    }
}

/// Same-label and total counts per hop `1..=max_hop` for one anchor.
fn anchor_hop_counts(g: &LabeledGraph, anchor: usize, max_hop: usize) -> Vec<(usize, usize)> {
    let dist = g.bfs_distances(anchor, Some(max_hop));
    let mut counts = vec![(0usize, 0usize); max_hop];
    let y = g.label(anchor);
    for (v, &d) in dist.iter().enumerate() {
        if v == anchor || d == usize::MAX || d == 0 {
            continue;
        }
        let slot = &mut counts[d - 1];
        slot.1 += 1;
        if g.label(v) == y {
            slot.0 += 1;
        }
    }
    counts
}

/// `LC_emp(n)` for `n = 1..=max_hop`. Anchors whose hop-`n` set is empty are
/// left out of the hop-`n` average.
pub fn lc_emp(g: &LabeledGraph, max_hop: usize) -> Result<DecayCurve> {
    if max_hop == 0 {
        return Err(Error::InvalidParameter("max_hop must be at least 1".into()));
    }
    let per_anchor: Vec<Vec<(usize, usize)>> = (0..g.num_nodes())
        .into_par_iter()
        .map(|a| anchor_hop_counts(g, a, max_hop))
        .collect();
    let mut sums = vec![0.0; max_hop];
    let mut counts = vec![0usize; max_hop];
    for anchor in &per_anchor {
        for (h, &(same, total)) in anchor.iter().enumerate() {
            if total > 0 {
                sums[h] += same as f64 / total as f64;
                counts[h] += 1;
            }
        }
    }
    let lc_values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(DecayCurve {
        hops: (1..=max_hop).collect(),
        lc_values,
        per_node_counts: counts,
    })
}

/// Fraction of `anchor`'s hop-`n` neighbors that share its label.
pub fn sim_stat(g: &LabeledGraph, anchor: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("hop must be at least 1".into()));
    }
    let (same, total) = anchor_hop_counts(g, anchor, n)[n - 1];
    if total == 0 {
        return Err(Error::EmptyHopSet {
            anchor,
            hop: n.to_string(),
        });
    }
    Ok(same as f64 / total as f64)
}

/// Same-label fraction over every node further than `n` hops from `anchor`.
///
/// This is the union of hops `n+1..=k` and the beyond-`k` set; unreachable
/// nodes take part according to `policy`.
pub fn sim_stat_beyond(
    g: &LabeledGraph,
    anchor: usize,
    n: usize,
    k: usize,
    policy: UnreachablePolicy,
) -> Result<f64> {
    if n == 0 || k < n {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n <= k, got n={n}, k={k}"
        )));
    }
    let dist = g.bfs_distances(anchor, None);
    let y = g.label(anchor);
    let (mut same, mut total) = (0usize, 0usize);
    for (v, &d) in dist.iter().enumerate() {
        let counted = if d == usize::MAX {
            policy == UnreachablePolicy::IncludeInBeyond
        } else {
            d > n
        };
        if counted && v != anchor {
            total += 1;
            if g.label(v) == y {
                same += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyHopSet {
            anchor,
            hop: format!(">{n}"),
        });
    }
    Ok(same as f64 / total as f64)
}

/// Mean over anchors of `sim_stat(v, n) - sim_stat(v, >n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeGap {
    pub gap: f64,
    /// Anchors where both terms were defined.
    pub anchors: usize,
}

pub fn relative_gap(
    g: &LabeledGraph,
    n: usize,
    k: usize,
    policy: UnreachablePolicy,
) -> Result<RelativeGap> {
    if n == 0 || k < n {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n <= k, got n={n}, k={k}"
        )));
    }
    let diffs: Vec<Option<f64>> = (0..g.num_nodes())
        .into_par_iter()
        .map(|a| {
            let near = sim_stat(g, a, n).ok()?;
            let far = sim_stat_beyond(g, a, n, k, policy).ok()?;
            Some(near - far)
        })
        .collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for d in diffs.into_iter().flatten() {
        sum += d;
        count += 1;
    }
    Ok(RelativeGap {
        gap: if count > 0 { sum / count as f64 } else { 0.0 },
        anchors: count,
    })
}
