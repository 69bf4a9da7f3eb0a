//! Immutable labeled graphs in compressed adjacency form, plus exact
//! multi-hop neighborhood enumeration.

use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Where nodes that cannot be reached from the anchor go in [`HopSets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnreachablePolicy {
    /// Unreachable nodes sit at infinite distance, hence beyond any hop `k`.
    #[default]
    IncludeInBeyond,
    Exclude,
}

/// Undirected graph with one integer label per node and optional dense features.
///
/// Every undirected edge is stored in both directions; a self-loop is stored
/// once and counts once toward the degree.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    labels: Vec<usize>,
    num_labels: usize,
    features: Option<Matrix>,
    has_self_loops: bool,
}

/// Exact-distance neighborhoods of one anchor node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopSets {
    pub anchor: usize,
    /// `per_hop[n]` holds the nodes at shortest-path distance `n + 1`, ascending.
    pub per_hop: Vec<Vec<usize>>,
    /// Nodes further than `k` hops (plus unreachable ones, depending on policy).
    pub beyond: Vec<usize>,
}

impl HopSets {
    pub fn k(&self) -> usize {
        self.per_hop.len()
    }

    /// Set for hop `n` in `1..=k+1`, where `k + 1` is the beyond set.
    pub fn hop(&self, n: usize) -> &[usize] {
        assert!(
            n >= 1 && n <= self.k() + 1,
            "hop {n} outside 1..={}",
            self.k() + 1
        );
        if n == self.k() + 1 {
            &self.beyond
        } else {
            &self.per_hop[n - 1]
        }
    }

    /// Sizes of hops `1..=k` followed by the beyond set.
    pub fn sizes(&self) -> Vec<usize> {
        self.per_hop
            .iter()
            .map(Vec::len)
            .chain(std::iter::once(self.beyond.len()))
            .collect()
    }
}

/// Builds a graph from an edge list.
///
/// The node count is `labels.len()`. When `num_labels` is `None` the label
/// count is inferred as `max(label) + 1`; every class in `[0, c)` must be used.
pub fn build_graph(
    edges: &[(usize, usize)],
    labels: &[usize],
    num_labels: Option<usize>,
    features: Option<Matrix>,
    add_self_loops: bool,
) -> Result<LabeledGraph> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let c = match num_labels {
        Some(c) => c,
        None => labels.iter().copied().max().unwrap_or(0) + 1,
    };
    let mut class_used = vec![false; c];
    for (node, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::LabelOutOfRange {
                node,
                label,
                num_labels: c,
            });
        }
        class_used[label] = true;
    }
    if let Some(empty) = class_used.iter().position(|used| !used) {
        return Err(Error::EmptyLabelClass(empty));
    }
    if let Some(x) = &features {
        if x.rows() != n {
            return Err(Error::NodeCountMismatch {
                what: "feature rows".into(),
                expected: n,
                found: x.rows(),
            });
        }
    }

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::EdgeOutOfRange { u, v, num_nodes: n });
        }
        adjacency[u].push(v);
        if u != v {
            adjacency[v].push(u);
        }
    }
    if add_self_loops {
        for (u, row) in adjacency.iter_mut().enumerate() {
            row.push(u);
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    offsets.push(0);
    for row in &mut adjacency {
        row.sort_unstable();
        row.dedup();
        neighbors.extend_from_slice(row);
        offsets.push(neighbors.len());
    }
    let has_self_loops = (0..n).all(|u| adjacency[u].binary_search(&u).is_ok());

    Ok(LabeledGraph {
        offsets,
        neighbors,
        labels: labels.to_vec(),
        num_labels: c,
        features,
        has_self_loops,
    })
}

impl LabeledGraph {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, u: usize) -> usize {
        self.labels[u]
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    /// True when every node carries a self-loop.
    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    /// Stored neighbors of `u`, ascending; includes `u` itself if it has a self-loop.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Sum of all degrees: twice the non-loop edges plus the self-loops.
    pub fn total_degree(&self) -> usize {
        self.neighbors.len()
    }

    /// Number of undirected edges, counting each self-loop once.
    pub fn num_edges(&self) -> usize {
        let loops = (0..self.num_nodes())
            .filter(|&u| self.has_edge(u, u))
            .count();
        (self.neighbors.len() - loops) / 2 + loops
    }

    /// Undirected edge list with `u <= v`, ascending.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes() {
            for &v in self.neighbors(u) {
                if u <= v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Copy of this graph with the given feature matrix attached.
    pub fn with_features(&self, features: Matrix) -> Result<LabeledGraph> {
        if features.rows() != self.num_nodes() {
            return Err(Error::NodeCountMismatch {
                what: "feature rows".into(),
                expected: self.num_nodes(),
                found: features.rows(),
            });
        }
        let mut g = self.clone();
        g.features = Some(features);
        Ok(g)
    }

    /// Stable fingerprint of the adjacency structure and labels.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        self.offsets.hash(&mut hasher);
        self.neighbors.hash(&mut hasher);
        self.labels.hash(&mut hasher);
        hasher.finish()
    }

    /// Shortest-path distances from `source`, ignoring self-loops.
    /// Unreachable nodes get `usize::MAX`. Stops expanding past `max_depth`.
    pub fn bfs_distances(&self, source: usize, max_depth: Option<usize>) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_nodes()];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u];
            if max_depth.is_some_and(|d| du >= d) {
                continue;
            }
            for &v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Connected component id per node, numbered in order of first appearance.
    pub fn connected_components(&self) -> Vec<usize> {
        let n = self.num_nodes();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components().iter().all(|&c| c == 0)
    }

    /// Errors with [`Error::Disconnected`] unless the graph is connected.
    pub fn require_connected(&self) -> Result<()> {
        let comp = self.connected_components();
        let count = comp.iter().copied().max().map_or(0, |m| m + 1);
        if count <= 1 {
            return Ok(());
        }
        let mut sizes = vec![0; count];
        for c in comp {
            sizes[c] += 1;
        }
        Err(Error::Disconnected {
            components: count,
            sizes,
        })
    }

    /// Induced subgraph on `nodes` (kept in the given order), with labels
    /// re-indexed densely in order of first use. Returns the subgraph and the
    /// mapping from new label ids to the original ones.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<(LabeledGraph, Vec<usize>)> {
        let mut position = vec![usize::MAX; self.num_nodes()];
        for (i, &u) in nodes.iter().enumerate() {
            position[u] = i;
        }
        let mut label_map: Vec<usize> = Vec::new();
        let mut relabel = vec![usize::MAX; self.num_labels];
        let labels: Vec<usize> = nodes
            .iter()
            .map(|&u| {
                let old = self.labels[u];
                if relabel[old] == usize::MAX {
                    relabel[old] = label_map.len();
                    label_map.push(old);
                }
                relabel[old]
            })
            .collect();
        let mut edges = Vec::new();
        for (i, &u) in nodes.iter().enumerate() {
            for &v in self.neighbors(u) {
                let j = position[v];
                if j != usize::MAX && i <= j {
                    edges.push((i, j));
                }
            }
        }
        let features = self.features.as_ref().map(|x| x.select_rows(nodes));
        let mut g = build_graph(&edges, &labels, Some(label_map.len()), features, false)?;
        g.has_self_loops = nodes.iter().all(|&u| self.has_edge(u, u));
        Ok((g, label_map))
    }

    /// Largest connected component (ties go to the lowest component id).
    /// Returns the subgraph, the original id of each kept node, and the label map.
    pub fn largest_component(&self) -> Result<(LabeledGraph, Vec<usize>, Vec<usize>)> {
        let comp = self.connected_components();
        let count = comp.iter().copied().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; count];
        for &c in &comp {
            sizes[c] += 1;
        }
        let best = (0..count)
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
            .ok_or(Error::EmptyGraph)?;
        let nodes: Vec<usize> = (0..self.num_nodes()).filter(|&u| comp[u] == best).collect();
        let (g, label_map) = self.induced_subgraph(&nodes)?;
        Ok((g, nodes, label_map))
    }
}

/// Exact hop sets of `anchor` up to `k` hops. Self-loops never shorten distances.
pub fn hop_sets(g: &LabeledGraph, anchor: usize, k: usize, policy: UnreachablePolicy) -> HopSets {
    assert!(anchor < g.num_nodes(), "anchor {anchor} out of range");
    assert!(k >= 1, "k must be at least 1");
    let dist = g.bfs_distances(anchor, None);
    hop_sets_from_distances(anchor, &dist, k, policy)
}

pub(crate) fn hop_sets_from_distances(
    anchor: usize,
    dist: &[usize],
    k: usize,
    policy: UnreachablePolicy,
) -> HopSets {
    let mut per_hop = vec![Vec::new(); k];
    let mut beyond = Vec::new();
    for (v, &d) in dist.iter().enumerate() {
        if v == anchor {
            continue;
        }
        if d == usize::MAX {
            if policy == UnreachablePolicy::IncludeInBeyond {
                beyond.push(v);
            }
        } else if d <= k {
            per_hop[d - 1].push(v);
        } else {
            beyond.push(v);
        }
    }
    HopSets {
        anchor,
        per_hop,
        beyond,
    }
}

/// Sum of node degrees per label class; the entries add up to the total degree.
pub fn degree_by_label(g: &LabeledGraph) -> Vec<usize> {
    let mut sums = vec![0; g.num_labels()];
    for u in 0..g.num_nodes() {
        sums[g.label(u)] += g.degree(u);
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path4(self_loops: bool) -> LabeledGraph {
        build_graph(
            &[(0, 1), (1, 2), (2, 3)],
            &[0, 0, 1, 1],
            None,
            None,
            self_loops,
        )
        .unwrap()
    }

    #[test]
    fn self_loops_add_one_to_degree() {
        let g = build_graph(&[(0, 1)], &[0, 0], None, None, true).unwrap();
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.degree(1), 2);
        assert!(g.has_self_loops());
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = build_graph(&[(0, 1), (1, 0)], &[0, 1], None, None, false).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn path_degrees() {
        let g = path4(false);
        let deg: Vec<_> = (0..4).map(|u| g.degree(u)).collect();
        assert_eq!(deg, vec![1, 2, 2, 1]);
        assert!(!g.has_self_loops());
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            build_graph(&[], &[], None, None, false),
            Err(Error::EmptyGraph)
        ));
        assert!(matches!(
            build_graph(&[(0, 5)], &[0, 0], None, None, false),
            Err(Error::EdgeOutOfRange { .. })
        ));
        assert!(matches!(
            build_graph(&[(0, 1)], &[0, 3], Some(2), None, false),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
        assert!(matches!(
            build_graph(&[(0, 1)], &[0, 2], None, None, false),
            Err(Error::EmptyLabelClass(1))
        ));
        assert!(matches!(
            build_graph(&[(0, 1)], &[0, 1], None, Some(Matrix::zeros(3, 2)), false),
            Err(Error::NodeCountMismatch { .. })
        ));
    }

    #[test]
    fn path_hop_sets() {
        let g = path4(false);
        let h = hop_sets(&g, 0, 2, UnreachablePolicy::IncludeInBeyond);
        assert_eq!(h.per_hop, vec![vec![1], vec![2]]);
        assert_eq!(h.beyond, vec![3]);
    }

    #[test]
    fn self_loops_do_not_change_hops() {
        let with = hop_sets(&path4(true), 1, 2, UnreachablePolicy::IncludeInBeyond);
        let without = hop_sets(&path4(false), 1, 2, UnreachablePolicy::IncludeInBeyond);
        assert_eq!(with, without);
        assert_eq!(with.per_hop[0], vec![0, 2]);
    }

    #[test]
    fn complete_graph_hops() {
        let mut edges = Vec::new();
        for u in 0..4 {
            for v in u + 1..4 {
                edges.push((u, v));
            }
        }
        let g = build_graph(&edges, &[0, 0, 1, 1], None, None, false).unwrap();
        let h = hop_sets(&g, 0, 2, UnreachablePolicy::IncludeInBeyond);
        assert_eq!(h.per_hop, vec![vec![1, 2, 3], vec![]]);
        assert!(h.beyond.is_empty());
    }

    #[test]
    fn isolated_anchor_policies() {
        let g = build_graph(&[(1, 2)], &[0, 0, 1], None, None, true).unwrap();
        let inc = hop_sets(&g, 0, 3, UnreachablePolicy::IncludeInBeyond);
        assert!(inc.per_hop.iter().all(Vec::is_empty));
        assert_eq!(inc.beyond, vec![1, 2]);
        let exc = hop_sets(&g, 0, 3, UnreachablePolicy::Exclude);
        assert!(exc.beyond.is_empty());
    }

    #[test]
    fn label_degree_sums() {
        assert_eq!(degree_by_label(&path4(false)), vec![3, 3]);
        assert_eq!(degree_by_label(&path4(true)), vec![5, 5]);
        let single = build_graph(&[(0, 1), (1, 2)], &[0, 0, 0], None, None, false).unwrap();
        assert_eq!(degree_by_label(&single), vec![4]);
    }

    #[test]
    fn largest_component_relabels() {
        let g = build_graph(
            &[(0, 1), (2, 3), (3, 4)],
            &[0, 0, 1, 2, 2],
            None,
            None,
            true,
        )
        .unwrap();
        assert!(matches!(
            g.require_connected(),
            Err(Error::Disconnected { components: 2, .. })
        ));
        let (sub, nodes, label_map) = g.largest_component().unwrap();
        assert_eq!(nodes, vec![2, 3, 4]);
        assert_eq!(label_map, vec![1, 2]);
        assert_eq!(sub.labels(), &[0, 1, 1]);
        assert!(sub.has_self_loops());
        assert!(sub.is_connected());
    }
}
