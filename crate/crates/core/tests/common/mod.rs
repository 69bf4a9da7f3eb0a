//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod fd;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relgraph::encoder::{Encoder, EncoderConfig};
use relgraph::sbm::{generate_sbm, SbmSpec};
use relgraph::{build_graph, LabeledGraph, Matrix};

pub const INF: usize = usize::MAX;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Erdős–Rényi graph with random labels; may be disconnected.
pub fn random_graph(
    n: usize,
    c: usize,
    p: f64,
    self_loops: bool,
    rng: &mut ChaCha8Rng,
) -> LabeledGraph {
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    for (l, slot) in labels.iter_mut().take(c).enumerate() {
        *slot = l;
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    build_graph(&edges, &labels, Some(c), None, self_loops).unwrap()
}

/// Connected SBM graph with random block count, sizes and probabilities.
pub fn random_connected_sbm(seed: u64) -> LabeledGraph {
    let mut r = rng(seed ^ 0xabcdef);
    loop {
        let c = r.random_range(2..=6);
        let sizes: Vec<usize> = (0..c).map(|_| r.random_range(5..=50)).collect();
        let p_intra = r.random_range(0.05..0.5);
        let p_inter = r.random_range(0.005..0.2);
        let spec = SbmSpec::new(sizes, p_intra, p_inter, r.random());
        if let Ok(g) = generate_sbm(&spec) {
            return g;
        }
    }
}

/// All-pairs shortest path lengths by repeated relaxation over the edge list.
pub fn all_pairs_distances(g: &LabeledGraph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let mut d = vec![vec![INF; n]; n];
    for (u, row) in d.iter_mut().enumerate() {
        row[u] = 0;
    }
    for (u, v) in g.edge_list() {
        if u != v {
            d[u][v] = 1;
            d[v][u] = 1;
        }
    }
    for m in 0..n {
        for i in 0..n {
            if d[i][m] == INF {
                continue;
            }
            for j in 0..n {
                if d[m][j] != INF && d[i][m] + d[m][j] < d[i][j] {
                    d[i][j] = d[i][m] + d[m][j];
                }
            }
        }
    }
    d
}

/// Nodes at exactly distance `n` from `a` (`n > k` means "beyond k",
/// unreachable included).
pub fn naive_hop(dist: &[Vec<usize>], a: usize, n: usize, k: usize) -> Vec<usize> {
    (0..dist.len())
        .filter(|&v| v != a)
        .filter(|&v| {
            if n > k {
                dist[a][v] > k
            } else {
                dist[a][v] == n
            }
        })
        .collect()
}

/// `LC_emp(n)` by a double loop over anchors and all nodes.
pub fn naive_lc(g: &LabeledGraph, dist: &[Vec<usize>], n: usize) -> f64 {
    let mut sum = 0.0;
    let mut anchors = 0;
    for a in 0..g.num_nodes() {
        let mut same = 0;
        let mut total = 0;
        for v in 0..g.num_nodes() {
            if dist[a][v] == n {
                total += 1;
                if g.label(v) == g.label(a) {
                    same += 1;
                }
            }
        }
        if total > 0 {
            sum += same as f64 / total as f64;
            anchors += 1;
        }
    }
    if anchors == 0 {
        0.0
    } else {
        sum / anchors as f64
    }
}

/// Perfect trees: every node at depth `t` has `branching[t]` children.
/// Rooted at node 0, hop sizes from the root are the running products.
pub fn layered_tree(branching: &[usize]) -> LabeledGraph {
    let mut edges = Vec::new();
    let mut frontier = vec![0usize];
    let mut next_id = 1;
    for &b in branching {
        let mut next = Vec::new();
        for &u in &frontier {
            for _ in 0..b {
                edges.push((u, next_id));
                next.push(next_id);
                next_id += 1;
            }
        }
        frontier = next;
    }
    let labels: Vec<usize> = (0..next_id).map(|i| i % 2).collect();
    build_graph(&edges, &labels, None, None, false).unwrap()
}

/// Small connected graph with random features, for encoder and loss checks.
pub fn small_featured_graph(n: usize, dim: usize, seed: u64) -> LabeledGraph {
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (r.random_range(0..v), v)).collect();
    for _ in 0..n / 2 {
        let u = r.random_range(0..n);
        let v = r.random_range(0..n);
        if u != v {
            edges.push((u, v));
        }
    }
    let x = random_matrix(n, dim, &mut r);
    build_graph(&edges, &labels, None, Some(x), true).unwrap()
}

pub fn encoder_for(g: &LabeledGraph, cfg: EncoderConfig, seed: u64) -> Encoder {
    Encoder::new(g, cfg, seed).unwrap()
}

/// Cosine with norms floored at 1e-12, so an all-zero row has similarity 0.
fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dot / (na * nb)
}

/// Enumeration oracle for the relative losses: plain exponentials of
/// projected cosines, hop sets from all-pairs distances, numerator-hop
/// temperatures, terms skipped when a required set is empty.
pub fn brute_force_loss(
    encoder: &Encoder,
    g: &LabeledGraph,
    k: usize,
    alpha: f64,
    listwise: bool,
) -> f64 {
    let h = encoder.forward(g.features().unwrap()).unwrap();
    let z = encoder.project(&h).unwrap();
    let dist = all_pairs_distances(g);
    let mut total = 0.0;
    for a in 0..g.num_nodes() {
        let hops: Vec<Vec<usize>> = (1..=k + 1).map(|n| naive_hop(&dist, a, n, k)).collect();
        for n in 1..=k {
            let tau = encoder.hop_temperature(n);
            let mass = |set: &[usize]| -> f64 {
                set.iter()
                    .map(|&v| (cos(z.row(a), z.row(v)) / tau).exp())
                    .sum()
            };
            if hops[n - 1].is_empty() {
                continue;
            }
            let near = mass(&hops[n - 1]);
            if listwise {
                let rest: f64 = (n + 1..=k + 1).map(|m| mass(&hops[m - 1])).sum();
                let r = near / (near + rest);
                total -= r.min(alpha).ln() / k as f64;
            } else {
                for m in 1..=k - n + 1 {
                    if hops[n + m - 1].is_empty() {
                        continue;
                    }
                    let r = near / (near + mass(&hops[n + m - 1]));
                    total -= r.min(alpha).ln() / k as f64;
                }
            }
        }
    }
    total
}

/// Relative error with a small absolute floor.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Makes every projected row identical, so all θ values equal 1.
pub fn constant_projection(encoder: &mut Encoder) {
    let w2 = encoder.param("proj.w2").unwrap();
    let (rows, cols) = w2.shape();
    encoder
        .set_param("proj.w2", Matrix::zeros(rows, cols))
        .unwrap();
    encoder
        .set_param("proj.b2", Matrix::filled(1, cols, 1.0))
        .unwrap();
}

/// Path graph `0 - 1 - .. - (n-1)` with random features and no self-loops.
pub fn featured_path(n: usize, dim: usize, seed: u64) -> LabeledGraph {
    let edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = random_matrix(n, dim, &mut rng(seed));
    build_graph(&edges, &labels, None, Some(x), false).unwrap()
}
