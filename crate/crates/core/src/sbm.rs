//! Seeded stochastic block model graphs with controllable homophily.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{build_graph, LabeledGraph};
use crate::tensor::Matrix;

/// Label-conditioned Gaussian node features: each label gets a random mean
/// vector scaled by `separation`, and every row adds unit-variance noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    pub dim: usize,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_intra: f64,
    pub p_inter: f64,
    pub seed: u64,
    pub ensure_connected: bool,
    pub add_self_loops: bool,
    /// Resampling attempts before falling back to augmentation.
    pub max_retries: usize,
    /// Join disconnected pieces of each block with chain edges after the
    /// retries are used up.
    pub augment: bool,
    pub features: Option<FeatureSpec>,
}

impl SbmSpec {
    pub fn new(block_sizes: Vec<usize>, p_intra: f64, p_inter: f64, seed: u64) -> Self {
        SbmSpec {
            block_sizes,
            p_intra,
            p_inter,
            seed,
            ensure_connected: true,
            add_self_loops: true,
            max_retries: 20,
            augment: true,
            features: None,
        }
    }

    /// Two blocks of 200 nodes, dense inside and sparse across.
    pub fn homophilic(seed: u64) -> Self {
        Self::new(vec![200, 200], 0.05, 0.005, seed)
    }

    /// Two blocks of 200 nodes, sparse inside and dense across.
    pub fn heterophilic(seed: u64) -> Self {
        Self::new(vec![200, 200], 0.005, 0.05, seed)
    }

    pub fn with_features(mut self, features: FeatureSpec) -> Self {
        self.features = Some(features);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if self.block_sizes.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one block is required".into(),
            ));
        }
        if let Some(b) = self.block_sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyLabelClass(b));
        }
        if let Some(f) = self.features {
            if f.dim == 0 {
                return Err(Error::InvalidParameter(
                    "feature dim must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    fn labels(&self) -> Vec<usize> {
        self.block_sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when `a` and `b` were in different sets.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }

    fn components(&mut self) -> usize {
        (0..self.parent.len())
            .filter(|&x| self.find(x) == x)
            .count()
    }
}

fn sample_edges(labels: &[usize], spec: &SbmSpec, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = labels.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] {
                spec.p_intra
            } else {
                spec.p_inter
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Generates a labeled graph from `spec`. Nodes are numbered block by block.
pub fn generate_sbm(spec: &SbmSpec) -> Result<LabeledGraph> {
    spec.validate()?;
    let labels = spec.labels();
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut edges = sample_edges(&labels, spec, &mut rng);
    if spec.ensure_connected {
        let mut attempts = 0;
        loop {
            let mut uf = UnionFind::new(n);
            for &(u, v) in &edges {
                uf.union(u, v);
            }
            if uf.components() == 1 {
                break;
            }
            if attempts < spec.max_retries {
                attempts += 1;
                edges = sample_edges(&labels, spec, &mut rng);
                continue;
            }
            if !spec.augment {
                return Err(Error::ConnectivityFailed(format!(
                    "{} components after {} resamples",
                    uf.components(),
                    spec.max_retries
                )));
            }
            let mut start = 0;
            for &size in &spec.block_sizes {
                for w in start + 1..start + size {
                    if uf.union(w - 1, w) {
                        edges.push((w - 1, w));
                    }
                }
                start += size;
            }
            let left = uf.components();
            if left != 1 {
                return Err(Error::ConnectivityFailed(format!(
                    "{left} components remain after joining each block; no edges cross between some blocks"
                )));
            }
            log::debug!("sbm seed {}: connected by augmentation", spec.seed);
            break;
        }
    }

    let features = spec.features.map(|f| {
        let mut frng = ChaCha8Rng::seed_from_u64(spec.seed);
        frng.set_stream(1);
        let c = spec.block_sizes.len();
        let means: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                (0..f.dim)
                    .map(|_| f.separation * frng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut x = Matrix::zeros(n, f.dim);
        for (u, &l) in labels.iter().enumerate() {
            for (j, &m) in means[l].iter().enumerate() {
                x.set(u, j, m + frng.sample::<f64, _>(StandardNormal));
            }
        }
        x
    });

    build_graph(
        &edges,
        &labels,
        Some(spec.block_sizes.len()),
        features,
        spec.add_self_loops,
    )
}

/// Expected label transition matrix of `spec`.
///
/// Entry `(i, j)` is the expected number of adjacency entries from block `i`
/// into block `j` divided by its row total. Self-loops add one entry per node
/// when enabled. Connectivity augmentation is ignored.
pub fn expected_transition(spec: &SbmSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let c = spec.block_sizes.len();
    let mut t = DMatrix::<f64>::zeros(c, c);
    for i in 0..c {
        let ni = spec.block_sizes[i] as f64;
        for j in 0..c {
            let nj = spec.block_sizes[j] as f64;
            t[(i, j)] = if i == j {
                let loops = if spec.add_self_loops { 1.0 } else { 0.0 };
                ni * (spec.p_intra * (ni - 1.0) + loops)
            } else {
                ni * nj * spec.p_inter
            };
        }
        let total: f64 = t.row(i).iter().sum();
        if total > 0.0 {
            for j in 0..c {
                t[(i, j)] /= total;
            }
        } else {
            t[(i, i)] = 1.0;
        }
    }
    Ok(t)
}
