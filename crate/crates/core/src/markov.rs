//! Label-level random walks: the degree-weighted label transition matrix,
//! its stationary distribution and spectrum, analytic `LC_prob(k)` curves and
//! a Monte-Carlo walker that samples node-level steps.

use nalgebra::{Complex, DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{degree_by_label, LabeledGraph};

/// Tolerance for row sums of a stochastic matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// The second-largest-modulus eigenvalue of a transition matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondEigenvalue {
    pub value: Complex<f64>,
    pub modulus: f64,
    /// True when the imaginary part is not negligible; the decay-sign
    /// analysis only applies to real values.
    pub is_complex: bool,
}

impl SecondEigenvalue {
    /// Real part, meaningful when `!is_complex`.
    pub fn real(&self) -> f64 {
        self.value.re
    }
}

/// Row-stochastic `c x c` label transition matrix with its stationary
/// distribution and spectrum.
#[derive(Debug, Clone)]
pub struct LabelTransition {
    pub matrix: DMatrix<f64>,
    pub pi: Vec<f64>,
    /// Eigenvalues sorted by modulus, descending (ties: larger real part first).
    pub eigenvalues: Vec<Complex<f64>>,
    pub lambda2: Option<SecondEigenvalue>,
    /// `‖πT − π‖∞` for the stored `pi`.
    pub fixed_point_residual: f64,
}

impl LabelTransition {
    pub fn num_labels(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wraps an arbitrary row-stochastic matrix. The stationary distribution is
    /// found by solving the left fixed-point system directly.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        validate_stochastic(&matrix)?;
        let pi = stationary_by_solve(&matrix)?;
        Ok(Self::assemble(matrix, pi))
    }

    fn assemble(matrix: DMatrix<f64>, pi: Vec<f64>) -> Self {
        let eigenvalues = sorted_eigenvalues(&matrix);
        let lambda2 = second_eigenvalue(&eigenvalues);
        let fixed_point_residual = fixed_point_residual(&matrix, &pi);
        LabelTransition {
            matrix,
            pi,
            eigenvalues,
            lambda2,
            fixed_point_residual,
        }
    }

    /// `T^k`, by repeated multiplication.
    pub fn power(&self, k: usize) -> DMatrix<f64> {
        let c = self.num_labels();
        let mut out = DMatrix::identity(c, c);
        for _ in 0..k {
            out = &out * &self.matrix;
        }
        out
    }

    pub fn properties(&self) -> MarkovProperties {
        markov_properties(&self.matrix)
    }
}

fn validate_stochastic(matrix: &DMatrix<f64>) -> Result<()> {
    if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
        return Err(Error::InvalidParameter(format!(
            "transition matrix must be square and non-empty, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    for i in 0..matrix.nrows() {
        let row = matrix.row(i);
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "row {i} has negative or non-finite entries"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("row {i} sums to {sum}")));
        }
    }
    Ok(())
}

fn sorted_eigenvalues(matrix: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut eig: Vec<Complex<f64>> = matrix
        .clone()
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.re.partial_cmp(&a.re).unwrap_or(std::cmp::Ordering::Equal))
    });
    eig
}

fn second_eigenvalue(eigenvalues: &[Complex<f64>]) -> Option<SecondEigenvalue> {
    eigenvalues.get(1).map(|&value| {
        let modulus = value.norm();
        SecondEigenvalue {
            value,
            modulus,
            is_complex: value.im.abs() > 1e-10 * modulus.max(1.0),
        }
    })
}

fn fixed_point_residual(matrix: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let c = matrix.nrows();
    (0..c)
        .map(|j| {
            let pj: f64 = (0..c).map(|i| pi[i] * matrix[(i, j)]).sum();
            (pj - pi[j]).abs()
        })
        .fold(0.0, f64::max)
}

/// Stationary distribution from the linear system `(Tᵀ − I)π = 0`, `Σπ = 1`.
pub fn stationary_by_solve(matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
    let c = matrix.nrows();
    let mut system = matrix.transpose() - DMatrix::<f64>::identity(c, c);
    for j in 0..c {
        system[(c - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(c);
    rhs[c - 1] = 1.0;
    let solution = system.lu().solve(&rhs).ok_or_else(|| {
        Error::InvalidParameter("stationary distribution is not unique (reducible chain)".into())
    })?;
    Ok(solution.iter().copied().collect())
}

/// Degree-weighted label transition matrix of a connected graph.
///
/// `T_ij` is the number of adjacency entries from label-`i` nodes into
/// label-`j` nodes divided by the total degree of label `i`. The stationary
/// distribution is the closed form `π_j = deg(label j) / total degree`.
pub fn build_transition(g: &LabeledGraph) -> Result<LabelTransition> {
    g.require_connected()?;
    let c = g.num_labels();
    let degree_sums = degree_by_label(g);
    if let Some(empty) = degree_sums.iter().position(|&d| d == 0) {
        return Err(Error::ZeroDegreeLabel(empty));
    }
    let mut counts = DMatrix::<f64>::zeros(c, c);
    for u in 0..g.num_nodes() {
        let i = g.label(u);
        for &v in g.neighbors(u) {
            counts[(i, g.label(v))] += 1.0;
        }
    }
    let mut matrix = counts;
    for i in 0..c {
        let total = degree_sums[i] as f64;
        for j in 0..c {
            matrix[(i, j)] /= total;
        }
    }
    let total: usize = degree_sums.iter().sum();
    let pi = degree_sums
        .iter()
        .map(|&d| d as f64 / total as f64)
        .collect();
    Ok(LabelTransition::assemble(matrix, pi))
}

/// Orientation of the symmetric two-label model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `[[p, 1−p], [1−p, p]]`
    Homophilic,
    /// `[[1−p, p], [p, 1−p]]`
    Heterophilic,
}

/// The idealized two-label transition matrix with its closed-form spectrum
/// `{1, 2p−1}` (homophilic) or `{1, 1−2p}` (heterophilic).
pub fn two_label_model(p: f64, orientation: Orientation) -> Result<LabelTransition> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p must lie in (0, 1), got {p}"
        )));
    }
    let (stay, leave, lambda) = match orientation {
        Orientation::Homophilic => (p, 1.0 - p, 2.0 * p - 1.0),
        Orientation::Heterophilic => (1.0 - p, p, 1.0 - 2.0 * p),
    };
    let matrix = DMatrix::from_row_slice(2, 2, &[stay, leave, leave, stay]);
    let pi = vec![0.5, 0.5];
    let eigenvalues = vec![Complex::new(1.0, 0.0), Complex::new(lambda, 0.0)];
    let lambda2 = second_eigenvalue(&eigenvalues);
    let fixed_point_residual = fixed_point_residual(&matrix, &pi);
    Ok(LabelTransition {
        matrix,
        pi,
        eigenvalues,
        lambda2,
        fixed_point_residual,
    })
}

/// Fitted envelope `|LC_prob(k) − π_i| <= C·λ^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundFit {
    pub c: f64,
    pub lambda: f64,
}

/// Return-to-label probabilities `LC_prob(k) = (T^k)_ii` for `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub label: usize,
    pub lc_prob: Vec<f64>,
    pub pi_target: f64,
    pub bound: BoundFit,
}

/// Deviations below this are treated as converged when fitting `C`.
const FIT_FLOOR: f64 = 1e-13;

pub fn lc_prob(t: &LabelTransition, label: usize, max_k: usize) -> Result<DecayReport> {
    let c = t.num_labels();
    if label >= c {
        return Err(Error::InvalidParameter(format!(
            "label {label} outside [0, {c})"
        )));
    }
    let mut row = DVector::<f64>::zeros(c);
    row[label] = 1.0;
    let mut values = Vec::with_capacity(max_k + 1);
    values.push(1.0);
    for _ in 0..max_k {
        row = t.matrix.tr_mul(&row);
        values.push(row[label].clamp(0.0, 1.0));
    }
    let pi_target = t.pi[label];
    let lambda = t.lambda2.map_or(0.0, |l| l.modulus);
    let mut c_fit: f64 = 0.0;
    for (k, &v) in values.iter().enumerate() {
        let dev = (v - pi_target).abs();
        let envelope = lambda.powi(k as i32);
        if k == 0 || (dev > FIT_FLOOR && envelope > 0.0) {
            c_fit = c_fit.max(dev / envelope);
        }
    }
    Ok(DecayReport {
        label,
        lc_prob: values,
        pi_target,
        bound: BoundFit { c: c_fit, lambda },
    })
}

/// `max_i |(T^k)_ii − π_i|` for `k = 0..=K`.
///
/// For `k >= 1` this uses powers of `T − 1π`, which equal `T^k − 1π`, so tiny
/// deviations are resolved without cancellation against `π`.
pub fn convergence_profile(t: &LabelTransition, max_k: usize) -> Vec<f64> {
    let c = t.num_labels();
    let mut deviation = t.matrix.clone();
    for i in 0..c {
        for j in 0..c {
            deviation[(i, j)] -= t.pi[j];
        }
    }
    let mut out = Vec::with_capacity(max_k + 1);
    out.push(t.pi.iter().map(|p| (1.0 - p).abs()).fold(0.0, f64::max));
    let mut power = DMatrix::<f64>::identity(c, c);
    for _ in 0..max_k {
        power = &power * &deviation;
        out.push((0..c).map(|i| power[(i, i)].abs()).fold(0.0, f64::max));
    }
    out
}

/// Basic Markov-chain properties of a transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkovProperties {
    pub row_stochastic: bool,
    pub irreducible: bool,
    pub aperiodic: bool,
}

/// Checks row stochasticity, irreducibility (strong connectivity of the
/// support digraph) and aperiodicity (positive diagonal, or else every state
/// has period 1).
pub fn markov_properties(matrix: &DMatrix<f64>) -> MarkovProperties {
    let c = matrix.nrows();
    let square = c == matrix.ncols() && c > 0;
    let row_stochastic = square
        && (0..c).all(|i| {
            let row = matrix.row(i);
            row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL
        });
    if !square {
        return MarkovProperties {
            row_stochastic,
            irreducible: false,
            aperiodic: false,
        };
    }
    let reach = reachability(matrix);
    let irreducible = (0..c).all(|i| (0..c).all(|j| reach[i][j]));
    let aperiodic = (0..c).all(|i| matrix[(i, i)] > 0.0) || all_periods_one(matrix, &reach);
    MarkovProperties {
        row_stochastic,
        irreducible,
        aperiodic,
    }
}

/// `reach[i][j]`: a path of length >= 1 leads from `i` to `j`.
fn reachability(matrix: &DMatrix<f64>) -> Vec<Vec<bool>> {
    let c = matrix.nrows();
    let mut reach: Vec<Vec<bool>> = (0..c)
        .map(|i| (0..c).map(|j| matrix[(i, j)] > 0.0).collect())
        .collect();
    for m in 0..c {
        for i in 0..c {
            if reach[i][m] {
                for j in 0..c {
                    if reach[m][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn all_periods_one(matrix: &DMatrix<f64>, reach: &[Vec<bool>]) -> bool {
    let c = matrix.nrows();
    let mut done = vec![false; c];
    for root in 0..c {
        if done[root] {
            continue;
        }
        // strongly connected class of `root`
        let class: Vec<usize> = (0..c)
            .filter(|&j| j == root || (reach[root][j] && reach[j][root]))
            .collect();
        for &j in &class {
            done[j] = true;
        }
        if !reach[root][root] {
            return false;
        }
        let mut level = vec![usize::MAX; c];
        level[root] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        let mut period = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &class {
                if matrix[(u, v)] <= 0.0 {
                    continue;
                }
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                } else {
                    period = gcd(period, (level[u] + 1).abs_diff(level[v]));
                }
            }
        }
        if period != 1 {
            return false;
        }
    }
    true
}

/// How walkers pick their starting node among nodes of the start label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WalkStart {
    /// Proportional to node degree, matching the aggregation behind `T`.
    #[default]
    DegreeWeighted,
    Uniform,
}

/// What a walker does between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WalkMode {
    /// Plain node-level walk: each step moves to a uniform stored neighbor.
    #[default]
    Node,
    /// Before every step the walker is re-placed on a degree-weighted node of
    /// its current label, then takes one node-level step. The label sequence of
    /// this process is exactly the Markov chain with matrix `T`.
    Lumped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkOptions {
    pub start: WalkStart,
    pub mode: WalkMode,
    /// Walks per independently seeded stream.
    pub chunk_size: usize,
}

impl Default for WalkOptions {
    fn default() -> Self {
        WalkOptions {
            start: WalkStart::DegreeWeighted,
            mode: WalkMode::Node,
            chunk_size: 4096,
        }
    }
}

/// Empirical label occupancy `p̂_k(j|i)` of simulated walkers.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkEstimate {
    pub start_label: usize,
    pub walks: usize,
    pub seed: u64,
    pub streams: usize,
    /// `probabilities[k][j]` for `k = 0..=K`.
    pub probabilities: Vec<Vec<f64>>,
}

impl WalkEstimate {
    /// `max_{k,j} |p̂_k(j|i) − (T^k)_ij|` over all recorded steps.
    pub fn max_deviation(&self, t: &LabelTransition) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, row) in self.probabilities.iter().enumerate() {
            let power = t.power(k);
            for (j, &p) in row.iter().enumerate() {
                worst = worst.max((p - power[(self.start_label, j)]).abs());
            }
        }
        worst
    }
}

struct LabelSampler {
    nodes: Vec<usize>,
    weights: WeightedIndex<f64>,
}

fn label_sampler(g: &LabeledGraph, label: usize, start: WalkStart) -> Result<LabelSampler> {
    let nodes: Vec<usize> = (0..g.num_nodes())
        .filter(|&u| g.label(u) == label)
        .collect();
    if nodes.is_empty() {
        return Err(Error::NoNodesWithLabel(label));
    }
    let weights: Vec<f64> = match start {
        WalkStart::DegreeWeighted => nodes.iter().map(|&u| g.degree(u) as f64).collect(),
        WalkStart::Uniform => vec![1.0; nodes.len()],
    };
    let weights = WeightedIndex::new(&weights).map_err(|_| Error::ZeroDegreeLabel(label))?;
    Ok(LabelSampler { nodes, weights })
}

/// Simulates `walks` random walks of `max_k` steps starting from label
/// `start_label` and records the label distribution after each step.
///
/// Walks are split into fixed-size chunks, each driven by its own ChaCha
/// stream, so the result depends only on the seed and chunk size.
pub fn monte_carlo_lc(
    g: &LabeledGraph,
    start_label: usize,
    max_k: usize,
    walks: usize,
    seed: u64,
    opts: WalkOptions,
) -> Result<WalkEstimate> {
    if walks == 0 {
        return Err(Error::InvalidParameter("walks must be at least 1".into()));
    }
    if start_label >= g.num_labels() {
        return Err(Error::NoNodesWithLabel(start_label));
    }
    g.require_connected()?;
    let start = label_sampler(g, start_label, opts.start)?;
    let relocate: Vec<LabelSampler> = match opts.mode {
        WalkMode::Node => Vec::new(),
        WalkMode::Lumped => (0..g.num_labels())
            .map(|l| label_sampler(g, l, WalkStart::DegreeWeighted))
            .collect::<Result<_>>()?,
    };
    let chunk_size = opts.chunk_size.max(1);
    let streams = walks.div_ceil(chunk_size);
    let c = g.num_labels();

    let partial: Vec<Vec<u64>> = (0..streams)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let count = chunk_size.min(walks - s * chunk_size);
            let mut tally = vec![0u64; (max_k + 1) * c];
            for _ in 0..count {
                let mut u = start.nodes[start.weights.sample(&mut rng)];
                tally[g.label(u)] += 1;
                for k in 1..=max_k {
                    if opts.mode == WalkMode::Lumped {
                        let sampler = &relocate[g.label(u)];
                        u = sampler.nodes[sampler.weights.sample(&mut rng)];
                    }
                    let nbrs = g.neighbors(u);
                    if !nbrs.is_empty() {
                        u = nbrs[rng.random_range(0..nbrs.len())];
                    }
                    tally[k * c + g.label(u)] += 1;
                }
            }
            tally
        })
        .collect();

    let mut totals = vec![0u64; (max_k + 1) * c];
    for tally in &partial {
        for (t, x) in totals.iter_mut().zip(tally) {
            *t += x;
        }
    }
    let probabilities = (0..=max_k)
        .map(|k| {
            (0..c)
                .map(|j| totals[k * c + j] as f64 / walks as f64)
                .collect()
        })
        .collect();
    Ok(WalkEstimate {
        start_label,
        walks,
        seed,
        streams,
        probabilities,
    })
}
