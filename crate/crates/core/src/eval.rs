//! Downstream evaluation of frozen embeddings.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::cosine;
use crate::error::{Error, Result};
use crate::graph::{LabeledGraph, UnreachablePolicy};
use crate::io::Splits;
use crate::loss::HopIndex;
use crate::tensor::{adam_step, AdamConfig, AdamState, Matrix, Param};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-4,
            lr: 0.05,
            epochs: 300,
        }
    }
}

/// Column means and standard deviations of the training rows.
fn standardizer(h: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = h.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, x) in mean.iter_mut().zip(h.row(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = vec![0.0; d];
    for &r in rows {
        for ((s, x), m) in std.iter_mut().zip(h.row(r)).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (mean, std)
}

fn standardized_rows(h: &Matrix, rows: &[usize], mean: &[f64], std: &[f64]) -> Matrix {
    let mut x = h.select_rows(rows);
    for r in 0..x.rows() {
        for ((v, m), s) in x.row_mut(r).iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
    x
}

fn softmax_rows(logits: &mut Matrix) {
    for r in 0..logits.rows() {
        let row = logits.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

fn logits(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut z = x.matmul(w)?;
    for r in 0..z.rows() {
        for (v, bias) in z.row_mut(r).iter_mut().zip(b.row(0)) {
            *v += bias;
        }
    }
    Ok(z)
}

/// Test accuracy of a multinomial logistic regression trained on the train
/// split. Features are standardized with train-split statistics; training is
/// full-batch Adam from zero weights with an L2 penalty.
pub fn linear_probe(
    h: &Matrix,
    labels: &[usize],
    splits: &Splits,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if labels.len() != h.rows() {
        return Err(Error::NodeCountMismatch {
            what: "labels for embeddings".into(),
            expected: h.rows(),
            found: labels.len(),
        });
    }
    splits.validate(h.rows())?;
    if splits.test.is_empty() || splits.train.is_empty() {
        return Err(Error::InvalidParameter(
            "train and test splits must be non-empty".into(),
        ));
    }
    let first = labels[splits.train[0]];
    if splits.train.iter().all(|&u| labels[u] == first) {
        return Err(Error::SingleClassTrainSplit);
    }
    let c = labels.iter().max().map_or(0, |m| m + 1);
    let d = h.cols();
    let (mean, std) = standardizer(h, &splits.train);
    let x = standardized_rows(h, &splits.train, &mean, &std);
    let n = x.rows() as f64;

    let mut params = vec![
        Param::new("probe.w", Matrix::zeros(d, c)),
        Param::new("probe.b", Matrix::zeros(1, c)),
    ];
    let mut state = AdamState::new(&params);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    for _ in 0..cfg.epochs {
        let mut p = logits(&x, &params[0].value, &params[1].value)?;
        softmax_rows(&mut p);
        for (r, &u) in splits.train.iter().enumerate() {
            let row = p.row_mut(r);
            row[labels[u]] -= 1.0;
            row.iter_mut().for_each(|v| *v /= n);
        }
        let mut gw = x.t_matmul(&p)?;
        for (g, w) in gw.data_mut().iter_mut().zip(params[0].value.data()) {
            *g += cfg.l2 * w;
        }
        let mut gb = Matrix::zeros(1, c);
        for r in 0..p.rows() {
            for (g, v) in gb.row_mut(0).iter_mut().zip(p.row(r)) {
                *g += v;
            }
        }
        adam_step(&mut params, &[gw, gb], &mut state, &adam)?;
    }

    let xt = standardized_rows(h, &splits.test, &mean, &std);
    let scores = logits(&xt, &params[0].value, &params[1].value)?;
    let correct = splits
        .test
        .iter()
        .enumerate()
        .filter(|&(r, &u)| argmax(scores.row(r)) == labels[u])
        .count();
    Ok(correct as f64 / splits.test.len() as f64)
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_once(h: &Matrix, c: usize, rng: &mut ChaCha8Rng, max_iter: usize) -> KMeansResult {
    let n = h.rows();
    let mut centers = vec![h.row(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(h.row(i), &centers[0])).collect();
    while centers.len() < c {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..n),
        };
        centers.push(h.row(next).to_vec());
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(h.row(i), &centers[centers.len() - 1]));
        }
    }
    let mut assignments = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let next: Vec<usize> = (0..n).map(|i| nearest(h.row(i), &centers).0).collect();
        let changed = next != assignments;
        assignments = next;
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; h.cols()]; c];
        let mut counts = vec![0usize; c];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(h.row(i)) {
                *s += x;
            }
        }
        for j in 0..c {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(h.row(i), &centers[assignments[i]]))
        .sum();
    KMeansResult {
        assignments,
        inertia,
    }
}

/// k-means with k-means++ seeding; the lowest-inertia run of `restarts` wins.
pub fn kmeans(h: &Matrix, c: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if c == 0 || restarts == 0 {
        return Err(Error::InvalidParameter(
            "need at least one cluster and one restart".into(),
        ));
    }
    if h.rows() < c {
        return Err(Error::TooFewNodes {
            needed: c,
            found: h.rows(),
        });
    }
    let runs: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            kmeans_once(h, c, &mut rng, 300)
        })
        .collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.inertia < runs[best].inertia {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one restart"))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization. Two
/// single-block partitions score 1.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidParameter(
            "partitions must be non-empty and equal length".into(),
        ));
    }
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let ha = entropy(ca.iter().copied(), n);
    let hb = entropy(cb.iter().copied(), n);
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let nxy = joint[x * kb + y];
            if nxy > 0 {
                let pxy = nxy as f64 / n;
                mi += pxy * (pxy / ((ca[x] as f64 / n) * (cb[y] as f64 / n))).ln();
            }
        }
    }
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}

/// NMI between labels and a `c`-cluster k-means partition (10 restarts).
pub fn cluster_nmi(h: &Matrix, labels: &[usize], c: usize, seed: u64) -> Result<f64> {
    if c < 2 {
        return Err(Error::InvalidParameter("need at least 2 clusters".into()));
    }
    let km = kmeans(h, c, seed, 10)?;
    nmi(labels, &km.assignments)
}

/// Mean same-label fraction among each node's 5 most cosine-similar nodes.
/// Ties in similarity go to the lower node id.
pub fn sim_at_5(h: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = h.rows();
    if n < 6 {
        return Err(Error::TooFewNodes {
            needed: 6,
            found: n,
        });
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sims: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (cosine(h.row(i), h.row(j)), j))
                .collect();
            let by_rank =
                |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            sims.select_nth_unstable_by(4, by_rank);
            let same = sims[..5]
                .iter()
                .filter(|&&(_, j)| labels[j] == labels[i])
                .count();
            same as f64 / 5.0
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

/// Distribution of anchor/neighbor cosine similarities at one hop distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopSimilarity {
    pub hop: usize,
    pub pairs: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Cosine similarity of embeddings between anchors and their hop-`n`
/// neighbors for `n = 1..=k`, plus the beyond set as hop `k + 1`.
/// Hops without any pair report NaN statistics.
pub fn hop_similarity(
    h: &Matrix,
    g: &LabeledGraph,
    k: usize,
    policy: UnreachablePolicy,
) -> Result<Vec<HopSimilarity>> {
    if h.rows() != g.num_nodes() {
        return Err(Error::NodeCountMismatch {
            what: "embedding rows".into(),
            expected: g.num_nodes(),
            found: h.rows(),
        });
    }
    let index = HopIndex::build(g, k, policy)?;
    let per_anchor: Vec<Vec<Vec<f64>>> = (0..g.num_nodes())
        .into_par_iter()
        .map(|a| {
            let sets = index.anchor(a);
            (1..=k + 1)
                .map(|n| {
                    sets.hop(n)
                        .iter()
                        .map(|&v| cosine(h.row(a), h.row(v)))
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok((1..=k + 1)
        .map(|n| {
            let mut values: Vec<f64> = per_anchor
                .iter()
                .flat_map(|hops| hops[n - 1].iter().copied())
                .collect();
            let mean = if values.is_empty() {
                f64::NAN
            } else {
                values.iter().sum::<f64>() / values.len() as f64
            };
            values.sort_by(f64::total_cmp);
            HopSimilarity {
                hop: n,
                pairs: values.len(),
                mean,
                q1: quantile(&values, 0.25),
                median: quantile(&values, 0.5),
                q3: quantile(&values, 0.75),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub nmi: f64,
    pub sim_at_5: f64,
    pub hop_sim: Vec<HopSimilarity>,
}

/// Every metric for embeddings `h` of graph `g`.
pub fn evaluate(
    h: &Matrix,
    g: &LabeledGraph,
    splits: &Splits,
    k: usize,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<EvalReport> {
    Ok(EvalReport {
        accuracy: linear_probe(h, g.labels(), splits, probe)?,
        nmi: cluster_nmi(h, g.labels(), g.num_labels().max(2), seed)?,
        sim_at_5: sim_at_5(h, g.labels())?,
        hop_sim: hop_similarity(h, g, k, UnreachablePolicy::IncludeInBeyond)?,
    })
}
