//! Relative-similarity contrastive losses over hop neighborhoods.
//!
//! For anchor `q` with hop sets `S_1..S_k` and the beyond set `S_{k+1}`, the
//! pairwise ratio compares the similarity mass of hop `n` with that of hop
//! `n + m`, and the listwise ratio compares hop `n` against hops `n..=k+1`
//! together. Both are clamped at `α` inside the log. Two InfoNCE-style
//! baselines (positives summed inside or outside the log) are included.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{cosine, hop_temperature, Encoder, COSINE_EPS};
use crate::error::{Error, Result};
use crate::graph::{hop_sets, HopSets, LabeledGraph, UnreachablePolicy};
use crate::tensor::{logsumexp, Matrix, Segments, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossVariant {
    #[default]
    Pair,
    List,
    /// Positives summed inside the log.
    In,
    /// One term per positive, summed outside the log.
    Out,
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pair" | "pairwise" => Ok(LossVariant::Pair),
            "list" | "listwise" => Ok(LossVariant::List),
            "in" => Ok(LossVariant::In),
            "out" => Ok(LossVariant::Out),
            other => Err(Error::InvalidParameter(format!(
                "unknown loss variant {other:?}"
            ))),
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::Pair => "pair",
            LossVariant::List => "list",
            LossVariant::In => "in",
            LossVariant::Out => "out",
        })
    }
}

/// Which hop temperatures apply inside one ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemperatureRule {
    /// The numerator hop's `τ_n` scales every exponential of the ratio.
    #[default]
    Numerator,
    /// Each exponential uses the temperature of the hop its node belongs to.
    PerHop,
}

impl FromStr for TemperatureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "numerator" => Ok(TemperatureRule::Numerator),
            "per_hop" | "per-hop" => Ok(TemperatureRule::PerHop),
            other => Err(Error::InvalidParameter(format!(
                "unknown temperature rule {other:?}"
            ))),
        }
    }
}

impl fmt::Display for TemperatureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemperatureRule::Numerator => "numerator",
            TemperatureRule::PerHop => "per_hop",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub k: usize,
    pub alpha: f64,
    pub variant: LossVariant,
    /// Per-anchor cap on nodes drawn from each hop set (beyond set included).
    pub beyond_sample: Option<usize>,
    pub seed: u64,
    pub temperature_rule: TemperatureRule,
    pub unreachable: UnreachablePolicy,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            k: 2,
            alpha: 1.0,
            variant: LossVariant::Pair,
            beyond_sample: None,
            seed: 0,
            temperature_rule: TemperatureRule::Numerator,
            unreachable: UnreachablePolicy::IncludeInBeyond,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.beyond_sample == Some(0) {
            return Err(Error::InvalidParameter(
                "beyond_sample must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Hop temperature schedule `τ_n = max(base + (n − 1)·spacing, 0.01)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperatures {
    pub base: f64,
    pub spacing: f64,
}

impl Temperatures {
    pub fn of(encoder: &Encoder) -> Self {
        Temperatures {
            base: encoder.config().tau_base,
            spacing: encoder.config().tau_spacing,
        }
    }

    pub fn hop(&self, n: usize) -> f64 {
        hop_temperature(self.base, self.spacing, n)
    }
}

/// Hop sets of every node, computed once per graph and `k`.
#[derive(Debug, Clone)]
pub struct HopIndex {
    k: usize,
    sets: Vec<HopSets>,
}

impl HopIndex {
    pub fn build(g: &LabeledGraph, k: usize, policy: UnreachablePolicy) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        let sets = (0..g.num_nodes())
            .into_par_iter()
            .map(|a| hop_sets(g, a, k, policy))
            .collect();
        Ok(HopIndex { k, sets })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_nodes(&self) -> usize {
        self.sets.len()
    }

    pub fn anchor(&self, a: usize) -> &HopSets {
        &self.sets[a]
    }
}

/// θ-evaluation counts for one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimOps {
    /// Every ratio recomputes each similarity it uses.
    pub uncached: usize,
    /// Each anchor-node similarity is computed once per anchor.
    pub cached: usize,
}

/// Result of one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// `(anchor, contribution)` in anchor order; contributions add up to `loss`.
    pub per_anchor_terms: Vec<(usize, f64)>,
    /// Fraction of clamped ratio terms (`r >= α`); zero for the InfoNCE variants.
    pub clamp_fraction: f64,
    pub sim_ops: SimOps,
    pub terms: usize,
    /// Terms left out because a required hop set was empty.
    pub skipped_terms: usize,
}

/// Tape-ready description of the loss for a fixed set of anchors and samples.
#[derive(Debug, Clone)]
pub struct LossPlan {
    k: usize,
    variant: LossVariant,
    anchors: Vec<usize>,
    pairs: Arc<Vec<(u32, u32)>>,
    pair_scales: Option<Matrix>,
    segments: Arc<Segments>,
    terms: Arc<Vec<(u32, u32)>>,
    term_anchor: Vec<u32>,
    log_alpha: Option<f64>,
    norm: f64,
    skipped: usize,
    sim_ops: SimOps,
}

impl LossPlan {
    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn sim_ops(&self) -> SimOps {
        self.sim_ops
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn variant(&self) -> LossVariant {
        self.variant
    }
}

/// Per-anchor piece of a plan with anchor-local pair and segment indices.
#[derive(Default)]
struct AnchorPlan {
    pairs: Vec<(u32, u32)>,
    pair_scales: Vec<f64>,
    segments: Vec<(Vec<u32>, f64)>,
    terms: Vec<(u32, u32)>,
    skipped: usize,
    uncached: usize,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the sampling stream for one anchor in one epoch.
pub fn sample_seed(seed: u64, epoch: u64, anchor: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ epoch) ^ anchor as u64)
}

/// Hop sets `1..=k+1` of one anchor, each capped at `cap` nodes.
fn anchor_sets(hops: &HopSets, cap: Option<usize>, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let k = hops.k();
    let mut rng = cap.map(|_| ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch, hops.anchor)));
    (1..=k + 1)
        .map(|n| {
            let set = hops.hop(n);
            match (cap, rng.as_mut()) {
                (Some(c), Some(rng)) if set.len() > c => {
                    let mut picked = rand::seq::index::sample(rng, set.len(), c).into_vec();
                    picked.sort_unstable();
                    picked.into_iter().map(|i| set[i]).collect()
                }
                _ => set.to_vec(),
            }
        })
        .collect()
}

fn plan_anchor(
    sets: &[Vec<usize>],
    anchor: usize,
    variant: LossVariant,
    temps: Temperatures,
    rule: TemperatureRule,
) -> AnchorPlan {
    let k = sets.len() - 1;
    let mut plan = AnchorPlan::default();
    // ranges[h - 1] covers the pairs of hop h
    let mut ranges = Vec::with_capacity(k + 1);
    for (h, set) in sets.iter().enumerate() {
        let start = plan.pairs.len() as u32;
        for &v in set {
            plan.pairs.push((anchor as u32, v as u32));
            plan.pair_scales.push(1.0 / temps.hop(h + 1));
        }
        ranges.push(start..plan.pairs.len() as u32);
    }
    let gather =
        |hs: &[usize]| -> Vec<u32> { hs.iter().flat_map(|&h| ranges[h - 1].clone()).collect() };
    let per_hop = rule == TemperatureRule::PerHop;
    let scale_for = |n: usize| if per_hop { 1.0 } else { 1.0 / temps.hop(n) };

    match variant {
        LossVariant::Pair | LossVariant::List => {
            for n in 1..=k {
                let comparisons: Vec<Vec<usize>> = if variant == LossVariant::Pair {
                    (1..=k - n + 1).map(|m| vec![n, n + m]).collect()
                } else {
                    vec![(n..=k + 1).collect()]
                };
                if sets[n - 1].is_empty() {
                    plan.skipped += comparisons.len();
                    continue;
                }
                let num = plan.segments.len() as u32;
                plan.segments.push((gather(&[n]), scale_for(n)));
                for hs in comparisons {
                    if variant == LossVariant::Pair && sets[hs[1] - 1].is_empty() {
                        plan.skipped += 1;
                        continue;
                    }
                    let den_idx = gather(&hs);
                    plan.uncached += den_idx.len();
                    let den = plan.segments.len() as u32;
                    plan.segments.push((den_idx, scale_for(n)));
                    plan.terms.push((num, den));
                }
            }
        }
        LossVariant::In | LossVariant::Out => {
            // positives: hops 1..=k; negatives: the beyond set; all at τ_1,
            // applied through the per-pair scales
            let scale = 1.0 / temps.hop(1);
            plan.pair_scales.iter_mut().for_each(|s| *s = scale);
            let positives: Vec<usize> = (1..=k).collect();
            let pos_idx = gather(&positives);
            let neg_idx: Vec<u32> = ranges[k].clone().collect();
            if pos_idx.is_empty() {
                plan.skipped += 1;
                return plan;
            }
            if variant == LossVariant::In {
                let num = plan.segments.len() as u32;
                plan.segments.push((pos_idx.clone(), 1.0));
                let mut den_idx = pos_idx;
                den_idx.extend_from_slice(&neg_idx);
                plan.uncached += den_idx.len();
                plan.segments.push((den_idx, 1.0));
                plan.terms.push((num, num + 1));
            } else {
                for p in pos_idx {
                    let num = plan.segments.len() as u32;
                    plan.segments.push((vec![p], 1.0));
                    let mut den_idx = vec![p];
                    den_idx.extend_from_slice(&neg_idx);
                    plan.uncached += den_idx.len();
                    plan.segments.push((den_idx, 1.0));
                    plan.terms.push((num, num + 1));
                }
            }
        }
    }
    plan
}

/// Builds the loss plan for `anchors`. `epoch` only matters when hop sets
/// are subsampled.
pub fn build_plan(
    index: &HopIndex,
    anchors: &[usize],
    cfg: &LossConfig,
    temps: Temperatures,
    epoch: u64,
) -> Result<LossPlan> {
    cfg.validate()?;
    if cfg.k != index.k() {
        return Err(Error::InvalidParameter(format!(
            "hop index was built for k={}, loss uses k={}",
            index.k(),
            cfg.k
        )));
    }
    if let Some(&bad) = anchors.iter().find(|&&a| a >= index.num_nodes()) {
        return Err(Error::InvalidParameter(format!(
            "anchor {bad} out of range"
        )));
    }
    let pieces: Vec<AnchorPlan> = anchors
        .par_iter()
        .map(|&a| {
            let sets = anchor_sets(index.anchor(a), cfg.beyond_sample, cfg.seed, epoch);
            plan_anchor(&sets, a, cfg.variant, temps, cfg.temperature_rule)
        })
        .collect();

    let mut pairs = Vec::new();
    let mut pair_scales = Vec::new();
    let mut segments = Segments::new();
    let mut terms = Vec::new();
    let mut term_anchor = Vec::new();
    let mut skipped = 0;
    let mut sim_ops = SimOps::default();
    for (slot, piece) in pieces.into_iter().enumerate() {
        let pair_base = pairs.len() as u32;
        let seg_base = segments.len() as u32;
        sim_ops.cached += piece.pairs.len();
        sim_ops.uncached += piece.uncached;
        skipped += piece.skipped;
        pairs.extend(piece.pairs);
        pair_scales.extend(piece.pair_scales);
        for (idx, scale) in piece.segments {
            segments.push(idx.into_iter().map(|i| i + pair_base), scale);
        }
        for (num, den) in piece.terms {
            terms.push((num + seg_base, den + seg_base));
            term_anchor.push(slot as u32);
        }
    }
    let uses_pair_scales = cfg.temperature_rule == TemperatureRule::PerHop
        || matches!(cfg.variant, LossVariant::In | LossVariant::Out);
    let n_pairs = pair_scales.len();
    let clamped = matches!(cfg.variant, LossVariant::Pair | LossVariant::List);
    Ok(LossPlan {
        k: cfg.k,
        variant: cfg.variant,
        anchors: anchors.to_vec(),
        pairs: Arc::new(pairs),
        pair_scales: uses_pair_scales
            .then(|| Matrix::from_vec(n_pairs, 1, pair_scales).expect("one scale per pair")),
        segments: Arc::new(segments),
        terms: Arc::new(terms),
        term_anchor,
        log_alpha: clamped.then(|| cfg.alpha.ln()),
        norm: if clamped { 1.0 / cfg.k as f64 } else { 1.0 },
        skipped,
        sim_ops,
    })
}

/// Tape handles of a recorded loss.
#[derive(Debug, Clone, Copy)]
pub struct RecordedLoss {
    pub loss: Var,
    /// Unclamped `log r` per term.
    pub log_ratios: Var,
}

/// Records the loss for projected representations `z` (one row per node).
pub fn record_loss(tape: &mut Tape, z: Var, plan: &LossPlan) -> Result<RecordedLoss> {
    let zn = tape.row_normalize(z, COSINE_EPS)?;
    let mut sims = tape.pair_dot(zn, Arc::clone(&plan.pairs))?;
    if let Some(scales) = &plan.pair_scales {
        let c = tape.constant(scales.clone());
        sims = tape.mul(sims, c)?;
    }
    let lse = tape.segment_logsumexp(sims, Arc::clone(&plan.segments))?;
    let log_ratios = tape.gather_diff(lse, Arc::clone(&plan.terms))?;
    let clamped = match plan.log_alpha {
        Some(c) => tape.min_const(log_ratios, c),
        None => log_ratios,
    };
    let total = tape.sum(clamped);
    let loss = tape.scale(total, -plan.norm);
    Ok(RecordedLoss { loss, log_ratios })
}

fn summarize(plan: &LossPlan, loss: f64, log_ratios: &[f64]) -> LossReport {
    let mut per_anchor: Vec<(usize, f64)> = plan.anchors.iter().map(|&a| (a, 0.0)).collect();
    let mut clamped = 0usize;
    for (&lr, &slot) in log_ratios.iter().zip(&plan.term_anchor) {
        let value = match plan.log_alpha {
            Some(c) => {
                if lr >= c {
                    clamped += 1;
                }
                lr.min(c)
            }
            None => lr,
        };
        per_anchor[slot as usize].1 -= plan.norm * value;
    }
    let terms = log_ratios.len();
    LossReport {
        loss,
        per_anchor_terms: per_anchor,
        clamp_fraction: if terms > 0 && plan.log_alpha.is_some() {
            clamped as f64 / terms as f64
        } else {
            0.0
        },
        sim_ops: plan.sim_ops,
        terms,
        skipped_terms: plan.skipped,
    }
}

/// Loss value and report without gradients.
pub fn evaluate_loss(
    encoder: &Encoder,
    propagated: &Matrix,
    plan: &LossPlan,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let rec = encoder.record(&mut tape, propagated)?;
    let out = record_loss(&mut tape, rec.z, plan)?;
    Ok(summarize(
        plan,
        tape.scalar(out.loss),
        tape.value(out.log_ratios).data(),
    ))
}

/// Loss report plus one gradient per encoder parameter.
pub fn loss_and_grads(
    encoder: &Encoder,
    propagated: &Matrix,
    plan: &LossPlan,
) -> Result<(LossReport, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let rec = encoder.record(&mut tape, propagated)?;
    let out = record_loss(&mut tape, rec.z, plan)?;
    tape.backward(out.loss)?;
    let grads = rec
        .params
        .iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .expect("backward populated every parameter")
        })
        .collect();
    let report = summarize(
        plan,
        tape.scalar(out.loss),
        tape.value(out.log_ratios).data(),
    );
    Ok((report, grads))
}

fn full_graph_loss(
    encoder: &Encoder,
    g: &LabeledGraph,
    cfg: &LossConfig,
    variant: LossVariant,
) -> Result<LossReport> {
    encoder.check_graph(g)?;
    let cfg = LossConfig {
        variant,
        ..cfg.clone()
    };
    let index = HopIndex::build(g, cfg.k, cfg.unreachable)?;
    let anchors: Vec<usize> = (0..g.num_nodes()).collect();
    let plan = build_plan(&index, &anchors, &cfg, Temperatures::of(encoder), 0)?;
    let propagated = encoder.propagate_features(g.features().ok_or(Error::MissingFeatures)?)?;
    evaluate_loss(encoder, &propagated, &plan)
}

/// Pairwise loss over every anchor of `g`.
pub fn loss_pair(encoder: &Encoder, g: &LabeledGraph, cfg: &LossConfig) -> Result<LossReport> {
    full_graph_loss(encoder, g, cfg, LossVariant::Pair)
}

/// Listwise loss over every anchor of `g`.
pub fn loss_list(encoder: &Encoder, g: &LabeledGraph, cfg: &LossConfig) -> Result<LossReport> {
    full_graph_loss(encoder, g, cfg, LossVariant::List)
}

fn require_positives(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidParameter("positive set is empty".into()));
    }
    Ok(())
}

/// `−log(Σ_P e^{θ/τ} / (Σ_P e^{θ/τ} + Σ_N e^{θ/τ}))`.
pub fn loss_in(positives: &[f64], negatives: &[f64], tau: f64) -> Result<f64> {
    require_positives(positives)?;
    let num = logsumexp(positives.iter().copied(), 1.0 / tau);
    let den = logsumexp(positives.iter().chain(negatives).copied(), 1.0 / tau);
    Ok(den - num)
}

/// `Σ_p −log(e^{θ_p/τ} / (e^{θ_p/τ} + Σ_N e^{θ/τ}))`.
pub fn loss_out(positives: &[f64], negatives: &[f64], tau: f64) -> Result<f64> {
    require_positives(positives)?;
    Ok(positives
        .iter()
        .map(|&p| {
            let den = logsumexp(
                std::iter::once(p).chain(negatives.iter().copied()),
                1.0 / tau,
            );
            den - logsumexp(std::iter::once(p), 1.0 / tau)
        })
        .sum())
}

/// Cosines between the projected anchor row and the projected rows of `nodes`.
fn projected_similarities(
    encoder: &Encoder,
    h: &Matrix,
    anchor: usize,
    nodes: &[usize],
) -> Result<Vec<f64>> {
    let mut rows = vec![anchor];
    rows.extend_from_slice(nodes);
    let z = encoder.project(&h.select_rows(&rows))?;
    Ok((1..rows.len())
        .map(|i| cosine(z.row(0), z.row(i)))
        .collect())
}

fn ratio(num: &[f64], den_extra: &[f64], scale: f64) -> f64 {
    let lse_num = logsumexp(num.iter().copied(), scale);
    let lse_den = logsumexp(num.iter().chain(den_extra).copied(), scale);
    (lse_num - lse_den).exp()
}

/// `r_{n,m}` for one anchor at the numerator hop's temperature, or `None`
/// when hop `n` or hop `n + m` is empty.
pub fn pairwise_ratio(
    encoder: &Encoder,
    h: &Matrix,
    hops: &HopSets,
    n: usize,
    m: usize,
) -> Result<Option<f64>> {
    let k = hops.k();
    if n == 0 || m == 0 || n + m > k + 1 {
        return Err(Error::InvalidParameter(format!(
            "need n >= 1, m >= 1, n + m <= {}, got n={n}, m={m}",
            k + 1
        )));
    }
    if hops.hop(n).is_empty() || hops.hop(n + m).is_empty() {
        return Ok(None);
    }
    let near = projected_similarities(encoder, h, hops.anchor, hops.hop(n))?;
    let far = projected_similarities(encoder, h, hops.anchor, hops.hop(n + m))?;
    Ok(Some(ratio(&near, &far, 1.0 / encoder.hop_temperature(n))))
}

/// `r_n` for one anchor: hop `n` against hops `n..=k+1`, or `None` when hop
/// `n` is empty.
pub fn listwise_ratio(
    encoder: &Encoder,
    h: &Matrix,
    hops: &HopSets,
    n: usize,
) -> Result<Option<f64>> {
    let k = hops.k();
    if n == 0 || n > k {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n <= {k}, got {n}"
        )));
    }
    if hops.hop(n).is_empty() {
        return Ok(None);
    }
    let near = projected_similarities(encoder, h, hops.anchor, hops.hop(n))?;
    let rest: Vec<usize> = (n + 1..=k + 1)
        .flat_map(|m| hops.hop(m).iter().copied())
        .collect();
    let far = projected_similarities(encoder, h, hops.anchor, &rest)?;
    Ok(Some(ratio(&near, &far, 1.0 / encoder.hop_temperature(n))))
}

/// Predicted θ-evaluation counts for one anchor with hop sizes
/// `[|S_1|, .., |S_k|, |S_{k+1}|]`, following the same skip rules as the loss.
pub fn count_sim_ops(variant: LossVariant, hop_sizes: &[usize]) -> Result<SimOps> {
    if hop_sizes.len() < 2 {
        return Err(Error::InvalidParameter(
            "need sizes for hops 1..=k and the beyond set".into(),
        ));
    }
    let k = hop_sizes.len() - 1;
    let s = |h: usize| hop_sizes[h - 1];
    let mut uncached = 0;
    match variant {
        LossVariant::Pair => {
            for n in (1..=k).filter(|&n| s(n) > 0) {
                for m in (1..=k - n + 1).filter(|&m| s(n + m) > 0) {
                    uncached += s(n) + s(n + m);
                }
            }
        }
        LossVariant::List => {
            for n in (1..=k).filter(|&n| s(n) > 0) {
                uncached += (n..=k + 1).map(s).sum::<usize>();
            }
        }
        LossVariant::In => {
            let pos: usize = (1..=k).map(s).sum();
            if pos > 0 {
                uncached = pos + s(k + 1);
            }
        }
        LossVariant::Out => {
            let pos: usize = (1..=k).map(s).sum();
            uncached = pos * (1 + s(k + 1));
        }
    }
    Ok(SimOps {
        uncached,
        cached: hop_sizes.iter().sum(),
    })
}
