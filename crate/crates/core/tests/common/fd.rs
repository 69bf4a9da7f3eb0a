//! Central finite-difference machinery shared by the gradient tests and the
//! acceptance suite.

use std::sync::Arc;

use rand::Rng;
use relgraph::encoder::{Activation, EncoderConfig};
use relgraph::loss::{
    build_plan, evaluate_loss, loss_and_grads, HopIndex, LossConfig, LossVariant, Temperatures,
};
use relgraph::tensor::{CsrMatrix, Segments, Tape, Var};
use relgraph::{Matrix, UnreachablePolicy};

use super::{random_matrix, rng};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 10;

/// Central differences of an O(10) loss carry roundoff near 1e-10, so
/// magnitudes below this floor are compared absolutely.
const GRAD_FLOOR: f64 = 1e-5;

/// One-sided slopes differing by more than this fraction indicate a
/// non-differentiable point (ReLU or clamp) within one step; smooth curvature
/// only moves them apart by about `STEP · f''`.
const KINK: f64 = 1e-2;

fn grad_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub type Build = dyn Fn(&mut Tape, &[Var]) -> relgraph::Result<Var>;

/// Scalarizes `out` with fixed random weights so every output entry matters.
fn scalar_loss(tape: &mut Tape, out: Var, weights: &Matrix) -> Var {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

fn evaluate(build: &Build, inputs: &[Matrix], weights: &Matrix) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, m)| tape.param(format!("p{i}"), m.clone()))
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = scalar_loss(&mut tape, out, weights);
    tape.scalar(loss)
}

/// Returns the worst relative error over all input coordinates, skipping
/// coordinates where the one-sided slopes disagree (a kink inside ±STEP).
pub fn check(build: &Build, inputs: Vec<Matrix>, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, m)| tape.param(format!("p{i}"), m.clone()))
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let weights = random_matrix(
        tape.value(out).rows(),
        tape.value(out).cols(),
        &mut rng(seed + 1000),
    );
    let loss = scalar_loss(&mut tape, out, &weights);
    tape.backward(loss).unwrap();
    let f0 = tape.scalar(loss);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap().clone();
        for j in 0..inputs[i].data().len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let fp = evaluate(build, &plus, &weights);
            let fm = evaluate(build, &minus, &weights);
            let fwd = (fp - f0) / STEP;
            let bwd = (f0 - fm) / STEP;
            if (fwd - bwd).abs() > KINK * fwd.abs().max(bwd.abs()).max(GRAD_FLOOR) {
                skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * STEP);
            worst = worst.max(grad_err(analytic.data()[j], numeric));
        }
    }
    let total: usize = inputs.iter().map(|m| m.data().len()).sum();
    assert!(
        skipped * 10 <= total,
        "{skipped} of {total} coordinates sit on a kink"
    );
    worst
}

pub type Case = Box<dyn Fn(u64) -> (Vec<Matrix>, Box<Build>)>;

/// Worst relative error of one operation over all seeds.
pub fn worst_over_seeds(case: &Case) -> f64 {
    (0..SEEDS)
        .map(|seed| {
            let (inputs, build) = case(seed);
            check(build.as_ref(), inputs, seed)
        })
        .fold(0.0, f64::max)
}

fn mats(seed: u64, shapes: &[(usize, usize)]) -> Vec<Matrix> {
    let mut r = rng(seed);
    shapes
        .iter()
        .map(|&(a, b)| random_matrix(a, b, &mut r))
        .collect()
}

fn case(
    shapes: &'static [(usize, usize)],
    build: fn(&mut Tape, &[Var]) -> relgraph::Result<Var>,
) -> Case {
    Box::new(move |s| (mats(s, shapes), Box::new(build)))
}

/// Every differentiable tape operation with random inputs per seed.
pub fn op_cases() -> Vec<(&'static str, Case)> {
    vec![
        (
            "matmul",
            case(&[(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1])),
        ),
        (
            "spmm",
            Box::new(|s| {
                let mut r = rng(s + 50);
                let rows: Vec<Vec<(usize, f64)>> = (0..4)
                    .map(|i| {
                        (0..5)
                            .filter(|&j| (i + j) % 2 == 0)
                            .map(|j| (j, r.random_range(-1.0..1.0)))
                            .collect()
                    })
                    .collect();
                let sp = Arc::new(CsrMatrix::from_rows(5, rows).unwrap());
                (
                    mats(s, &[(5, 3)]),
                    Box::new(move |t: &mut Tape, v: &[Var]| t.spmm(&sp, v[0])) as Box<Build>,
                )
            }),
        ),
        ("add", case(&[(3, 3), (3, 3)], |t, v| t.add(v[0], v[1]))),
        ("sub", case(&[(3, 3), (3, 3)], |t, v| t.sub(v[0], v[1]))),
        ("mul", case(&[(2, 5), (2, 5)], |t, v| t.mul(v[0], v[1]))),
        (
            "add_row",
            case(&[(4, 3), (1, 3)], |t, v| t.add_row(v[0], v[1])),
        ),
        ("relu", case(&[(4, 4)], |t, v| Ok(t.relu(v[0])))),
        ("leaky", case(&[(4, 4)], |t, v| Ok(t.leaky(v[0], 0.2)))),
        (
            "prelu",
            Box::new(|s| {
                let mut inputs = mats(s, &[(4, 4)]);
                inputs.push(Matrix::filled(1, 1, 0.25));
                (
                    inputs,
                    Box::new(|t: &mut Tape, v: &[Var]| t.prelu(v[0], v[1])) as Box<Build>,
                )
            }),
        ),
        (
            "row_normalize",
            case(&[(4, 3)], |t, v| t.row_normalize(v[0], 1e-12)),
        ),
        (
            "cosine",
            case(&[(1, 5), (1, 5)], |t, v| t.cosine(v[0], v[1], 1e-12)),
        ),
        (
            "pair_dot",
            case(&[(4, 3)], |t, v| {
                t.pair_dot(v[0], Arc::new(vec![(0, 1), (1, 2), (2, 2), (3, 0), (0, 1)]))
            }),
        ),
        (
            "segment_logsumexp",
            case(&[(6, 1)], |t, v| {
                let mut segs = Segments::new();
                segs.push([0, 1, 2], 2.0);
                segs.push([3], 1.0);
                segs.push([1, 4, 5, 0], 0.5);
                t.segment_logsumexp(v[0], Arc::new(segs))
            }),
        ),
        (
            "logsumexp_rows",
            case(&[(3, 4)], |t, v| Ok(t.logsumexp_rows(v[0]))),
        ),
        (
            "gather_diff",
            case(&[(4, 1)], |t, v| {
                t.gather_diff(v[0], Arc::new(vec![(0, 1), (2, 0), (3, 3)]))
            }),
        ),
        (
            "min_const",
            case(&[(3, 3)], |t, v| Ok(t.min_const(v[0], 0.1))),
        ),
        ("scale", case(&[(2, 3)], |t, v| Ok(t.scale(v[0], -1.7)))),
        ("sum", case(&[(2, 3)], |t, v| Ok(t.sum(v[0])))),
    ]
}

/// Two-layer PReLU propagation, differentiated with respect to both weight
/// matrices and the shared slope.
pub fn encoder_forward_error(seed: u64) -> f64 {
    let g = super::small_featured_graph(8, 5, seed);
    let cfg = EncoderConfig {
        embed_dim: 3,
        layers: 2,
        hidden_dim: Some(4),
        activation: Activation::Prelu,
        ..EncoderConfig::default()
    };
    let enc = super::encoder_for(&g, cfg, seed);
    let inputs = vec![
        enc.param("enc.w1").unwrap().clone(),
        enc.param("enc.w2").unwrap().clone(),
        enc.param("enc.prelu").unwrap().clone(),
    ];
    let ax = enc.propagate_features(g.features().unwrap()).unwrap();
    let adj = Arc::new(enc.norm_adj().clone());
    let build = move |t: &mut Tape, v: &[Var]| -> relgraph::Result<Var> {
        let x = t.constant(ax.clone());
        let mut h = t.matmul(x, v[0])?;
        h = t.prelu(h, v[2])?;
        let ah = t.spmm(&adj, h)?;
        h = t.matmul(ah, v[1])?;
        t.prelu(h, v[2])
    };
    check(&build, inputs, seed)
}

/// Worst relative error between `loss_and_grads` and central differences of
/// `evaluate_loss` over every encoder parameter entry.
pub fn full_loss_gradient_error(variant: LossVariant, seed: u64) -> f64 {
    let g = super::small_featured_graph(12, 6, seed);
    let cfg = EncoderConfig {
        embed_dim: 4,
        layers: 2,
        hidden_dim: Some(5),
        activation: Activation::Relu,
        tau_base: 0.5,
        tau_spacing: 0.1,
    };
    let enc = super::encoder_for(&g, cfg, seed);
    let loss_cfg = LossConfig {
        k: 2,
        alpha: 1.0,
        variant,
        ..LossConfig::default()
    };
    let index = HopIndex::build(&g, 2, UnreachablePolicy::IncludeInBeyond).unwrap();
    let anchors: Vec<usize> = (0..12).collect();
    let plan = build_plan(&index, &anchors, &loss_cfg, Temperatures::of(&enc), 0).unwrap();
    let ax = enc.propagate_features(g.features().unwrap()).unwrap();
    let (report, grads) = loss_and_grads(&enc, &ax, &plan).unwrap();
    let f0 = report.loss;
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for (pi, p) in enc.params().iter().enumerate() {
        for j in 0..p.value.data().len() {
            let at = |delta: f64| {
                let mut e = enc.clone();
                let mut m = p.value.clone();
                m.data_mut()[j] += delta;
                e.set_param(&p.name, m).unwrap();
                evaluate_loss(&e, &ax, &plan).unwrap().loss
            };
            let (fp, fm) = (at(STEP), at(-STEP));
            let (fwd, bwd) = ((fp - f0) / STEP, (f0 - fm) / STEP);
            if (fwd - bwd).abs() > KINK * fwd.abs().max(bwd.abs()).max(GRAD_FLOOR) {
                skipped += 1;
                continue;
            }
            worst = worst.max(grad_err(grads[pi].data()[j], (fp - fm) / (2.0 * STEP)));
        }
    }
    let total: usize = enc.params().iter().map(|p| p.value.data().len()).sum();
    assert!(
        skipped * 10 <= total,
        "{skipped} of {total} coordinates sit on a kink"
    );
    worst
}
