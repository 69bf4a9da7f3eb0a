//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use relgraph::eval::{evaluate, hop_similarity, HopSimilarity, ProbeConfig};
use relgraph::io::{
    load_bundle, read_embeddings, write_csv_report, write_edge_list, write_embeddings,
    write_labels, write_matrix, write_splits, DatasetBundle, Report, Splits,
};
use relgraph::labelstats::lc_emp;
use relgraph::loss::{count_sim_ops, LossVariant};
use relgraph::markov::{
    build_transition, lc_prob, monte_carlo_lc, WalkMode, WalkOptions, WalkStart,
};
use relgraph::sbm::{generate_sbm, FeatureSpec, SbmSpec};
use relgraph::train::{Checkpoint, TrainConfig, Trainer};
use relgraph::{LabeledGraph, UnreachablePolicy};

use crate::manifest::{beside, Run};
use crate::svg::{box_chart, line_chart, BoxSummary, Series};

#[derive(Args, Debug, Clone)]
pub struct GraphArgs {
    /// Edge list: one whitespace-separated `u v` pair per line
    #[arg(long)]
    graph: PathBuf,
    /// One integer label per line, line i for node i
    #[arg(long)]
    labels: PathBuf,
    /// Dense feature matrix with an `N D` header
    #[arg(long)]
    features: Option<PathBuf>,
    /// Split file with `train`, `valid` and `test` lines
    #[arg(long)]
    split: Option<PathBuf>,
    /// Add a self-loop to every node
    #[arg(long)]
    self_loops: bool,
}

impl GraphArgs {
    fn load(&self, run: &mut Run) -> Result<(LabeledGraph, Option<Splits>)> {
        let bundle = DatasetBundle {
            graph: self.graph.clone(),
            labels: self.labels.clone(),
            features: self.features.clone(),
            split: self.split.clone(),
        };
        run.input(&self.graph);
        run.input(&self.labels);
        for p in self.features.iter().chain(&self.split) {
            run.input(p);
        }
        run.set("self_loops", self.self_loops);
        let loaded = load_bundle(&bundle, self.self_loops)?;
        log::info!(
            "loaded {} nodes, {} edges",
            loaded.0.num_nodes(),
            loaded.0.num_edges()
        );
        Ok(loaded)
    }
}

/// Creates the parent directory of an output file if it is missing.
fn prepare(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str, run: &mut Run) -> Result<()> {
    prepare(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    run.output(path);
    Ok(())
}

fn write_report(report: &Report, path: &Path, run: &mut Run) -> Result<()> {
    prepare(path)?;
    write_csv_report(report, path)?;
    run.output(path);
    run.manifest = Some(beside(path));
    Ok(())
}

fn usize_column(values: impl IntoIterator<Item = usize>) -> Vec<f64> {
    values.into_iter().map(|v| v as f64).collect()
}

#[derive(Args, Debug)]
pub struct GenSbmArgs {
    /// Block sizes, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long)]
    p_intra: f64,
    #[arg(long)]
    p_inter: f64,
    #[arg(long)]
    seed: u64,
    /// Emit label-conditioned Gaussian features of this dimension
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Scale of the per-label feature means
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Keep disconnected samples instead of resampling or augmenting
    #[arg(long)]
    allow_disconnected: bool,
    /// Also write a random split with this training fraction
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    valid_frac: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn gen_sbm(a: GenSbmArgs) -> Result<Run> {
    let mut run = Run {
        seed: Some(a.seed),
        ..Run::default()
    };
    let mut spec = SbmSpec::new(a.sizes.clone(), a.p_intra, a.p_inter, a.seed);
    spec.ensure_connected = !a.allow_disconnected;
    if let Some(dim) = a.feature_dim {
        spec = spec.with_features(FeatureSpec {
            dim,
            separation: a.separation,
        });
    }
    run.set("sizes", format!("{:?}", a.sizes));
    run.set("p_intra", a.p_intra);
    run.set("p_inter", a.p_inter);
    if let Some(dim) = a.feature_dim {
        run.set("feature_dim", dim);
        run.set("separation", a.separation);
    }
    let g = generate_sbm(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    let graph_path = a.out_dir.join("graph.edges");
    write_edge_list(&g, &graph_path)?;
    run.output(&graph_path);
    let labels_path = a.out_dir.join("labels.txt");
    write_labels(g.labels(), &labels_path)?;
    run.output(&labels_path);
    if let Some(x) = g.features() {
        let path = a.out_dir.join("features.txt");
        write_matrix(x, &path)?;
        run.output(&path);
    }
    if let Some(train) = a.train_frac {
        run.set("train_frac", train);
        run.set("valid_frac", a.valid_frac);
        let splits = Splits::random(g.num_nodes(), train, a.valid_frac, a.seed)?;
        let path = a.out_dir.join("split.txt");
        write_splits(&splits, &path)?;
        run.output(&path);
    }
    let hm = lc_emp(&g, 1)?.lc_values[0];
    println!(
        "nodes={} edges={} lc1={hm:.6}",
        g.num_nodes(),
        g.num_edges()
    );
    run.manifest = Some(a.out_dir.join("manifest.json"));
    Ok(run)
}

#[derive(Args, Debug)]
pub struct LcArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Largest hop distance
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// CSV output; a line chart is written next to it
    #[arg(long)]
    out: PathBuf,
}

pub fn lc(a: LcArgs) -> Result<Run> {
    let mut run = Run::default();
    run.set("k", a.k);
    let (g, _) = a.graph.load(&mut run)?;
    let curve = lc_emp(&g, a.k)?;
    let report = Report::new()
        .with_column("hop", usize_column(curve.hops.iter().copied()))
        .with_column("lc", curve.lc_values.clone())
        .with_column(
            "anchors",
            usize_column(curve.per_node_counts.iter().copied()),
        );
    write_report(&report, &a.out, &mut run)?;
    let points = curve
        .hops
        .iter()
        .map(|&h| h as f64)
        .zip(curve.lc_values.iter().copied())
        .collect();
    let svg = line_chart(
        "Label consistency by hop",
        "hop",
        "LC_emp",
        &[Series {
            name: "LC_emp".into(),
            points,
        }],
    );
    write_text(&a.out.with_extension("svg"), &svg, &mut run)?;
    Ok(run)
}

#[derive(Args, Debug)]
pub struct TransitionArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    out: PathBuf,
}

pub fn transition(a: TransitionArgs) -> Result<Run> {
    let mut run = Run::default();
    let (g, _) = a.graph.load(&mut run)?;
    let t = build_transition(&g)?;
    let c = t.num_labels();
    let mut report = Report::new().with_column("label", usize_column(0..c));
    for j in 0..c {
        report = report.with_column(
            format!("to_{j}"),
            (0..c).map(|i| t.matrix[(i, j)]).collect(),
        );
    }
    report = report.with_column("pi", t.pi.clone());
    write_report(&report, &a.out, &mut run)?;
    println!("fixed_point_residual={:e}", t.fixed_point_residual);
    Ok(run)
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    out: PathBuf,
}

pub fn spectrum(a: SpectrumArgs) -> Result<Run> {
    let mut run = Run::default();
    let (g, _) = a.graph.load(&mut run)?;
    let t = build_transition(&g)?;
    let report = Report::new()
        .with_column("index", usize_column(0..t.eigenvalues.len()))
        .with_column("re", t.eigenvalues.iter().map(|z| z.re).collect())
        .with_column("im", t.eigenvalues.iter().map(|z| z.im).collect())
        .with_column("modulus", t.eigenvalues.iter().map(|z| z.norm()).collect());
    write_report(&report, &a.out, &mut run)?;
    let props = t.properties();
    match t.lambda2 {
        Some(l2) => println!(
            "lambda2={}{:+}i modulus={} complex={} irreducible={} aperiodic={}",
            l2.value.re, l2.value.im, l2.modulus, l2.is_complex, props.irreducible, props.aperiodic
        ),
        None => println!(
            "lambda2=none irreducible={} aperiodic={}",
            props.irreducible, props.aperiodic
        ),
    }
    Ok(run)
}

#[derive(Args, Debug)]
pub struct DecayArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Longest walk length
    #[arg(long, default_value_t = 10)]
    max_k: usize,
    /// CSV output; a line chart is written next to it
    #[arg(long)]
    out: PathBuf,
}

pub fn decay(a: DecayArgs) -> Result<Run> {
    let mut run = Run::default();
    run.set("max_k", a.max_k);
    let (g, _) = a.graph.load(&mut run)?;
    let t = build_transition(&g)?;
    let mut report = Report::new().with_column("k", usize_column(0..=a.max_k));
    let mut series = Vec::new();
    for label in 0..t.num_labels() {
        let d = lc_prob(&t, label, a.max_k)?;
        report = report
            .with_column(format!("lc_prob_{label}"), d.lc_prob.clone())
            .with_column(format!("pi_{label}"), vec![d.pi_target; a.max_k + 1])
            .with_column(
                format!("bound_{label}"),
                (0..=a.max_k)
                    .map(|k| d.bound.c * d.bound.lambda.powi(k as i32))
                    .collect(),
            );
        series.push(Series {
            name: format!("label {label}"),
            points: d
                .lc_prob
                .iter()
                .enumerate()
                .map(|(k, &p)| (k as f64, p))
                .collect(),
        });
    }
    write_report(&report, &a.out, &mut run)?;
    let svg = line_chart("Return-to-label probability", "k", "LC_prob(k)", &series);
    write_text(&a.out.with_extension("svg"), &svg, &mut run)?;
    Ok(run)
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    /// Plain node-level random walk
    Node,
    /// Re-place the walker on a degree-weighted node of its label before each step
    Lumped,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StartArg {
    Degree,
    Uniform,
}

#[derive(Args, Debug)]
pub struct WalkSimArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 0)]
    start_label: usize,
    #[arg(long, default_value_t = 6)]
    max_k: usize,
    #[arg(long, default_value_t = 100_000)]
    walks: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Node)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = StartArg::Degree)]
    start: StartArg,
    /// Walks per independently seeded stream
    #[arg(long, default_value_t = 4096)]
    chunk_size: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn walk_sim(a: WalkSimArgs) -> Result<Run> {
    let mut run = Run {
        seed: Some(a.seed),
        ..Run::default()
    };
    run.set("start_label", a.start_label);
    run.set("max_k", a.max_k);
    run.set("walks", a.walks);
    run.set("mode", format!("{:?}", a.mode));
    run.set("start", format!("{:?}", a.start));
    run.set("chunk_size", a.chunk_size);
    let (g, _) = a.graph.load(&mut run)?;
    let t = build_transition(&g)?;
    let opts = WalkOptions {
        start: match a.start {
            StartArg::Degree => WalkStart::DegreeWeighted,
            StartArg::Uniform => WalkStart::Uniform,
        },
        mode: match a.mode {
            ModeArg::Node => WalkMode::Node,
            ModeArg::Lumped => WalkMode::Lumped,
        },
        chunk_size: a.chunk_size,
    };
    let est = monte_carlo_lc(&g, a.start_label, a.max_k, a.walks, a.seed, opts)?;
    let c = t.num_labels();
    let mut report = Report::new().with_column("k", usize_column(0..=a.max_k));
    for j in 0..c {
        report = report
            .with_column(
                format!("estimate_{j}"),
                est.probabilities.iter().map(|row| row[j]).collect(),
            )
            .with_column(
                format!("exact_{j}"),
                (0..=a.max_k)
                    .map(|k| t.power(k)[(a.start_label, j)])
                    .collect(),
            );
    }
    write_report(&report, &a.out, &mut run)?;
    println!("max_deviation={}", est.max_deviation(&t));
    Ok(run)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set variant=list`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seeds weight initialization and hop sampling
    #[arg(long)]
    seed: u64,
    /// Continue from a checkpoint instead of starting fresh
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write the trained embeddings here
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Receives checkpoint.txt, loss.csv, loss.svg and config.txt
    #[arg(long)]
    out_dir: PathBuf,
}

fn train_config(a: &TrainArgs, run: &mut Run) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            run.input(path);
            TrainConfig::from_file(path)?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = a.seed;
    cfg.loss.seed = a.seed;
    for item in &a.overrides {
        let Some((key, value)) = item.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {item:?}");
        };
        cfg.set(key.trim(), value.trim())?;
    }
    if cfg.checkpoint_every.is_some() && cfg.checkpoint_dir.is_none() {
        cfg.checkpoint_dir = Some(a.out_dir.clone());
    }
    cfg.log_path = Some(a.out_dir.join("loss.csv"));
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<Run> {
    let mut run = Run {
        seed: Some(a.seed),
        ..Run::default()
    };
    let (g, _) = a.graph.load(&mut run)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            run.input(path);
            let mut ckpt = Checkpoint::load(path)?;
            ckpt.config.epochs = train_config(&a, &mut run)?.epochs;
            ckpt.config.log_path = Some(a.out_dir.join("loss.csv"));
            Trainer::resume(&g, ckpt)?
        }
        None => Trainer::new(&g, train_config(&a, &mut run)?)?,
    };
    let effective = trainer.config().to_key_values();
    for line in effective.lines() {
        if let Some((k, v)) = line.split_once('=') {
            run.set(k.trim(), v.trim());
        }
    }
    trainer.run()?;
    let ckpt_path = a.out_dir.join("checkpoint.txt");
    trainer.checkpoint().save(&ckpt_path)?;
    run.output(&ckpt_path);
    run.output(&a.out_dir.join("loss.csv"));
    write_text(&a.out_dir.join("config.txt"), &effective, &mut run)?;
    let history = trainer.history();
    let svg = line_chart(
        "Training loss",
        "epoch",
        "loss",
        &[Series {
            name: "loss".into(),
            points: history.iter().map(|r| (r.epoch as f64, r.loss)).collect(),
        }],
    );
    write_text(&a.out_dir.join("loss.svg"), &svg, &mut run)?;
    if let Some(path) = &a.embeddings {
        let h = relgraph::train::embed(trainer.encoder(), &g)?;
        prepare(path)?;
        write_embeddings(&h, path)?;
        run.output(path);
    }
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!(
            "epochs={} first_loss={} last_loss={} clamp_fraction={}",
            last.epoch, first.loss, last.loss, last.clamp_fraction
        );
    }
    run.manifest = Some(a.out_dir.join("manifest.json"));
    Ok(run)
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn embed(a: EmbedArgs) -> Result<Run> {
    let mut run = Run::default();
    let (g, _) = a.graph.load(&mut run)?;
    run.input(&a.checkpoint);
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let encoder = Trainer::resume(&g, ckpt)?.into_encoder();
    let h = relgraph::train::embed(&encoder, &g)?;
    prepare(&a.out)?;
    write_embeddings(&h, &a.out)?;
    run.output(&a.out);
    run.manifest = Some(beside(&a.out));
    Ok(run)
}

fn hop_report(stats: &[HopSimilarity]) -> Report {
    Report::new()
        .with_column("hop", usize_column(stats.iter().map(|s| s.hop)))
        .with_column("pairs", usize_column(stats.iter().map(|s| s.pairs)))
        .with_column("mean", stats.iter().map(|s| s.mean).collect())
        .with_column("q1", stats.iter().map(|s| s.q1).collect())
        .with_column("median", stats.iter().map(|s| s.median).collect())
        .with_column("q3", stats.iter().map(|s| s.q3).collect())
}

fn hop_chart(stats: &[HopSimilarity]) -> String {
    let last = stats.len();
    let boxes: Vec<BoxSummary> = stats
        .iter()
        .map(|s| BoxSummary {
            label: if s.hop == last {
                format!(">{}", last - 1)
            } else {
                s.hop.to_string()
            },
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            mean: s.mean,
        })
        .collect();
    box_chart(
        "Embedding similarity by hop",
        "hop",
        "cosine similarity",
        &boxes,
    )
}

/// `dir/name.csv` -> `dir/name_hops.csv`.
fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    embeddings: PathBuf,
    /// Hop range of the per-hop similarity summary
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Seeds k-means and, without a split file, the random split
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    valid_frac: f64,
    /// Metrics CSV; per-hop statistics and a box chart are written next to it
    #[arg(long)]
    out: PathBuf,
}

pub fn eval(a: EvalArgs) -> Result<Run> {
    let mut run = Run {
        seed: Some(a.seed),
        ..Run::default()
    };
    run.set("k", a.k);
    let (g, splits) = a.graph.load(&mut run)?;
    run.input(&a.embeddings);
    let h = read_embeddings(&a.embeddings)?;
    let splits = match splits {
        Some(s) => s,
        None => {
            run.set("train_frac", a.train_frac);
            run.set("valid_frac", a.valid_frac);
            Splits::random(g.num_nodes(), a.train_frac, a.valid_frac, a.seed)?
        }
    };
    let report = evaluate(&h, &g, &splits, a.k, &ProbeConfig::default(), a.seed)?;
    let metrics = Report::new()
        .with_column("accuracy", vec![report.accuracy])
        .with_column("nmi", vec![report.nmi])
        .with_column("sim_at_5", vec![report.sim_at_5]);
    write_report(&metrics, &a.out, &mut run)?;
    let hops_path = sibling(&a.out, "_hops", "csv");
    write_csv_report(&hop_report(&report.hop_sim), &hops_path)?;
    run.output(&hops_path);
    write_text(
        &sibling(&a.out, "_hops", "svg"),
        &hop_chart(&report.hop_sim),
        &mut run,
    )?;
    println!(
        "accuracy={} nmi={} sim_at_5={}",
        report.accuracy, report.nmi, report.sim_at_5
    );
    Ok(run)
}

#[derive(Args, Debug)]
pub struct EmbedSimArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Leave unreachable nodes out of the beyond set
    #[arg(long)]
    exclude_unreachable: bool,
    /// CSV output; a box chart is written next to it
    #[arg(long)]
    out: PathBuf,
}

pub fn embed_sim(a: EmbedSimArgs) -> Result<Run> {
    let mut run = Run::default();
    run.set("k", a.k);
    run.set("exclude_unreachable", a.exclude_unreachable);
    let (g, _) = a.graph.load(&mut run)?;
    run.input(&a.embeddings);
    let h = read_embeddings(&a.embeddings)?;
    let policy = if a.exclude_unreachable {
        UnreachablePolicy::Exclude
    } else {
        UnreachablePolicy::IncludeInBeyond
    };
    let stats = hop_similarity(&h, &g, a.k, policy)?;
    write_report(&hop_report(&stats), &a.out, &mut run)?;
    write_text(&a.out.with_extension("svg"), &hop_chart(&stats), &mut run)?;
    Ok(run)
}

#[derive(Args, Debug)]
pub struct CountOpsArgs {
    #[arg(long)]
    k: usize,
    /// Sizes of hops 1..=k followed by the beyond set, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    hop_sizes: Vec<usize>,
    /// pair, list, in or out
    #[arg(long, default_value = "pair")]
    variant: LossVariant,
    /// Also print the count when each similarity is computed once per anchor
    #[arg(long)]
    cached: bool,
}

pub fn count_ops(a: CountOpsArgs) -> Result<Run> {
    if a.hop_sizes.len() != a.k + 1 {
        bail!(
            "--hop-sizes needs k + 1 = {} entries (hops 1..=k and the beyond set), got {}",
            a.k + 1,
            a.hop_sizes.len()
        );
    }
    let ops = count_sim_ops(a.variant, &a.hop_sizes)?;
    if a.cached {
        println!("{} {}", ops.uncached, ops.cached);
    } else {
        println!("{}", ops.uncached);
    }
    Ok(Run::default())
}
