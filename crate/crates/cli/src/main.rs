//! `relgraph` command-line front end.

mod commands;
mod manifest;
mod svg;

use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{
    CountOpsArgs, DecayArgs, EmbedArgs, EmbedSimArgs, EvalArgs, GenSbmArgs, LcArgs, SpectrumArgs,
    TrainArgs, TransitionArgs, WalkSimArgs,
};

#[derive(Parser)]
#[command(
    name = "relgraph",
    version,
    about = "Label-consistency analysis and relative-similarity graph embeddings"
)]
struct Cli {
    /// Worker threads; results do not depend on this value
    #[arg(long, global = true, env = "RELGRAPH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stochastic block model graph bundle
    GenSbm(GenSbmArgs),
    /// Empirical label consistency per hop
    Lc(LcArgs),
    /// Label transition matrix and stationary distribution
    Transition(TransitionArgs),
    /// Eigenvalues of the label transition matrix
    Spectrum(SpectrumArgs),
    /// Return-to-label probabilities over walk length
    Decay(DecayArgs),
    /// Monte-Carlo estimate of label occupancy after k walk steps
    WalkSim(WalkSimArgs),
    /// Train the encoder with a relative-similarity loss
    Train(TrainArgs),
    /// Embed nodes with a trained checkpoint
    Embed(EmbedArgs),
    /// Linear probe, clustering NMI, Sim@5 and per-hop similarity
    Eval(EvalArgs),
    /// Per-hop cosine similarity of embeddings
    EmbedSim(EmbedSimArgs),
    /// Predicted similarity evaluations of one loss computation
    CountOps(CountOpsArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenSbm(_) => "gen-sbm",
            Command::Lc(_) => "lc",
            Command::Transition(_) => "transition",
            Command::Spectrum(_) => "spectrum",
            Command::Decay(_) => "decay",
            Command::WalkSim(_) => "walk-sim",
            Command::Train(_) => "train",
            Command::Embed(_) => "embed",
            Command::Eval(_) => "eval",
            Command::EmbedSim(_) => "embed-sim",
            Command::CountOps(_) => "count-ops",
        }
    }

    fn run(self) -> anyhow::Result<manifest::Run> {
        match self {
            Command::GenSbm(a) => commands::gen_sbm(a),
            Command::Lc(a) => commands::lc(a),
            Command::Transition(a) => commands::transition(a),
            Command::Spectrum(a) => commands::spectrum(a),
            Command::Decay(a) => commands::decay(a),
            Command::WalkSim(a) => commands::walk_sim(a),
            Command::Train(a) => commands::train(a),
            Command::Embed(a) => commands::embed(a),
            Command::Eval(a) => commands::eval(a),
            Command::EmbedSim(a) => commands::embed_sim(a),
            Command::CountOps(a) => commands::count_ops(a),
        }
    }
}

/// One line: `error kind=<kind> message="<escaped text>"`.
fn report_error(kind: &str, message: &str) {
    eprintln!("error kind={kind} message={message:?}");
}

/// Context chain joined by `: `, skipping causes a parent already printed.
fn error_message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<relgraph::Error>() {
        e.kind()
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "invalid_argument"
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            report_error("usage", first);
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            report_error("threads", &e.to_string());
            return ExitCode::from(2);
        }
    }
    let name = cli.command.name();
    let start = Instant::now();
    match cli.command.run() {
        Ok(run) => {
            if let Err(e) = run.finish(name, start.elapsed()) {
                report_error(error_kind(&e), &error_message(&e));
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(error_kind(&e), &error_message(&e));
            ExitCode::FAILURE
        }
    }
}
