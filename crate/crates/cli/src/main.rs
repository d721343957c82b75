//! Command-line front end for the chaintrace pipeline.
//!
//! Every subcommand starts from one TOML run configuration (`--config`,
//! defaults otherwise) and applies explicit flags on top, so a flag always
//! wins over the file. Exit codes: 0 success, 1 usage error, 2 data error
//! (parse/schema/io, and a failed audit gate), 3 numeric fault.

use std::path::PathBuf;
use std::process::ExitCode;

use chaintrace_core::error::Error;
use chaintrace_core::nn::gradcheck;
use chaintrace_core::pipeline::{self, RunConfig};
use chaintrace_core::synth::AUDIT_GATE;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "chaintrace",
    version,
    about = "Cross-session attack chain detection over tool-use event streams"
)]
struct Cli {
    /// TOML run configuration; explicit flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Args)]
struct IoFlags {
    /// Directory artifacts are written to.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Malicious combined-format corpus file.
    #[arg(long, value_name = "FILE")]
    malicious: Option<PathBuf>,

    /// Benign combined-format corpus file.
    #[arg(long, value_name = "FILE")]
    benign: Option<PathBuf>,
}

impl IoFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.out_dir {
            cfg.paths.out_dir = d.clone();
        }
        if let Some(m) = &self.malicious {
            cfg.paths.malicious = Some(m.clone());
        }
        if let Some(b) = &self.benign {
            cfg.paths.benign = Some(b.clone());
        }
    }
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus and write both combined-format files.
    Gen {
        #[command(flatten)]
        io: IoFlags,

        /// Master generator seed.
        #[arg(long)]
        seed: Option<u64>,

        /// Number of malicious chains.
        #[arg(long, value_name = "N")]
        n_malicious: Option<usize>,

        /// Number of benign chains.
        #[arg(long, value_name = "N")]
        n_benign: Option<usize>,

        /// Probability that a session gains one failed call/result pair.
        #[arg(long, value_name = "RATE")]
        noise_rate: Option<f64>,
    },

    /// Build the interaction graph, discover chains, persist both.
    Build {
        #[command(flatten)]
        io: IoFlags,
    },

    /// Train the requested detectors and write models, predictions, report.
    TrainEval {
        #[command(flatten)]
        io: IoFlags,

        /// Detector variants to train (comma separated).
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        variants: Option<Vec<String>>,

        /// Override the per-variant epoch count.
        #[arg(long)]
        epochs: Option<usize>,

        /// Training seed.
        #[arg(long)]
        seed: Option<u64>,

        /// Train fraction of the chain-level split.
        #[arg(long, value_name = "RATIO")]
        split_ratio: Option<f64>,
    },

    /// Score an event stream against a trained model, one verdict per chain.
    Score {
        #[command(flatten)]
        io: IoFlags,

        /// Trained model file.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,

        /// Event streams: session-log JSONL or combined-format documents.
        #[arg(required = true, value_name = "FILE")]
        inputs: Vec<PathBuf>,

        /// Chain score threshold for the malicious verdict.
        #[arg(long, value_name = "T")]
        chain_threshold: Option<f64>,
    },

    /// Verify analytic gradients of every variant against finite differences.
    Gradcheck,

    /// Audit per-dimension separability of the corpus; fails over the gate.
    Audit {
        #[command(flatten)]
        io: IoFlags,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_gen(
    mut cfg: RunConfig,
    io: &IoFlags,
    seed: Option<u64>,
    n_malicious: Option<usize>,
    n_benign: Option<usize>,
    noise_rate: Option<f64>,
) -> Result<(), Error> {
    io.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.generator.seed = s;
    }
    if let Some(n) = n_malicious {
        cfg.generator.malicious_chains = n;
    }
    if let Some(n) = n_benign {
        cfg.generator.benign_chains = n;
    }
    if let Some(r) = noise_rate {
        cfg.generator.noise_rate = r;
    }
    let s = pipeline::run_gen(&cfg)?;
    println!(
        "wrote {} ({} chains) and {} ({} chains)",
        s.malicious_path.display(),
        s.malicious_chains,
        s.benign_path.display(),
        s.benign_chains
    );
    println!("events {}  corpus sha256 {}", s.events, s.corpus_sha256);
    Ok(())
}

fn cmd_build(mut cfg: RunConfig, io: &IoFlags) -> Result<(), Error> {
    io.apply(&mut cfg);
    let s = pipeline::run_build(&cfg)?;
    println!("events {}  sessions {}  discovered chains {}", s.events, s.sessions, s.discovered_chains);
    for (etype, count) in &s.edge_counts {
        println!("  {etype:<20} {count}");
    }
    println!("graph  -> {}", s.graph_path.display());
    println!("chains -> {}", s.chains_path.display());
    Ok(())
}

fn cmd_train_eval(
    mut cfg: RunConfig,
    io: &IoFlags,
    variants: Option<Vec<String>>,
    epochs: Option<usize>,
    seed: Option<u64>,
    split_ratio: Option<f64>,
) -> Result<(), Error> {
    io.apply(&mut cfg);
    if let Some(v) = variants {
        cfg.detector.variants = v;
    }
    if let Some(e) = epochs {
        cfg.detector.epochs = Some(e);
    }
    if let Some(s) = seed {
        cfg.detector.seed = s;
    }
    if let Some(r) = split_ratio {
        cfg.eval.split_ratio = r;
    }
    let report = pipeline::run_train_eval(&cfg)?;
    print!("{}", report.render_text());
    for m in &report.models {
        println!("{:<5} model -> {}  predictions -> {}", m.variant, m.model_file, m.predictions_file);
    }
    println!("report -> {}", cfg.artifact_path("report.txt").display());
    Ok(())
}

fn cmd_score(
    mut cfg: RunConfig,
    io: &IoFlags,
    model: &PathBuf,
    inputs: &[PathBuf],
    chain_threshold: Option<f64>,
) -> Result<(), Error> {
    io.apply(&mut cfg);
    if let Some(t) = chain_threshold {
        cfg.eval.chain_threshold = t;
    }
    let out = pipeline::run_score(&cfg, model, inputs)?;
    println!("scored {} events with {} into {} chains", out.events, out.model_variant, out.verdicts.len());
    for v in &out.verdicts {
        let sessions = match v.sessions.as_slice() {
            [] => String::from("-"),
            [only] => only.clone(),
            [first, .., last] => format!("{first} .. {last}"),
        };
        println!(
            "chain {:>4}  score {:.3}  {}  events {:>4}  sessions {}",
            v.chain_id,
            v.score,
            if v.malicious { "MALICIOUS" } else { "benign   " },
            v.size,
            sessions
        );
    }
    let flagged = out.verdicts.iter().filter(|v| v.malicious).count();
    println!("{flagged} of {} chains over threshold {}", out.verdicts.len(), cfg.eval.chain_threshold);
    Ok(())
}

fn cmd_gradcheck() -> Result<(), Error> {
    let reports = gradcheck::run_all()?;
    for r in &reports {
        println!(
            "{:<5} params {:>6}  max rel err {:.3e} on {:<12} {}",
            r.variant.name(),
            r.params,
            r.max_rel_err,
            r.worst_tensor,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    if let Some(r) = reports.iter().find(|r| !r.passed()) {
        return Err(Error::Numeric(format!(
            "gradient check failed for {}: max relative error {:.3e} on {}",
            r.variant.name(),
            r.max_rel_err,
            r.worst_tensor
        )));
    }
    Ok(())
}

fn cmd_audit(mut cfg: RunConfig, io: &IoFlags) -> Result<(), Error> {
    io.apply(&mut cfg);
    let report = pipeline::run_audit(&cfg)?;
    println!(
        "audited {} malicious + {} benign events, noise fraction {:.3}",
        report.positives, report.negatives, report.noise_fraction
    );
    let mut dims: Vec<_> = report.dims.iter().collect();
    dims.sort_by(|a, b| b.balanced_accuracy.total_cmp(&a.balanced_accuracy));
    for d in dims.iter().take(10) {
        println!("  {:<24} balanced accuracy {:.4}  ks {:.4}", d.name, d.balanced_accuracy, d.ks);
    }
    let verdict = if report.passes() { "PASS" } else { "FAIL" };
    println!(
        "max balanced accuracy {:.4} on {} (gate {AUDIT_GATE}): {verdict}",
        report.max_balanced_accuracy, report.worst_dim
    );
    if !report.passes() {
        return Err(Error::Schema(format!(
            "separability audit failed: {} reaches balanced accuracy {:.4}, gate is {AUDIT_GATE}",
            report.worst_dim, report.max_balanced_accuracy
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli.config)?;
    match &cli.command {
        Cmd::Gen { io, seed, n_malicious, n_benign, noise_rate } => {
            cmd_gen(cfg, io, *seed, *n_malicious, *n_benign, *noise_rate)
        }
        Cmd::Build { io } => cmd_build(cfg, io),
        Cmd::TrainEval { io, variants, epochs, seed, split_ratio } => {
            cmd_train_eval(cfg, io, variants.clone(), *epochs, *seed, *split_ratio)
        }
        Cmd::Score { io, model, inputs, chain_threshold } => {
            cmd_score(cfg, io, model, inputs, *chain_threshold)
        }
        Cmd::Gradcheck => cmd_gradcheck(),
        Cmd::Audit { io } => cmd_audit(cfg, io),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) => 1,
        Error::Io(_) | Error::Parse { .. } | Error::Schema(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
