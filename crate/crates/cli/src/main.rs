use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grade::experiment::run_experiment;
use grade::kv::KvMap;
use grade::Error;

/// Graph-attention surrogate for time-dependent PDEs.
#[derive(Parser, Debug)]
#[command(name = "grade", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the reference equations and store snapshots.
    Generate(RunArgs),
    /// Fit a model to a snapshot dataset.
    Train(RunArgs),
    /// Roll a trained model forward and score it against a dataset.
    Rollout(RunArgs),
    /// Score stored predictions against a dataset.
    Eval(RunArgs),
    /// Train FNN and Taylor attention side by side.
    CompareAttention(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; must be absent or empty.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) | Error::Numeric { .. } => 2,
        Error::Io { .. } | Error::Format(_) => 3,
        _ => 1,
    }
}

fn settings(mode: &str, args: &RunArgs) -> grade::Result<KvMap> {
    let mut kv = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            KvMap::parse(&text)?
        }
        None => KvMap::new(),
    };
    for s in &args.set {
        kv.apply_override(s)?;
    }
    match kv.get_opt("mode") {
        Some(m) if m != mode => {
            return Err(Error::Config(format!(
                "config is for mode {m:?}, but the {mode:?} command was given"
            )))
        }
        _ => kv.set("mode", mode),
    }
    if let Some(out) = &args.out {
        kv.set("out", out.display());
    }
    if let Some(seed) = args.seed {
        kv.set("seed", seed);
    }
    Ok(kv)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (mode, args) = match &cli.command {
        Command::Generate(a) => ("generate", a),
        Command::Train(a) => ("train", a),
        Command::Rollout(a) => ("rollout", a),
        Command::Eval(a) => ("eval", a),
        Command::CompareAttention(a) => ("compare-attention", a),
    };
    match settings(mode, args).and_then(run_experiment) {
        Ok(out) => {
            for line in &out.summary {
                println!("{line}");
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
