use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use diffhedge::runner::{run, Command, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "diffhedge",
    version,
    about = "Differential machine learning for option pricing and delta hedging",
    after_help = "Any config key can also be overridden as `--key value`, e.g. `--market.sigma 0.25`."
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate paths and dump them with their tangents
    Simulate(Common),
    /// Fit one method and write the model, loss history and pricing curve
    Train(Common),
    /// Fit one method and backtest its deltas on fresh test paths
    Hedge(Common),
    /// Full grid of relative hedging errors over methods, sizes and seeds
    Table1(Common),
}

#[derive(clap::Args, Debug, Clone, Default)]
struct Common {
    /// flat `key=value` config file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// analytic, lsmc_poly, lsmc_nn or diff_nn
    #[arg(long, value_name = "NAME")]
    method: Option<String>,
    /// training paths (simulate: dumped paths)
    #[arg(long, value_name = "N")]
    paths: Option<usize>,
    #[arg(long = "set", value_name = "KEY=VALUE", hide = true)]
    set: Vec<String>,
}

/// Rewrites dotted `--key value` / `--key=value` flags as hidden `--set key=value`.
fn rewrite_overrides(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--") {
            Some(flag) if flag.contains('.') => {
                if flag.contains('=') {
                    out.push("--set".into());
                    out.push(flag.to_string());
                } else if let Some(v) = it.next() {
                    out.push("--set".into());
                    out.push(format!("{flag}={v}"));
                } else {
                    out.push(a);
                }
            }
            _ => out.push(a),
        }
    }
    out
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in config {}", path.display()))?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("override `{kv}` must be key=value"))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(m) = &common.method {
        cfg.set("run.method", m)?;
    }
    if let Some(n) = common.paths {
        cfg.paths = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(rewrite_overrides(std::env::args().collect()));
    let (cmd, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Hedge(c) => (Command::Hedge, c),
        Cmd::Table1(c) => (Command::Table1, c),
    };
    let result = resolve(&common).and_then(|cfg| {
        let m = run(cmd, &cfg)?;
        eprintln!("{cmd}: wrote {} files to {}", m.outputs.len(), cfg.out.display());
        for (k, v) in &m.metrics {
            println!("{k}={v}");
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
