use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evagg_cli::{run, Command, Format, Overrides};
use serde_json::json;

#[derive(Parser)]
#[command(name = "evagg", version, about = "Minimax-regret aggregation of study estimates")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed; overrides solver.seed and EVAGG_SEED
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the report here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Categorical encoding table from the config (e.g. "literal")
    #[arg(long, global = true)]
    encoding: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Minimax regret weights and decision per target
    Solve,
    /// Compare the configured rules and their regret ratios
    Compare,
    /// Minimax weights over a data-driven confidence region
    Refine,
    /// Identified-set decision with exactly known study effects
    Identify,
    /// Leave-one-out choice of the Lipschitz constant
    Cv,
    /// Minimax estimate over a two-covariate grid of targets
    Heatmap,
    /// Tabulate eta(a) and its maximizer
    Eta,
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    let env_seed = match std::env::var("EVAGG_SEED") {
        Ok(s) => match s.parse::<u64>() {
            Ok(v) => Some(v),
            Err(_) => return fail("input", "EVAGG_SEED is not an unsigned integer", 2),
        },
        Err(_) => None,
    };
    let cmd = match cli.command {
        Cmd::Solve => Command::Solve,
        Cmd::Compare => Command::Compare,
        Cmd::Refine => Command::Refine,
        Cmd::Identify => Command::Identify,
        Cmd::Cv => Command::Cv,
        Cmd::Heatmap => Command::Heatmap,
        Cmd::Eta => Command::Eta,
    };
    let ov = Overrides { seed: cli.seed.or(env_seed), encoding: cli.encoding };
    let (report, resolved) = match run(cmd, cli.config.as_deref(), &ov) {
        Ok(r) => r,
        Err(e) => return fail(e.kind(), &e.to_string(), if e.is_input() { 2 } else { 3 }),
    };
    let cfg_out = resolved.as_ref().map(|r| &r.config.output);
    let format = cli.format.or(cfg_out.and_then(|o| o.format)).unwrap_or(report.default_format);
    let text = report.render(format);
    match cli.out.or_else(|| cfg_out.and_then(|o| o.path.clone())) {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, text) {
                return fail("io", &format!("cannot write {}: {e}", path.display()), 2);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}
