//! Configuration loading and subcommand implementations behind the `evagg` binary.

pub mod commands;
pub mod config;

use std::path::Path;

use evagg::weights::SolverConfig;
use evagg::Error;

pub use commands::Report;
pub use config::{Format, Resolved, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Compare,
    Refine,
    Identify,
    Cv,
    Heatmap,
    Eta,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub encoding: Option<String>,
}

pub fn load(path: &Path, ov: &Overrides) -> Result<Resolved, Error> {
    let mut cfg = RunConfig::load(path)?;
    apply(&mut cfg.solver, ov);
    if let Some(e) = &ov.encoding {
        cfg.pool.encoding = Some(e.clone());
    }
    cfg.resolve()
}

fn apply(solver: &mut SolverConfig, ov: &Overrides) {
    if let Some(s) = ov.seed {
        solver.seed = s;
    }
}

/// Runs one subcommand. `config` may be omitted only for `eta`.
pub fn run(cmd: Command, config: Option<&Path>, ov: &Overrides) -> Result<(Report, Option<Resolved>), Error> {
    if cmd == Command::Eta {
        let solver = match config {
            Some(p) => {
                let mut cfg = RunConfig::load(p)?;
                apply(&mut cfg.solver, ov);
                cfg.solver
            }
            None => SolverConfig::default(),
        };
        return Ok((commands::eta_cmd(&solver)?, None));
    }
    let path = config.ok_or_else(|| Error::Input("--config is required for this command".into()))?;
    let r = load(path, ov)?;
    let report = match cmd {
        Command::Solve => commands::solve(&r)?,
        Command::Compare => commands::compare(&r)?,
        Command::Refine => commands::refine(&r)?,
        Command::Identify => commands::identify(&r)?,
        Command::Cv => commands::cv(&r)?,
        Command::Heatmap => commands::heatmap_cmd(&r)?,
        Command::Eta => unreachable!(),
    };
    Ok((report, Some(r)))
}
