use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use serde::Serialize;

use mobicloud::harness::scenario::{CatalogSpec, ProfileSpec};
use mobicloud::harness::{build_instance, load_scenario, run_experiment, to_csv, to_table, AlgorithmName, Scenario};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Algorithm {
    Music,
    Gmusic,
    Rsa,
    Greedy,
    Bruteforce,
    All,
}

impl From<Algorithm> for AlgorithmName {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::Music => AlgorithmName::Music,
            Algorithm::Gmusic => AlgorithmName::Gmusic,
            Algorithm::Rsa => AlgorithmName::Rsa,
            Algorithm::Greedy => AlgorithmName::Greedy,
            Algorithm::Bruteforce => AlgorithmName::Bruteforce,
            Algorithm::All => AlgorithmName::All,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
}

/// Runs service-allocation experiments over a local/public cloud and emits
/// per-repetition metrics.
#[derive(Debug, Parser)]
#[command(name = "mobicloud", version)]
struct Args {
    /// Scenario TOML file. Without it, built-in defaults are used.
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    #[arg(long, value_name = "N")]
    users: Option<u32>,
    #[arg(long, value_name = "N")]
    groups: Option<u32>,
    /// Single uncertainty level, percent of mispredicted entries.
    #[arg(long, value_name = "PCT")]
    uncertainty: Option<f64>,
    /// Master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    repetitions: Option<u32>,
    /// Write results here instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Switch every local cloud off.
    #[arg(long)]
    public_only: bool,
    /// Print the cost profiles and service catalog in effect, as TOML, and exit.
    #[arg(long)]
    dump_profiles: bool,
    /// Print the full effective scenario, as TOML, and exit.
    #[arg(long)]
    dump_scenario: bool,
    /// Print the service registry's bounding-box tree for repetition 0 and exit.
    #[arg(long)]
    dump_registry: bool,
}

#[derive(Serialize)]
struct ProfileDump<'a> {
    profiles: &'a ProfileSpec,
    catalog: &'a CatalogSpec,
}

fn scenario(args: &Args) -> Result<Scenario> {
    let mut s = match &args.scenario {
        Some(p) => load_scenario(p).with_context(|| format!("loading {}", p.display()))?,
        None => Scenario::with_users(args.users.unwrap_or(100)),
    };
    if let Some(a) = args.algorithm {
        s.algorithm.name = a.into();
    }
    if let Some(n) = args.users {
        s.users.count = n;
    }
    if let Some(n) = args.groups {
        s.groups.count = n;
    }
    if let Some(p) = args.uncertainty {
        s.uncertainty.levels_pct = vec![p];
    }
    if let Some(n) = args.seed {
        s.seed = n;
    }
    if let Some(n) = args.repetitions {
        s.repetitions = n;
    }
    s.public_only |= args.public_only;
    s.validate()?;
    Ok(s)
}

fn emit(args: &Args, text: &str) -> Result<()> {
    match &args.output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let args = Args::parse();
    let s = scenario(&args)?;
    if args.dump_profiles {
        let text = toml::to_string(&ProfileDump { profiles: &s.profiles, catalog: &s.catalog })?;
        return emit(&args, &text);
    }
    if args.dump_scenario {
        return emit(&args, &s.to_toml()?);
    }
    if args.dump_registry {
        let inst = build_instance(&s, 0)?;
        let world = if s.public_only { inst.world.public_only() } else { inst.world };
        return emit(&args, &world.registry().dump());
    }
    let rows = run_experiment(&s)?;
    if rows.is_empty() {
        bail!("the scenario produced no results");
    }
    let text = match args.format {
        Format::Csv => to_csv(&rows)?,
        Format::Table => to_table(&rows),
    };
    emit(&args, &text)
}
