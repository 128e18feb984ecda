use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ftquad::attitude::FilterMode;
use ftquad::harness::{compare_runs, compute_metrics, run_scenario, Frontend, ScenarioConfig, Trace};
use ftquad::par::ExecMode;

#[derive(Parser, Debug)]
#[command(name = "ftquad", version, about = "Three-rotor quadrotor flight simulator with onboard VIO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one scenario; writes trace.csv and metrics.json.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Simulate every *.toml in a directory and tabulate the metrics.
    Compare {
        config_dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute metrics from a saved trace.
    Metrics {
        trace: PathBuf,
        /// Also write metrics.json here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// frames | events
    #[arg(long)]
    frontend: Option<Frontend>,
    /// standard | corrected
    #[arg(long)]
    filter: Option<FilterMode>,
    /// Run scenarios one at a time.
    #[arg(long)]
    sequential: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(f) = self.frontend {
            cfg.frontend = f;
        }
        if let Some(m) = self.filter {
            cfg.filter.mode = m;
        }
    }

    fn mode(&self) -> ExecMode {
        if self.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(config: &Path, o: &Overrides) -> Result<()> {
    let mut cfg = ScenarioConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    o.apply(&mut cfg);
    fs::create_dir_all(&o.out_dir)?;
    let trace = run_scenario(&cfg, o.mode())?;
    trace.save(o.out_dir.join("trace.csv"))?;
    let report = compute_metrics(&trace)?;
    write_json(&o.out_dir.join("metrics.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(c) = trace.crash() {
        eprintln!("crashed at t = {:.3} s ({})", c.time, c.reason);
    }
    Ok(())
}

fn compare(dir: &Path, o: &Overrides) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no *.toml configs in {}", dir.display());
    }
    let mut runs = Vec::with_capacity(paths.len());
    for p in &paths {
        let mut cfg = ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display()))?;
        o.apply(&mut cfg);
        let label = p.file_stem().map_or_else(|| cfg.name.clone(), |s| s.to_string_lossy().into_owned());
        runs.push((label, cfg));
    }
    let table = compare_runs(&runs, o.mode())?;
    fs::create_dir_all(&o.out_dir)?;
    write_json(&o.out_dir.join("comparison.json"), &table)?;
    print!("{table}");
    Ok(())
}

fn metrics(path: &Path, out_dir: Option<&Path>) -> Result<()> {
    let trace = Trace::load(path).with_context(|| format!("loading {}", path.display()))?;
    let report = compute_metrics(&trace)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("metrics.json"), &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, overrides } => run(&config, &overrides),
        Command::Compare { config_dir, overrides } => compare(&config_dir, &overrides),
        Command::Metrics { trace, out_dir } => metrics(&trace, out_dir.as_deref()),
    }
}
