use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use resilient_cbf::harness::{presets, run_with_margins, verify_invariance, RunReport, Scenario, Trace};
use resilient_cbf::margins::{check_theorem3_condition, Theorem3Config};

/// Sampled-data resilient CBF simulator.
#[derive(Parser)]
#[command(name = "resilient-cbf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.csv, report.json and scenario.json.
    Run {
        /// Scenario JSON file, or `preset:<name>`.
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key=value`; keys: eta, xi, horizon, literal_paper_sign.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Recompute h_tot and the cascade from a run directory's raw states.
    Verify { dir: PathBuf },
    /// Print the margin report with the provenance of every constant.
    Margins {
        scenario: String,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Grid-sampled check of the boundary-region condition.
    CheckT3 {
        scenario: String,
        #[arg(long, default_value_t = 41)]
        resolution: usize,
    },
    /// Run a range of seeds in parallel, one output directory per seed.
    Sweep {
        scenario: String,
        /// Half-open range `a..b`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Write a built-in scenario as JSON.
    Export {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(spec: &str, overrides: &[String]) -> anyhow::Result<Scenario> {
    let mut scenario = match spec.strip_prefix("preset:") {
        Some(name) => presets::by_name(name).ok_or_else(|| anyhow!("unknown preset {name:?}; known: {:?}", presets::NAMES))?,
        None => Scenario::load(Path::new(spec)).with_context(|| format!("loading {spec}"))?,
    };
    for o in overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| anyhow!("override {o:?} is not key=value"))?;
        match key {
            "eta" => {
                let v: f64 = value.parse()?;
                scenario.margins.eta = Some(v);
                scenario.flags.eta_zero_ablation = v == 0.0;
            }
            "xi" => scenario.margins.xi = Some(value.parse()?),
            "horizon" => scenario.horizon = value.parse()?,
            "literal_paper_sign" => scenario.flags.literal_paper_sign = value.parse()?,
            _ => bail!("unknown override key {key:?}"),
        }
    }
    Ok(scenario)
}

fn parse_seeds(s: &str) -> anyhow::Result<Range<u64>> {
    let (a, b) = s.split_once("..").ok_or_else(|| anyhow!("seed range must look like a..b"))?;
    let range = a.trim().parse()?..b.trim().parse()?;
    if range.is_empty() {
        bail!("empty seed range {s}");
    }
    Ok(range)
}

fn run_one(
    scenario: &Scenario,
    seed: u64,
    out: &Path,
    config: &resilient_cbf::margins::MarginConfig,
) -> anyhow::Result<RunReport> {
    let output = run_with_margins(scenario, seed, config)?;
    output.write(scenario, seed, out)?;
    Ok(output.report(scenario, seed))
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, seed, out, overrides } => {
            let scenario = load(&scenario, &overrides)?;
            scenario.validate()?;
            let config = scenario.resolve_margins()?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{seed}", scenario.name)));
            let report = run_one(&scenario, seed, &out, &config)?;
            print_json(&report)?;
            if let Some(e) = report.error {
                eprintln!("run stopped early: {e}");
                return Ok(ExitCode::from(1));
            }
            eprintln!("wrote {}", out.display());
        }
        Command::Verify { dir } => {
            let scenario = Scenario::load(&dir.join("scenario.json"))?;
            let report: RunReport = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json"))?)?;
            let trace = Trace::read_csv(&dir.join("trace.csv"))?;
            let v = verify_invariance(&trace, &scenario, report.margins.xi)?;
            print_json(&v)?;
            if !v.passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Margins { scenario, overrides } => {
            let scenario = load(&scenario, &overrides)?;
            let config = scenario.resolve_margins()?;
            print_json(&scenario.margin_report(&config))?;
        }
        Command::CheckT3 { scenario, resolution } => {
            let scenario = load(&scenario, &[])?;
            let config = scenario.resolve_margins()?;
            let (gamma_max, delta_max) = scenario.schedule(0).extremes();
            let t3 = Theorem3Config { grid_resolution: resolution, gamma_max, delta_max, ..Default::default() };
            let report = check_theorem3_condition(
                &scenario.models(),
                &scenario.barrier()?,
                &scenario.alphas[0],
                &config,
                scenario.bounding_box.as_ref(),
                &t3,
            )?;
            print_json(&report)?;
        }
        Command::Sweep { scenario, seeds, out, overrides } => {
            let scenario = load(&scenario, &overrides)?;
            scenario.validate()?;
            let config = scenario.resolve_margins()?;
            let seeds = parse_seeds(&seeds)?;
            let root = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-sweep", scenario.name)));
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = std::env::var("RESILIENT_CBF_THREADS").ok().and_then(|v| v.parse().ok()) {
                pool = pool.num_threads(n);
            }
            let reports: Vec<anyhow::Result<RunReport>> = pool.build()?.install(|| {
                seeds
                    .clone()
                    .into_par_iter()
                    .map(|seed| run_one(&scenario, seed, &root.join(format!("seed{seed}")), &config))
                    .collect()
            });
            let mut violated = false;
            let mut failed = false;
            for (seed, r) in seeds.zip(reports) {
                match r {
                    Ok(r) => {
                        violated |= r.first_violation.is_some();
                        failed |= r.error.is_some();
                        println!(
                            "seed {seed}: max_h_tot {:.6e}, first_violation {}, fallbacks {}{}",
                            r.max_h_tot,
                            r.first_violation.map_or("none".to_string(), |t| format!("{t:.4}")),
                            r.fallback_count,
                            r.error.map_or(String::new(), |e| format!(", stopped: {e}")),
                        );
                    }
                    Err(e) => {
                        failed = true;
                        println!("seed {seed}: error: {e:#}");
                    }
                }
            }
            if failed {
                return Ok(ExitCode::from(1));
            }
            if violated {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Export { name, out } => {
            let scenario =
                presets::by_name(&name).ok_or_else(|| anyhow!("unknown preset {name:?}; known: {:?}", presets::NAMES))?;
            let json = scenario.to_json()? + "\n";
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => print!("{json}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
