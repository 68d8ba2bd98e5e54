//! `gridpriv`: run, compare and attack secondary frequency control scenarios.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridpriv::runner::{self, Overrides};
use gridpriv::scenario::{from_json_str, gen_scenario, CommStyle, RandomScenarioSpec, ScenarioFile};
use gridpriv::schemes::SchemeKind;
use gridpriv::Error;

#[derive(Parser)]
#[command(
    name = "gridpriv",
    version,
    about = "Privacy-preserving secondary frequency control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct OverrideArgs {
    /// Replace the scenario's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the scenario's integration step (s).
    #[arg(long)]
    dt: Option<f64>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides { seed: a.seed, dt: a.dt }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario; writes trajectory.csv, metrics.json and equilibrium.json.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Generate a random scenario file.
    GenScenario(GenArgs),
    /// Reconstruct prosumption from a recorded trajectory.
    Attack {
        trajectory: PathBuf,
        /// Attack configuration (knowledge set, derivative mode, windows).
        #[arg(long)]
        knowledge: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Second trajectory attacked with the same configuration for comparison.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Run one scenario under several schemes with a shared seed.
    Compare {
        scenario: PathBuf,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "integral,primal_dual,extended_primal_dual,privacy_preserving"
        )]
        schemes: Vec<SchemeKind>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Evaluate the privacy design condition for every unit.
    CheckDesign {
        scenario: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CommArg {
    Tree,
    Random,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator parameters; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    buses: Option<usize>,
    #[arg(long)]
    min_units: Option<usize>,
    #[arg(long)]
    max_units: Option<usize>,
    #[arg(long)]
    q_min: Option<f64>,
    #[arg(long)]
    q_max: Option<f64>,
    #[arg(long, value_enum)]
    comm: Option<CommArg>,
    /// Extra-edge probability for the random communication graph.
    #[arg(long, default_value_t = 0.05)]
    edge_probability: f64,
    /// Total load step in pu.
    #[arg(long)]
    disturbance: Option<f64>,
    #[arg(long)]
    scheme: Option<SchemeKind>,
    #[arg(long)]
    dt: Option<f64>,
}

fn load_spec(args: &GenArgs) -> gridpriv::Result<RandomScenarioSpec> {
    let mut spec = match &args.spec {
        Some(p) => from_json_str(&std::fs::read_to_string(p)?)?,
        None => RandomScenarioSpec::default(),
    };
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.buses {
        spec.bus_count = v;
    }
    if let Some(v) = args.min_units {
        spec.units_per_bus.0 = v;
    }
    if let Some(v) = args.max_units {
        spec.units_per_bus.1 = v;
    }
    if let Some(v) = args.q_min {
        spec.q_range.0 = v;
    }
    if let Some(v) = args.q_max {
        spec.q_range.1 = v;
    }
    match args.comm {
        Some(CommArg::Tree) => spec.comm_style = CommStyle::Tree,
        Some(CommArg::Random) => {
            spec.comm_style = CommStyle::RandomConnected {
                edge_probability: args.edge_probability,
            }
        }
        None => {}
    }
    if let Some(v) = args.disturbance {
        spec.disturbance_magnitude = v;
    }
    if let Some(v) = args.scheme {
        spec.kind = v;
    }
    if let Some(v) = args.dt {
        spec.dt = v;
    }
    Ok(spec)
}

fn print_json<T: serde::Serialize>(value: &T) -> gridpriv::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    writeln!(std::io::stdout().lock(), "{text}")?;
    Ok(())
}

fn write_or_print<T: serde::Serialize>(value: &T, out: Option<&Path>) -> gridpriv::Result<()> {
    match out {
        Some(p) => runner::write_json(p, value),
        None => print_json(value),
    }
}

fn execute(cli: Cli) -> gridpriv::Result<bool> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            overrides,
        } => {
            let m = runner::run(&scenario, &out, overrides.into())?;
            print_json(&m)?;
        }
        Command::GenScenario(args) => {
            let file = gen_scenario(&load_spec(&args)?)?;
            if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            runner::write_atomic(&args.out, file.to_json()?.as_bytes())?;
            log::info!(
                "wrote {} units on {} buses to {}",
                file.devices.len(),
                file.network.buses,
                args.out.display()
            );
        }
        Command::Attack {
            trajectory,
            knowledge,
            out,
            baseline,
        } => {
            let r = runner::attack(&trajectory, &knowledge, &out, baseline.as_deref())?;
            for w in &r.attack.warnings {
                log::warn!("{w}");
            }
            writeln!(
                std::io::stdout().lock(),
                "rmse_transient {} rmse_steady {} success_ratio {}",
                r.attack.rmse_transient,
                r.attack.rmse_steady,
                r.attack.success_ratio
            )?;
        }
        Command::Compare {
            scenario,
            schemes,
            out,
            overrides,
        } => {
            let s = runner::compare(&scenario, &schemes, &out, overrides.into())?;
            print_json(&s)?;
        }
        Command::CheckDesign { scenario, out } => {
            let report = runner::check_design(&ScenarioFile::load(&scenario)?)?;
            write_or_print(&report, out.as_deref())?;
            return Ok(report.all_feasible);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRIDPRIV_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: design condition violated");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            match &e {
                Error::Schema { path, .. } => eprintln!("path: {path}"),
                Error::Divergence { time, .. } => eprintln!("time: {time}"),
                _ => {}
            }
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
