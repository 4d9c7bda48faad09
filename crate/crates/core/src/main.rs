use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use freqctl::lyapunov::{audit_derivative_bound, certify};
use freqctl::scenario::{self, Scenario};

const AUDIT_SAMPLES: usize = 10_000;

#[derive(Parser)]
#[command(
    name = "freqctl",
    version,
    about = "Generator and load-side primary frequency control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the optimal frequency control problem after all disturbances.
    Ofc(Common),
    /// Post-disturbance closed-loop equilibrium.
    Equilibrium(Common),
    /// Simulate the scenario and write the trajectory CSV and JSON report.
    Simulate(Common),
    /// Stability certificate of the post-disturbance equilibrium.
    Certify(Common),
    /// Generator-only versus generator-and-load comparison.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Integration step, s.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time span, s.
    #[arg(long)]
    t_end: Option<f64>,
    /// Output directory; overrides the scenario's.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seed of the randomized derivative-bound audit.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Common {
    fn load(&self) -> Result<Scenario> {
        let mut s = scenario::load_scenario(&self.scenario)?;
        if let Some(dt) = self.dt {
            s.run.dt = dt;
        }
        if let Some(t_end) = self.t_end {
            s.run.t_end = t_end;
        }
        if let Some(dir) = &self.out_dir {
            s.output.dir = Some(dir.clone());
        }
        s.closed_loop()?;
        Ok(s)
    }
}

fn execute(cli: Cli) -> Result<serde_json::Value> {
    let value = match cli.command {
        Command::Ofc(args) => {
            let s = args.load()?;
            let solution = s
                .closed_loop()?
                .ofc_problem(&s.final_constants())?
                .solve()?;
            serde_json::to_value(solution)?
        }
        Command::Equilibrium(args) => {
            let s = args.load()?;
            let eq = s.closed_loop()?.equilibrium(&s.final_constants())?;
            serde_json::to_value(eq)?
        }
        Command::Simulate(args) => serde_json::to_value(scenario::run(&args.load()?)?)?,
        Command::Certify(args) => {
            let s = args.load()?;
            let system = s.closed_loop()?;
            let eq = system.equilibrium(&s.final_constants())?;
            let cert = certify(&system, &eq.state, s.run.lipschitz_delta)?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let audit: Vec<_> = cert
                .generators
                .iter()
                .filter_map(|g| {
                    let c = g.construction.coefficients()?;
                    let turbine = system.model().buses()[g.bus].turbine?;
                    let excess =
                        audit_derivative_bound(c, turbine, g.lipschitz, AUDIT_SAMPLES, &mut rng);
                    Some(json!({ "bus": g.bus, "samples": AUDIT_SAMPLES, "max_excess": excess }))
                })
                .collect();
            json!({ "certificate": cert, "audit": audit, "seed": args.seed })
        }
        Command::Compare(args) => serde_json::to_value(scenario::compare_cases(&args.load()?)?)?,
    };
    Ok(value)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli).and_then(|v| serde_json::to_string_pretty(&v).context("serializing output"))
    {
        Ok(text) => {
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            let numerical = err
                .downcast_ref::<freqctl::Error>()
                .is_some_and(|e| e.is_numerical());
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}
