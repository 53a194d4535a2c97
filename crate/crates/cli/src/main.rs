use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mcte_core::runner::{load_config, Overrides};
use mcte_core::{run, RunError, Scenario};

/// Run one scenario of the coupled-channel invariant laboratory.
#[derive(Debug, Parser)]
#[command(name = "mcte-lab", version)]
struct Cli {
    /// invariant, sweep, holonomy, stability-map, dilatancy, rowe,
    /// fluctuation-check or sign-error
    scenario: String,
    /// JSON scenario configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set surface.c=0.6` or `--set sweep.v0_values=[0.8,0.79]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel scenarios (default: all logical cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// RNG seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: &Cli) -> Result<String, RunError> {
    let scenario = Scenario::from_name(&cli.scenario).ok_or_else(|| {
        let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
        RunError::Config(format!(
            "unknown scenario {:?}; expected one of {}",
            cli.scenario,
            names.join(", ")
        ))
    })?;
    if cli.jobs == Some(0) {
        return Err(RunError::Config("--jobs must be at least 1".into()));
    }
    let ov = Overrides {
        scenario: Some(scenario),
        set: cli.set.clone(),
        output_dir: cli.out.clone(),
        seed: cli.seed,
    };
    let cfg = load_config(&cli.config, &ov)?;
    let summary = run(&cfg, cli.jobs)?;
    Ok(serde_json::to_string_pretty(&summary).expect("summary serializes"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mcte-lab: {e}");
            if let RunError::Computation { partial, .. } = &e {
                for p in partial {
                    eprintln!("  kept {}", p.display());
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
