use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use robust_verify::envs;
use robust_verify::pipeline::{self, load_config};
use robust_verify::verify::{
    maximize_phi_upper, maximize_uncertainty, minimize_phi_lower, BnbConfig, VerificationRecord,
};
use robust_verify::{Error, ImpreciseNet, InputBox};

#[derive(Parser)]
#[command(name = "robust-verify", version, about = "Distributionally robust verification of black-box systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run exploration, certification and coverage evaluation.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (1 = sequential, 0 = all cores).
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Summarize a finished run directory.
    Report {
        dir: PathBuf,
        /// Also write an SVG plot of the per-iteration traces.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Certify an envelope optimum of a saved model over a box.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "box")]
        region: PathBuf,
        #[arg(long, value_enum)]
        objective: Objective,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 200_000)]
        max_nodes: usize,
    },
    /// Environment registry.
    Envs {
        #[command(subcommand)]
        command: EnvsCommand,
    },
}

#[derive(Subcommand)]
enum EnvsCommand {
    /// List available environments.
    List,
    /// Simulate one episode and print the trajectory as CSV.
    Trajectory {
        name: String,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    /// Maximum of the upper envelope.
    Max,
    /// Minimum of the lower envelope.
    Min,
    /// Maximum envelope width.
    Uncertainty,
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn verify(model: &Path, region: &Path, objective: Objective, tol: f64, max_nodes: usize) -> anyhow::Result<()> {
    let inn = ImpreciseNet::deserialize(&read(model)?).with_context(|| format!("loading {}", model.display()))?;
    let bytes = read(region)?;
    let b: InputBox = serde_json::from_slice(&bytes)
        .map_err(|e| Error::from_json(&bytes, &e))
        .with_context(|| format!("loading {}", region.display()))?;
    let cfg = BnbConfig {
        tolerance: tol,
        max_nodes,
        ..BnbConfig::default()
    };
    let (name, opt) = match objective {
        Objective::Max => ("max_upper", maximize_phi_upper(&inn, &b, &cfg)?),
        Objective::Min => ("min_lower", minimize_phi_lower(&inn, &b, &cfg)?),
        Objective::Uncertainty => ("max_uncertainty", maximize_uncertainty(&inn, &b, &cfg)?),
    };
    let record = VerificationRecord::new(name, &b, &opt);
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

fn run(config: &Path, out: Option<PathBuf>, workers: usize) -> Result<(), (u8, anyhow::Error)> {
    let (cfg, seed) = load_config(config).map_err(|e| {
        let code = match e {
            Error::Io { .. } => 1,
            _ => 2,
        };
        (code, anyhow::Error::new(e).context(format!("invalid config {}", config.display())))
    })?;
    let Some(out) = out.or_else(|| cfg.out_dir.clone()) else {
        return Err((2, anyhow::anyhow!("no output directory: pass --out or set `out_dir`")));
    };
    let manifest = pipeline::run(&cfg, seed, &out, workers).map_err(|e| (1, e.into()))?;
    for r in &manifest.runs {
        println!(
            "beta={} epsilon={} phi_l={} certified={}",
            r.beta, r.epsilon, r.phi_l, r.all_certified
        );
    }
    println!("wrote {}", out.join(pipeline::MANIFEST_FILE).display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), (u8, anyhow::Error)> {
    let fail = |e: anyhow::Error| (1, e);
    match cli.command {
        Command::Run { config, out, workers } => run(&config, out, workers),
        Command::Report { dir, svg } => {
            let out = pipeline::report(&dir, svg.as_deref()).map_err(|e| fail(e.into()))?;
            print!("{}", out.table);
            println!("wrote {}", out.csv_path.display());
            if let Some(svg) = out.svg_path {
                println!("wrote {}", svg.display());
            }
            Ok(())
        }
        Command::Verify {
            model,
            region,
            objective,
            tol,
            max_nodes,
        } => verify(&model, &region, objective, tol, max_nodes).map_err(fail),
        Command::Envs { command } => match command {
            EnvsCommand::List => {
                for name in envs::names() {
                    println!("{name:<12}  {}", envs::describe(name).unwrap_or(""));
                }
                Ok(())
            }
            EnvsCommand::Trajectory { name, x0, noise, seed } => {
                if envs::lookup(&name, None).is_none() {
                    return Err((2, anyhow::anyhow!("unknown environment `{name}`")));
                }
                let csv = pipeline::trajectory_csv(&name, &x0, noise, seed).map_err(|e| fail(e.into()))?;
                print!("{csv}");
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
