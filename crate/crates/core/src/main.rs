use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cbsde::cli::{run_file, validate_file, Experiment, Overrides};

#[derive(Parser)]
#[command(name = "cbsde", version, about = "Constrained BSDE solver and property harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config
    config: PathBuf,
    /// Number of lattice steps
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest penalty level
    #[arg(long = "m-max")]
    m_max: Option<f64>,
    /// Cauchy tolerance on the penalty schedule
    #[arg(long)]
    tol: Option<f64>,
    /// Output directory
    #[arg(long)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            steps: self.steps,
            seed: self.seed,
            m_max: self.m_max,
            tol: self.tol,
            output: self.output.clone(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Property {
    Comparison,
    Convexity,
    Fatou,
    L2,
    FromBelow,
}

impl From<Property> for Experiment {
    fn from(p: Property) -> Self {
        match p {
            Property::Comparison => Experiment::Comparison,
            Property::Convexity => Experiment::Convexity,
            Property::Fatou => Experiment::Fatou,
            Property::L2 => Experiment::L2,
            Property::FromBelow => Experiment::FromBelow,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Plain BSDE by backward induction
    Solve(RunArgs),
    /// Penalized BSDE at m = m_max
    Penalize(RunArgs),
    /// Minimal constrained solution through the penalty schedule
    Minimal(RunArgs),
    /// Reflected BSDE on the constraint's barrier
    Reflected(RunArgs),
    /// Penalty schedule against the reflected solution
    CompareOracle(RunArgs),
    /// Property check over seeded instances
    Check {
        property: Property,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Risk measure of the claim and, with check.count, the axiom audit
    Risk(RunArgs),
    /// Run the experiment named by the config's `experiment` key
    Run(RunArgs),
    /// List config violations without running
    Validate(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve(a) => run_file(&a.config, Some(Experiment::Solve), &a.overrides()),
        Command::Penalize(a) => run_file(&a.config, Some(Experiment::Penalize), &a.overrides()),
        Command::Minimal(a) => run_file(&a.config, Some(Experiment::Minimal), &a.overrides()),
        Command::Reflected(a) => run_file(&a.config, Some(Experiment::Reflected), &a.overrides()),
        Command::CompareOracle(a) => run_file(&a.config, Some(Experiment::CompareOracle), &a.overrides()),
        Command::Check { property, args } => run_file(&args.config, Some(property.into()), &args.overrides()),
        Command::Risk(a) => run_file(&a.config, Some(Experiment::Risk), &a.overrides()),
        Command::Run(a) => run_file(&a.config, None, &a.overrides()),
        Command::Validate(a) => validate_file(&a.config, None, &a.overrides()),
    };
    ExitCode::from(code as u8)
}
