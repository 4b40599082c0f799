mod commands;
mod fmt;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use privbound::bounds::{BoundsError, Variant};
use privbound::io::{IoError, Units};
use privbound::mechanisms::MechanismError;
use privbound::model::ModelError;
use privbound::oracle::{OracleError, SearchSpace};

#[derive(Parser)]
#[command(name = "privbound", version, about = "Privacy-utility bounds and mechanisms for multi-user disclosure")]
struct Cli {
    /// Display unit; overrides the problem file's `log_display`.
    #[arg(long, global = true, value_enum)]
    units: Option<UnitsArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitsArg {
    Nats,
    Bits,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Frl,
    Esfrl,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Product,
    Monolithic,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form upper and lower bounds.
    Bounds { file: PathBuf },
    /// Build the composed mechanism and write it to a file.
    Mechanize {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "frl")]
        variant: VariantArg,
    },
    /// Re-evaluate a mechanism file against a problem.
    Verify {
        file: PathBuf,
        mechanism: PathBuf,
        /// Also run the decomposition and per-component transforms.
        #[arg(long)]
        decompose: bool,
    },
    /// Randomized search for a good feasible mechanism.
    Oracle {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long)]
        card_u: Option<usize>,
        #[arg(long, value_enum, default_value = "product")]
        space: SpaceArg,
        /// Write the best mechanism found.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bounds over a grid of budgets, as CSV.
    Sweep {
        file: PathBuf,
        /// `from:to:step`, in nats.
        #[arg(long)]
        eps: String,
        /// Output path; stdout when omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Bad command-line values that clap cannot check.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<UsageError>() {
        return 2;
    }
    if let Some(e) = e.downcast_ref::<IoError>() {
        return match e {
            IoError::Schema { .. } | IoError::Version(_) => 2,
            IoError::Model(_) => 3,
            IoError::Mechanism(m) => mechanism_code(m),
        };
    }
    if e.is::<ModelError>() {
        return 3;
    }
    if let Some(m) = e.downcast_ref::<MechanismError>() {
        return mechanism_code(m);
    }
    if e.is::<BoundsError>() {
        return 3;
    }
    if let Some(o) = e.downcast_ref::<OracleError>() {
        return match o {
            OracleError::BadConfig(_) => 2,
            OracleError::Mechanism(m) => mechanism_code(m),
            OracleError::Bounds(_) => 3,
        };
    }
    1
}

fn mechanism_code(m: &MechanismError) -> u8 {
    match m {
        MechanismError::AlphabetMismatch(_) | MechanismError::AllocationMismatch { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let units = cli.units.map(|u| match u {
        UnitsArg::Nats => Units::Nats,
        UnitsArg::Bits => Units::Bits,
    });
    let result = match cli.command {
        Command::Bounds { file } => commands::bounds(&file, units),
        Command::Mechanize { file, out, variant } => {
            let variant = match variant {
                VariantArg::Frl => Variant::Frl,
                VariantArg::Esfrl => Variant::Esfrl,
            };
            commands::mechanize(&file, &out, variant, units)
        }
        Command::Verify { file, mechanism, decompose } => commands::verify(&file, &mechanism, decompose, units),
        Command::Oracle { file, seed, restarts, iters, card_u, space, out } => {
            let space = match space {
                SpaceArg::Product => SearchSpace::Product,
                SpaceArg::Monolithic => SearchSpace::Monolithic,
                SpaceArg::Both => SearchSpace::Both,
            };
            let cfg = privbound::oracle::OracleConfig { card_u, restarts, iters, seed, space, ..Default::default() };
            commands::oracle(&file, &cfg, out.as_deref(), units)
        }
        Command::Sweep { file, eps, csv } => commands::sweep(&file, &eps, csv.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
