use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod maps;

/// Small-area vaccination coverage mapping with spatially varying empowerment effects.
#[derive(Debug, Parser)]
#[command(name = "vaxmap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a synthetic geography, survey and generating truth.
    Simulate(SimulateArgs),
    /// Score raw questionnaire answers and assign empowerment classes.
    Index(IndexArgs),
    /// Fit the model for one vaccine and write posterior draws.
    Fit(FitArgs),
    /// Summarize posterior draws into coverage predictions and effect maps.
    Predict(PredictArgs),
    /// Compare state-level predictions with survey prevalence.
    Validate(ValidateArgs),
    /// Run a simulation-based calibration experiment.
    Sbc(SbcArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    pub units: usize,
    #[arg(long, default_value_t = 5)]
    pub states: usize,
    #[arg(long, default_value_t = 4)]
    pub waves: usize,
    #[arg(long, default_value_t = 40)]
    pub children_per_cell: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,
    /// Also write raw questionnaire answers for this many women per wave.
    #[arg(long)]
    pub respondents_per_wave: Option<usize>,
    /// Also write square unit polygons as `units.geojson`.
    #[arg(long)]
    pub geojson: bool,
    /// JSON file overriding the generating parameters.
    #[arg(long)]
    pub truth_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// One of bcg, dpt_complete, mcv1, all_basic, zero_dose.
    #[arg(long)]
    pub vaccine: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit_dir: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Must match the configuration the fit ran with.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to the fit directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Unit polygons to join predictions onto.
    #[arg(long)]
    pub geojson: Option<PathBuf>,
    /// Feature property holding the unit id.
    #[arg(long, default_value = "unit_id")]
    pub id_property: String,
    /// Render one choropleth per (year, statistic) into `maps/`.
    #[arg(long, requires = "geojson")]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Predict output directory; repeat once per vaccine.
    #[arg(long, required = true)]
    pub pred_dir: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SbcArgs {
    /// JSON calibration settings; unspecified fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run the deliberately broken sampler that never refreshes its auxiliaries.
    #[arg(long)]
    pub freeze_auxiliary: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const INVALID: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const NOT_CONVERGED: u8 = 4;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use vaxmap::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Graph(_) | Error::Invalid(_) | Error::Schema(_) | Error::ConfigMismatch(_) | Error::Json(_)) => {
            exit::INVALID
        }
        Some(Error::Csv(e)) if !e.is_io_error() => exit::INVALID,
        Some(Error::Numerical(_)) => exit::NUMERICAL,
        _ => exit::OTHER,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Index(a) => commands::index(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Sbc(a) => commands::sbc(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
