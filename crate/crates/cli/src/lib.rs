//! `uhi`: the end-to-end urban heat island pipeline.
//!
//! Stages run in order (indices, grid, geocode, aggregate, fit, report) from
//! one JSON config. Each stage also runs on its own so intermediate outputs
//! can be inspected or cached; `fit` and `report` additionally accept
//! explicit inputs without a config.

pub mod config;
pub mod error;
pub mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use uhi_core::demo::{DemoParams, DemoScene, DEMO_FILES};
use uhi_core::ModelKind;

use crate::config::{InputPaths, PipelineConfig, DEFAULT_DIAMETERS};
use crate::error::{CliError, ErrorClass};
use crate::stages::Stage;

#[derive(Debug, Parser)]
#[command(name = "uhi", version, about = "Urban heat island analysis on hexagonal grids")]
pub struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for aggregation and model fitting.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the whole pipeline, or one stage with `--stage`.
    Run {
        #[arg(long, value_enum)]
        stage: Option<Stage>,
    },
    /// LST, NDVI and NDWI grids from the input bands.
    Indices,
    /// Hexagonal grid definitions for every configured diameter.
    Grid,
    /// Resolve building addresses without coordinates.
    Geocode,
    /// Per-hexagon feature tables and GeoJSON.
    Aggregate,
    /// Fit the configured models.
    Fit(FitArgs),
    /// Combine fits into the model-selection report.
    Report(ReportArgs),
    /// Write the synthetic demo dataset and a config that runs it.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Feature table to fit instead of the config's outputs.
    #[arg(long, requires_all = ["diameter", "out"])]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub diameter: Option<f64>,
    /// Directory for the fit documents.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub models: Vec<ModelKind>,
    #[arg(long, value_delimiter = ',')]
    pub regressors: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Fit documents to compare instead of the config's outputs.
    #[arg(long, num_args = 1.., requires = "out")]
    pub fits: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    #[arg(long, default_value_t = 1000)]
    pub cols: usize,
    #[arg(long, default_value_t = 2000)]
    pub buildings: usize,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required for this command"))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs config-driven work, leaving a `PARTIAL` marker in the output
/// directory on failure.
fn with_marker<T>(
    cfg: &PipelineConfig,
    clear_on_success: bool,
    f: impl FnOnce(&PipelineConfig) -> Result<T, CliError>,
) -> Result<T, CliError> {
    match f(cfg) {
        Ok(v) => {
            if clear_on_success {
                stages::clear_partial(&cfg.output_dir);
            }
            Ok(v)
        }
        Err(e) => {
            stages::mark_partial(&cfg.output_dir, &e);
            Err(e)
        }
    }
}

fn run_single(cli: &Cli, stage: Stage) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    with_marker(&cfg, false, |c| stages::run_stage(c, stage))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        // Only fails if a pool already exists, as in repeated in-process calls.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match &cli.command {
        Command::Run { stage: Some(stage) } => run_single(cli, *stage),
        Command::Run { stage: None } => {
            let cfg = load_config(cli)?;
            with_marker(&cfg, true, stages::run_pipeline).map(drop)
        }
        Command::Indices => run_single(cli, Stage::Indices),
        Command::Grid => run_single(cli, Stage::Grid),
        Command::Geocode => run_single(cli, Stage::Geocode),
        Command::Aggregate => run_single(cli, Stage::Aggregate),
        Command::Fit(args) => run_fit(cli, args),
        Command::Report(args) => run_report(cli, args),
        Command::Demo(args) => run_demo(cli, args),
    }
}

fn run_fit(cli: &Cli, args: &FitArgs) -> Result<(), CliError> {
    let Some(features) = &args.features else {
        if !args.models.is_empty() || !args.regressors.is_empty() {
            return Err(CliError::config(
                "--models and --regressors apply to explicit --features input; set them in the config otherwise",
            ));
        }
        return run_single(cli, Stage::Fit);
    };
    let (Some(diameter), Some(out)) = (args.diameter, &args.out) else {
        return Err(CliError::config("--features needs --diameter and --out"));
    };
    let kinds = if args.models.is_empty() {
        ModelKind::ALL.to_vec()
    } else {
        args.models.clone()
    };
    let regressors = if args.regressors.is_empty() {
        uhi_core::features::REGRESSORS.iter().map(|s| s.to_string()).collect()
    } else {
        args.regressors.clone()
    };
    if let Some(bad) = regressors
        .iter()
        .find(|r| !uhi_core::features::REGRESSORS.contains(&r.as_str()))
    {
        return Err(CliError::config(format!("unknown regressor `{bad}`")));
    }
    let table = stages::read_feature_table(features)?;
    let docs = stages::fit_feature_table(&table, diameter, &regressors, &kinds)?;
    stages::write_fits(out, &docs)
}

fn run_report(cli: &Cli, args: &ReportArgs) -> Result<(), CliError> {
    if args.fits.is_empty() {
        if args.out.is_some() {
            return Err(CliError::config("--out applies to explicit --fits input"));
        }
        return run_single(cli, Stage::Report);
    }
    let out = args.out.as_ref().expect("clap enforces --out");
    let docs = stages::read_fit_documents(&args.fits)?;
    stages::write_report(out, docs).map(drop)
}

/// Config for the demo dataset, with paths relative to `dir`.
pub fn demo_config(seed: u64) -> PipelineConfig {
    let f = DEMO_FILES;
    PipelineConfig {
        inputs: InputPaths {
            red: f.red.into(),
            nir: f.nir.into(),
            green: f.green.into(),
            swir: f.swir.into(),
            thermal: f.thermal.into(),
            population: f.population.into(),
            buildings: f.buildings.into(),
        },
        constants: uhi_core::RadiometricConstants::new(
            uhi_core::demo::DEMO_M_L,
            uhi_core::demo::DEMO_A_L,
            uhi_core::demo::DEMO_K1,
            uhi_core::demo::DEMO_K2,
        )
        .expect("valid demo constants"),
        diameters: DEFAULT_DIAMETERS.to_vec(),
        models: ModelKind::ALL.to_vec(),
        regressors: None,
        ndvi_range: None,
        celsius: true,
        geocode: None,
        output_dir: "out".into(),
        seed,
    }
}

fn run_demo(cli: &Cli, args: &DemoArgs) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    let params = DemoParams {
        rows: args.rows,
        cols: args.cols,
        buildings: args.buildings,
        ..DemoParams::default()
    };
    let fail = |e: uhi_core::Error| CliError::from_core("demo", ErrorClass::Config, e);
    let scene = DemoScene::generate(&params, seed).map_err(fail)?;
    scene.write_to(&args.out).map_err(fail)?;
    let mut json = serde_json::to_vec_pretty(&demo_config(seed)).expect("serializable");
    json.push(b'\n');
    stages::write_atomic(&args.out.join("config.json"), &json)?;
    log::info!("demo dataset written to {}", args.out.display());
    Ok(())
}
