//! Pipeline stages and their on-disk layout.
//!
//! ```text
//! <output_dir>/
//!   indices/{lst,ndvi,ndwi}.asc, indices/summary.json
//!   geocode_rejections.csv
//!   d<diameter>/grid.json, features.csv, hexes.geojson, fit_<model>.json
//!   report.csv, report.txt, report.json
//!   PARTIAL              present only after a failed run
//! ```

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use uhi_core::diagnostics::FitRecord;
use uhi_core::features::{apply_cached_locations, geocode, GeocodeCache, GeocodeClient, GeocodeOutcome, HttpTransport};
use uhi_core::hexgrid::geojson_polygons;
use uhi_core::indices::{compute_scene_indices, SceneBands};
use uhi_core::models::fit_model;
use uhi_core::raster::{read_ascii_grid_file, write_ascii_grid};
use uhi_core::{
    aggregate_points, aggregate_raster, assemble_feature_table, build_hexgrid, build_selection_report,
    build_weights, fit_ols, lm_error_test, lm_lag_test, load_buildings, morans_i, AggregateStat, BBox,
    DesignMatrix, Error, FeatureTable, FitDiagnostics, GridStats, HexCellId, HexGrid, ModelFit, ModelKind,
    SelectionReport, SpatialWeights,
};

use crate::config::PipelineConfig;
use crate::error::{CliError, ErrorClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Indices,
    Grid,
    Geocode,
    Aggregate,
    Fit,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Indices,
        Stage::Grid,
        Stage::Geocode,
        Stage::Aggregate,
        Stage::Fit,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Indices => "indices",
            Stage::Grid => "grid",
            Stage::Geocode => "geocode",
            Stage::Aggregate => "aggregate",
            Stage::Fit => "fit",
            Stage::Report => "report",
        }
    }

    fn error_class(self) -> ErrorClass {
        match self {
            Stage::Indices | Stage::Grid | Stage::Aggregate => ErrorClass::Ingestion,
            Stage::Geocode => ErrorClass::Service,
            Stage::Fit | Stage::Report => ErrorClass::Numeric,
        }
    }
}

/// Paths of every artifact under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn indices_dir(&self) -> PathBuf {
        self.root.join("indices")
    }

    pub fn index_grid(&self, name: &str) -> PathBuf {
        self.indices_dir().join(format!("{name}.asc"))
    }

    pub fn indices_summary(&self) -> PathBuf {
        self.indices_dir().join("summary.json")
    }

    pub fn rejections(&self) -> PathBuf {
        self.root.join("geocode_rejections.csv")
    }

    pub fn diameter_dir(&self, diameter: f64) -> PathBuf {
        self.root.join(format!("d{diameter}"))
    }

    pub fn grid(&self, diameter: f64) -> PathBuf {
        self.diameter_dir(diameter).join("grid.json")
    }

    pub fn features(&self, diameter: f64) -> PathBuf {
        self.diameter_dir(diameter).join("features.csv")
    }

    pub fn geojson(&self, diameter: f64) -> PathBuf {
        self.diameter_dir(diameter).join("hexes.geojson")
    }

    pub fn fit(&self, diameter: f64, kind: ModelKind) -> PathBuf {
        fit_path(&self.diameter_dir(diameter), kind)
    }

    pub fn partial(&self) -> PathBuf {
        self.root.join("PARTIAL")
    }
}

pub fn fit_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("fit_{}.json", kind.as_str().to_ascii_lowercase()))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| {
        CliError::new(ErrorClass::Ingestion, format!("cannot write {}: {e}", path.display()))
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::new(ErrorClass::Ingestion, format!("cannot read {}: {e}", path.display())).in_stage(stage)
    })?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::new(ErrorClass::Ingestion, format!("{}: {e}", path.display())).in_stage(stage)
    })
}

fn core_err(stage: Stage) -> impl Fn(Error) -> CliError {
    move |e| CliError::from_core(stage.name(), stage.error_class(), e)
}

/// Scene statistics written next to the index grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicesSummary {
    pub extent: BBox,
    pub ndvi_range: (f64, f64),
    pub celsius: bool,
    pub lst: GridStats,
    pub ndvi: GridStats,
    pub ndwi: GridStats,
}

pub fn run_indices(cfg: &PipelineConfig) -> Result<IndicesSummary, CliError> {
    let err = core_err(Stage::Indices);
    let i = &cfg.inputs;
    let read = |p: &PathBuf| {
        read_ascii_grid_file(p).map_err(|e| {
            CliError::from_core("indices", ErrorClass::Ingestion, e).with_context(p)
        })
    };
    let (thermal, red, nir, green, swir) = (read(&i.thermal)?, read(&i.red)?, read(&i.nir)?, read(&i.green)?, read(&i.swir)?);
    let bands = SceneBands {
        thermal_dn: &thermal,
        red: &red,
        nir: &nir,
        green: &green,
        swir: &swir,
    };
    let scene = compute_scene_indices(&bands, &cfg.constants, cfg.ndvi_range, cfg.celsius).map_err(&err)?;
    let layout = Layout::new(&cfg.output_dir);
    for (name, grid) in [("lst", &scene.lst), ("ndvi", &scene.ndvi), ("ndwi", &scene.ndwi)] {
        let mut buf = Vec::new();
        write_ascii_grid(grid, &mut buf).map_err(&err)?;
        write_atomic(&layout.index_grid(name), &buf)?;
    }
    let summary = IndicesSummary {
        extent: thermal.bbox(),
        ndvi_range: scene.ndvi_range,
        celsius: cfg.celsius,
        lst: scene.lst.stats().map_err(&err)?,
        ndvi: scene.ndvi.stats().map_err(&err)?,
        ndwi: scene.ndwi.stats().map_err(&err)?,
    };
    write_atomic(&layout.indices_summary(), &to_json(&summary))?;
    log::info!(
        "indices: LST {:.2}..{:.2}, NDVI range {:?}",
        summary.lst.min,
        summary.lst.max,
        summary.ndvi_range
    );
    Ok(summary)
}

impl CliError {
    fn with_context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

pub fn run_grid(cfg: &PipelineConfig) -> Result<Vec<HexGrid>, CliError> {
    let layout = Layout::new(&cfg.output_dir);
    let summary: IndicesSummary = read_json(&layout.indices_summary(), "grid")?;
    let mut grids = Vec::new();
    for &d in &cfg.diameters {
        let grid = build_hexgrid(summary.extent, d).map_err(core_err(Stage::Grid))?;
        write_atomic(&layout.grid(d), &to_json(&grid))?;
        grids.push(grid);
    }
    Ok(grids)
}

/// Resolves missing building locations through the configured service.
/// Without unresolved records this stage touches no network.
pub fn run_geocode(cfg: &PipelineConfig) -> Result<Option<GeocodeOutcome>, CliError> {
    let err = core_err(Stage::Geocode);
    let layout = Layout::new(&cfg.output_dir);
    let records = read_buildings(cfg, "geocode")?;
    let missing = records.iter().filter(|r| r.needs_geocoding()).count();
    let outcome = if missing == 0 {
        GeocodeOutcome {
            records,
            rejected: Vec::new(),
            cache_hits: 0,
            requests: 0,
        }
    } else if let Some(settings) = &cfg.geocode {
        let transport = HttpTransport::new(
            settings.base_url.clone(),
            settings.query_param.clone(),
            Duration::from_secs_f64(settings.timeout_seconds),
        )
        .map_err(&err)?;
        let cache = GeocodeCache::new(cfg.cache_dir()).map_err(&err)?;
        let mut client = GeocodeClient::new(Arc::new(transport), cache);
        client.rate_limit = settings.rate_limit;
        client.max_concurrency = settings.max_concurrency;
        client.max_retries = settings.max_retries;
        let outcome = geocode(&client, records).map_err(&err)?;
        log::info!(
            "geocode: {missing} unresolved records, {} cache hits, {} requests, {} rejected",
            outcome.cache_hits,
            outcome.requests,
            outcome.rejected.len()
        );
        outcome
    } else {
        log::warn!("{missing} buildings lack coordinates and no geocoding service is configured");
        return Ok(None);
    };
    let mut buf = Vec::new();
    outcome.write_rejections(&mut buf).map_err(&err)?;
    write_atomic(&layout.rejections(), &buf)?;
    Ok(Some(outcome))
}

fn read_buildings(cfg: &PipelineConfig, stage: &'static str) -> Result<Vec<uhi_core::BuildingRecord>, CliError> {
    let path = &cfg.inputs.buildings;
    let file = std::fs::File::open(path).map_err(|e| {
        CliError::new(ErrorClass::Ingestion, format!("cannot open {}: {e}", path.display())).in_stage(stage)
    })?;
    load_buildings(std::io::BufReader::new(file))
        .map_err(|e| CliError::from_core(stage, ErrorClass::Ingestion, e).with_context(path))
}

pub fn run_aggregate(cfg: &PipelineConfig) -> Result<Vec<FeatureTable>, CliError> {
    let err = core_err(Stage::Aggregate);
    let layout = Layout::new(&cfg.output_dir);
    let read = |p: PathBuf| read_ascii_grid_file(&p).map_err(|e| err(e).with_context(&p));
    let lst = read(layout.index_grid("lst"))?;
    let ndvi = read(layout.index_grid("ndvi"))?;
    let ndwi = read(layout.index_grid("ndwi"))?;
    let population = read(cfg.inputs.population.clone())?;

    let mut records = read_buildings(cfg, "aggregate")?;
    if records.iter().any(|r| r.needs_geocoding()) {
        let dir = cfg.cache_dir();
        if dir.is_dir() {
            let cache = GeocodeCache::new(dir).map_err(&err)?;
            apply_cached_locations(&cache, &mut records).map_err(&err)?;
        }
        let unresolved = records.iter().filter(|r| r.needs_geocoding()).count();
        if unresolved > 0 {
            log::warn!("{unresolved} buildings have no location and are left out");
        }
    }
    let points: Vec<_> = records
        .iter()
        .filter_map(|r| r.location.map(|p| (p, r.attributes())))
        .collect();

    cfg.diameters
        .par_iter()
        .map(|&d| {
            let grid: HexGrid = read_json(&layout.grid(d), "aggregate")?;
            let mean = |r| aggregate_raster(&grid, r, AggregateStat::Mean).map_err(&err);
            let table = assemble_feature_table(
                &grid,
                &mean(&lst)?,
                &mean(&ndvi)?,
                &mean(&ndwi)?,
                &aggregate_raster(&grid, &population, AggregateStat::Sum).map_err(&err)?,
                &aggregate_points(&grid, &points).map_err(&err)?,
            )
            .map_err(&err)?;
            let mut buf = Vec::new();
            table.write_csv(&mut buf).map_err(&err)?;
            write_atomic(&layout.features(d), &buf)?;
            let geojson = geojson_polygons(
                &grid,
                table.rows.iter().map(|r| {
                    (
                        r.cell,
                        vec![
                            ("lst", r.lst),
                            ("ndvi", r.ndvi),
                            ("ndwi", r.ndwi),
                            ("total_population", r.total_population),
                        ],
                    )
                }),
            );
            write_atomic(&layout.geojson(d), &to_json(&geojson))?;
            log::info!("aggregate: {d} m grid has {} hexagons", table.len());
            Ok(table)
        })
        .collect()
}

/// One fitted model as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub diameter: f64,
    /// Regressors actually used, in design order.
    pub regressors: Vec<String>,
    /// Constant or collinear columns removed before fitting.
    pub dropped_regressors: Vec<String>,
    /// Observation order of `residuals` and `fitted`.
    pub cells: Vec<HexCellId>,
    /// Hexagons without an observed neighbour, left out of every model.
    pub dropped_cells: Vec<HexCellId>,
    pub fit: ModelFit,
    pub diagnostics: FitDiagnostics,
}

struct Prepared {
    design: DesignMatrix,
    weights: SpatialWeights,
    ols: ModelFit,
    dropped_regressors: Vec<String>,
}

fn prepare(table: &FeatureTable, regressors: &[String]) -> Result<Prepared, Error> {
    let weights = build_weights(&table.cells())?;
    let rows: Vec<_> = table
        .rows
        .iter()
        .filter(|r| weights.row_of(&r.cell).is_some())
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r.lst).collect();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for name in regressors {
        let col: Vec<f64> = rows
            .iter()
            .map(|r| {
                r.regressor(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown regressor `{name}`")))
            })
            .collect::<Result<_, _>>()?;
        if col.iter().all(|v| *v == col[0]) {
            log::warn!("regressor `{name}` is constant over the retained hexagons; dropped");
            dropped.push(name.clone());
        } else {
            names.push(name.clone());
            columns.push(col);
        }
    }
    loop {
        let design = DesignMatrix::new(names.clone(), &columns, y.clone())?;
        match fit_ols(&design) {
            Ok(ols) => {
                return Ok(Prepared {
                    design,
                    weights,
                    ols,
                    dropped_regressors: dropped,
                })
            }
            Err(Error::RankDeficient { columns: bad })
                if !bad.is_empty() && bad.iter().all(|b| names.contains(b)) =>
            {
                log::warn!("collinear regressors {bad:?} dropped");
                let keep: Vec<bool> = names.iter().map(|n| !bad.contains(n)).collect();
                let mut it = keep.iter();
                columns.retain(|_| *it.next().expect("same length"));
                names.retain(|n| !bad.contains(n));
                dropped.extend(bad);
            }
            Err(e) => return Err(e),
        }
    }
}

fn diagnose(fit: &ModelFit, p: &Prepared) -> FitDiagnostics {
    let warn = |what: &str, e: Error| {
        log::warn!("{what} unavailable: {e}");
    };
    let or_warn = |what: &str, r: Result<_, Error>| r.map_err(|e| warn(what, e)).ok();
    FitDiagnostics {
        morans_i: or_warn("Moran's I", morans_i(&fit.residuals, &p.weights)),
        lm_lag: or_warn("LM-lag", lm_lag_test(&p.ols, &p.design, &p.weights)),
        lm_error: or_warn("LM-error", lm_error_test(&p.ols, &p.design, &p.weights)),
    }
}

/// Fits every requested model to one feature table. The OLS fit that feeds
/// the LM tests is computed even when OLS itself is not requested.
pub fn fit_feature_table(
    table: &FeatureTable,
    diameter: f64,
    regressors: &[String],
    kinds: &[ModelKind],
) -> Result<Vec<FitDocument>, CliError> {
    let err = core_err(Stage::Fit);
    let p = prepare(table, regressors).map_err(&err)?;
    let cells = p.weights.cells().to_vec();
    kinds
        .par_iter()
        .map(|&kind| {
            let fit = match kind {
                ModelKind::Ols => p.ols.clone(),
                _ => fit_model(kind, &p.design, &p.weights).map_err(&err)?,
            };
            let diagnostics = diagnose(&fit, &p);
            Ok(FitDocument {
                diameter,
                regressors: p.design.names().to_vec(),
                dropped_regressors: p.dropped_regressors.clone(),
                cells: cells.clone(),
                dropped_cells: p.weights.dropped().to_vec(),
                fit,
                diagnostics,
            })
        })
        .collect()
}

pub fn read_feature_table(path: &Path) -> Result<FeatureTable, CliError> {
    let file = std::fs::File::open(path).map_err(|e| {
        CliError::new(ErrorClass::Ingestion, format!("cannot open {}: {e}", path.display())).in_stage("fit")
    })?;
    FeatureTable::read_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::from_core("fit", ErrorClass::Ingestion, e).with_context(path))
}

pub fn write_fits(dir: &Path, docs: &[FitDocument]) -> Result<(), CliError> {
    for doc in docs {
        write_atomic(&fit_path(dir, doc.fit.kind), &to_json(doc))?;
    }
    Ok(())
}

pub fn run_fit(cfg: &PipelineConfig) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.output_dir);
    let regressors = cfg.regressors();
    cfg.diameters.par_iter().try_for_each(|&d| {
        let table = read_feature_table(&layout.features(d))?;
        let docs = fit_feature_table(&table, d, &regressors, &cfg.models)
            .map_err(|e| CliError { message: format!("{d} m grid: {}", e.message), ..e })?;
        write_fits(&layout.diameter_dir(d), &docs)?;
        log::info!("fit: {d} m grid, {} models on {} hexagons", docs.len(), docs[0].fit.n);
        Ok(())
    })
}

pub fn read_fit_documents(paths: &[PathBuf]) -> Result<Vec<FitDocument>, CliError> {
    paths.iter().map(|p| read_json(p, "report")).collect()
}

/// Builds the comparison report and writes its CSV, text and JSON forms.
pub fn write_report(dir: &Path, docs: Vec<FitDocument>) -> Result<SelectionReport, CliError> {
    let err = core_err(Stage::Report);
    let records: Vec<FitRecord> = docs
        .into_iter()
        .map(|d| FitRecord {
            diameter: d.diameter,
            fit: d.fit,
            diagnostics: d.diagnostics,
        })
        .collect();
    let report = build_selection_report(&records).map_err(&err)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(&err)?;
    write_atomic(&dir.join("report.csv"), &csv)?;
    write_atomic(&dir.join("report.txt"), report.to_text().as_bytes())?;
    write_atomic(&dir.join("report.json"), &to_json(&report))?;
    log::info!(
        "report: selected {} m {} ({})",
        report.chosen.diameter,
        report.chosen.model,
        report.chosen.justification
    );
    Ok(report)
}

pub fn run_report(cfg: &PipelineConfig) -> Result<SelectionReport, CliError> {
    let layout = Layout::new(&cfg.output_dir);
    let mut seen = BTreeSet::new();
    let paths: Vec<PathBuf> = cfg
        .diameters
        .iter()
        .flat_map(|&d| cfg.models.iter().map(move |&k| (d, k)))
        .filter(|(d, k)| seen.insert((d.to_bits(), *k as u8)))
        .map(|(d, k)| layout.fit(d, k))
        .collect();
    write_report(&layout.root, read_fit_documents(&paths)?)
}

pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<(), CliError> {
    log::info!("stage {}", stage.name());
    let result = match stage {
        Stage::Indices => run_indices(cfg).map(drop),
        Stage::Grid => run_grid(cfg).map(drop),
        Stage::Geocode => run_geocode(cfg).map(drop),
        Stage::Aggregate => run_aggregate(cfg).map(drop),
        Stage::Fit => run_fit(cfg),
        Stage::Report => run_report(cfg).map(drop),
    };
    result.map_err(|e| e.in_stage(stage.name()))
}

/// Runs every stage in order.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<SelectionReport, CliError> {
    for stage in &Stage::ALL[..Stage::ALL.len() - 1] {
        run_stage(cfg, *stage)?;
    }
    run_report(cfg).map_err(|e| e.in_stage("report"))
}

/// Records a failure so partially written outputs are recognisable.
pub fn mark_partial(output_dir: &Path, error: &CliError) {
    let body = format!(
        "stage: {}\nexit_code: {}\nerror: {}\n",
        error.stage.unwrap_or("unknown"),
        error.exit_code(),
        error.message
    );
    if let Err(e) = write_atomic(&Layout::new(output_dir).partial(), body.as_bytes()) {
        log::error!("could not write the partial-output marker: {e}");
    }
}

pub fn clear_partial(output_dir: &Path) {
    let _ = std::fs::remove_file(Layout::new(output_dir).partial());
}
