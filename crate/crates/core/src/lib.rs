//! Core algorithms for a batch urban-heat-island analysis.
//!
//! The pipeline has two halves. Data preparation turns satellite bands into
//! land-surface temperature and spectral indices ([`raster`], [`indices`]),
//! bins pixels and building records onto regular hexagonal grids
//! ([`hexgrid`]) and joins everything into one per-hexagon table
//! ([`features`]). Statistical modelling builds contiguity weights over the
//! observed hexagons ([`weights`]), fits OLS, spatial lag and spatial error
//! regressions by maximum likelihood ([`models`]) and compares them with
//! residual diagnostics ([`diagnostics`]).
//!
//! [`demo`] generates a reproducible synthetic scene so the whole chain can run
//! without licensed imagery.

pub mod demo;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod hexgrid;
pub mod indices;
pub mod models;
pub mod optim;
pub mod raster;
pub mod synthetic;
pub mod weights;

pub use diagnostics::{
    build_selection_report, lm_error_test, lm_lag_test, morans_i, DiagnosticResult,
    FitDiagnostics, Reference, SelectionReport,
};
pub use error::{Error, Result};
pub use features::{
    assemble_feature_table, load_buildings, BuildingRecord, FeatureRow, FeatureTable,
};
pub use hexgrid::{
    aggregate_points, aggregate_raster, build_hexgrid, AggregateStat, HexAggregate, HexCellId,
    HexGrid, HexLayer, PointLayer,
};
pub use indices::RadiometricConstants;
pub use models::{aic, fit_ols, fit_sar, fit_sem, DesignMatrix, ModelFit, ModelKind, Significance};
pub use raster::{BBox, GeoPoint, GridStats, RasterGrid};
pub use weights::{build_weights, SpatialWeights};
