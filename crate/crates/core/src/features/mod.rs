//! Building ingestion and assembly of the per-hexagon feature table.

pub mod geocode;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexgrid::{check_layer_grid, HexCellId, HexGrid, HexLayer, PointLayer};
use crate::raster::GeoPoint;

pub use geocode::{apply_cached_locations, geocode, GeocodeCache, GeocodeClient, GeocodeOutcome, GeocodeTransport, HttpTransport, Rejection};

/// Column names of the building CSV. `x` and `y` are optional columns and may
/// be left empty for records that still need geocoding.
pub const BUILDING_COLUMNS: [&str; 11] = [
    "address_key",
    "x",
    "y",
    "height_storeys",
    "dwelling_units",
    "residential",
    "commercial",
    "market_hawker",
    "multistorey_carpark",
    "precinct_pavilion",
    "miscellaneous",
];

const FLAG_COLUMNS: [&str; 6] = [
    "residential",
    "commercial",
    "market_hawker",
    "multistorey_carpark",
    "precinct_pavilion",
    "miscellaneous",
];

/// Order of the attribute vector produced by [`BuildingRecord::attributes`].
pub const BUILDING_ATTRIBUTES: [&str; 8] = [
    "height_storeys",
    "dwelling_units",
    "residential",
    "commercial",
    "market_hawker",
    "multistorey_carpark",
    "precinct_pavilion",
    "miscellaneous",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub address_key: String,
    pub location: Option<GeoPoint>,
    pub height_storeys: u32,
    pub dwelling_units: u32,
    pub residential_flag: u8,
    pub commercial_flag: u8,
    pub market_hawker_flag: u8,
    pub multistorey_carpark_flag: u8,
    pub precinct_pavilion_flag: u8,
    pub miscellaneous_flag: u8,
}

impl BuildingRecord {
    pub fn needs_geocoding(&self) -> bool {
        self.location.is_none()
    }

    pub fn attributes(&self) -> Vec<f64> {
        vec![
            self.height_storeys as f64,
            self.dwelling_units as f64,
            self.residential_flag as f64,
            self.commercial_flag as f64,
            self.market_hawker_flag as f64,
            self.multistorey_carpark_flag as f64,
            self.precinct_pavilion_flag as f64,
            self.miscellaneous_flag as f64,
        ]
    }

    fn flags(&self) -> [u8; 6] {
        [
            self.residential_flag,
            self.commercial_flag,
            self.market_hawker_flag,
            self.multistorey_carpark_flag,
            self.precinct_pavilion_flag,
            self.miscellaneous_flag,
        ]
    }
}

/// Parses the building CSV. Rows with empty `x`/`y` (or no coordinate
/// columns at all) load with `location: None`.
pub fn load_buildings<R: Read>(source: R) -> Result<Vec<BuildingRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let required = |name: &str| column(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let address = required("address_key")?;
    let height = required("height_storeys")?;
    let units = required("dwelling_units")?;
    let flags: Vec<usize> = FLAG_COLUMNS.iter().map(|c| required(c)).collect::<Result<_>>()?;
    let x_col = column("x");
    let y_col = column("y");

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let err = |col: &str, message: String| Error::Building {
            row,
            column: col.to_string(),
            message,
        };
        let count = |idx: usize, col: &str| -> Result<u32> {
            let raw = field(idx);
            let v: i64 = raw
                .parse()
                .map_err(|_| err(col, format!("`{raw}` is not an integer")))?;
            if v < 0 {
                return Err(err(col, format!("negative value {v}")));
            }
            u32::try_from(v).map_err(|_| err(col, format!("value {v} too large")))
        };

        let key = field(address).to_string();
        if key.is_empty() {
            return Err(err("address_key", "empty address key".into()));
        }
        let height_storeys = count(height, "height_storeys")?;
        let dwelling_units = count(units, "dwelling_units")?;
        let mut flag_values = [0u8; 6];
        for (slot, (&idx, &name)) in flag_values.iter_mut().zip(flags.iter().zip(&FLAG_COLUMNS)) {
            *slot = match field(idx) {
                "0" => 0,
                "1" => 1,
                other => return Err(err(name, format!("flag must be 0 or 1, got `{other}`"))),
            };
        }
        let coord = |idx: Option<usize>, col: &str| -> Result<Option<f64>> {
            match idx.map(field) {
                None | Some("") => Ok(None),
                Some(raw) => raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Some)
                    .ok_or_else(|| err(col, format!("invalid coordinate `{raw}`"))),
            }
        };
        let location = match (coord(x_col, "x")?, coord(y_col, "y")?) {
            (Some(x), Some(y)) => Some(GeoPoint::new(x, y)),
            (None, None) => None,
            _ => return Err(err("x", "only one of x/y given".into())),
        };
        out.push(BuildingRecord {
            address_key: key,
            location,
            height_storeys,
            dwelling_units,
            residential_flag: flag_values[0],
            commercial_flag: flag_values[1],
            market_hawker_flag: flag_values[2],
            multistorey_carpark_flag: flag_values[3],
            precinct_pavilion_flag: flag_values[4],
            miscellaneous_flag: flag_values[5],
        });
    }
    Ok(out)
}

pub fn write_buildings<W: Write>(records: &[BuildingRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(BUILDING_COLUMNS)?;
    for b in records {
        let (x, y) = b
            .location
            .map_or((String::new(), String::new()), |p| (p.x.to_string(), p.y.to_string()));
        let mut row = vec![
            b.address_key.clone(),
            x,
            y,
            b.height_storeys.to_string(),
            b.dwelling_units.to_string(),
        ];
        row.extend(b.flags().iter().map(|f| f.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Regressor column names in table order.
pub const REGRESSORS: [&str; 11] = [
    "ndvi",
    "ndwi",
    "total_population",
    "total_height",
    "total_dwelling_units",
    "total_residential",
    "total_commercial",
    "total_market_hawker",
    "total_multistorey_carpark",
    "total_precinct_pavilion",
    "total_miscellaneous",
];

pub const FEATURE_COLUMNS: [&str; 14] = [
    "q",
    "r",
    "lst",
    "ndvi",
    "ndwi",
    "total_population",
    "total_height",
    "total_dwelling_units",
    "total_residential",
    "total_commercial",
    "total_market_hawker",
    "total_multistorey_carpark",
    "total_precinct_pavilion",
    "total_miscellaneous",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub cell: HexCellId,
    pub lst: f64,
    pub ndvi: f64,
    pub ndwi: f64,
    pub total_population: f64,
    pub total_height: f64,
    pub total_dwelling_units: f64,
    pub total_residential: f64,
    pub total_commercial: f64,
    pub total_market_hawker: f64,
    pub total_multistorey_carpark: f64,
    pub total_precinct_pavilion: f64,
    pub total_miscellaneous: f64,
}

impl FeatureRow {
    /// Values in [`REGRESSORS`] order.
    pub fn regressors(&self) -> [f64; 11] {
        [
            self.ndvi,
            self.ndwi,
            self.total_population,
            self.total_height,
            self.total_dwelling_units,
            self.total_residential,
            self.total_commercial,
            self.total_market_hawker,
            self.total_multistorey_carpark,
            self.total_precinct_pavilion,
            self.total_miscellaneous,
        ]
    }

    pub fn regressor(&self, name: &str) -> Option<f64> {
        REGRESSORS
            .iter()
            .position(|r| *r == name)
            .map(|i| self.regressors()[i])
    }
}

/// Per-hexagon observations, sorted by `(q, r)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cells(&self) -> Vec<HexCellId> {
        self.rows.iter().map(|r| r.cell).collect()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(FEATURE_COLUMNS)?;
        for row in &self.rows {
            let mut rec = vec![row.cell.q.to_string(), row.cell.r.to_string(), row.lst.to_string()];
            rec.extend(row.regressors().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers = reader.headers()?.clone();
        let idx: Vec<usize> = FEATURE_COLUMNS
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h == *c)
                    .ok_or_else(|| Error::MissingColumn(c.to_string()))
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let num = |k: usize| -> Result<f64> {
                let raw = record.get(idx[k]).unwrap_or("");
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("column `{}`: invalid number `{raw}`", FEATURE_COLUMNS[k]),
                    })
            };
            let int = |k: usize| -> Result<i64> {
                let raw = record.get(idx[k]).unwrap_or("");
                raw.parse::<i64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("column `{}`: invalid integer `{raw}`", FEATURE_COLUMNS[k]),
                })
            };
            rows.push(FeatureRow {
                cell: HexCellId::new(int(0)?, int(1)?),
                lst: num(2)?,
                ndvi: num(3)?,
                ndwi: num(4)?,
                total_population: num(5)?,
                total_height: num(6)?,
                total_dwelling_units: num(7)?,
                total_residential: num(8)?,
                total_commercial: num(9)?,
                total_market_hawker: num(10)?,
                total_multistorey_carpark: num(11)?,
                total_precinct_pavilion: num(12)?,
                total_miscellaneous: num(13)?,
            });
        }
        rows.sort_by_key(|r| r.cell);
        if let Some(w) = rows.windows(2).find(|w| w[0].cell == w[1].cell) {
            return Err(Error::InvalidArgument(format!(
                "duplicate hexagon ({}, {}) in feature table",
                w[0].cell.q, w[0].cell.r
            )));
        }
        Ok(Self { rows })
    }
}

/// Joins the per-hex layers into one table.
///
/// Rows exist only for hexagons with an LST value. Hexagons without NDVI or
/// NDWI are excluded as raster coverage gaps; missing population and building
/// sums are zero.
pub fn assemble_feature_table(
    hexgrid: &HexGrid,
    lst: &HexLayer,
    ndvi: &HexLayer,
    ndwi: &HexLayer,
    population: &HexLayer,
    buildings: &PointLayer,
) -> Result<FeatureTable> {
    for (layer, name) in [(lst, "lst"), (ndvi, "ndvi"), (ndwi, "ndwi"), (population, "population")] {
        check_layer_grid(hexgrid, layer.diameter, layer.origin, name)?;
    }
    check_layer_grid(hexgrid, buildings.diameter, buildings.origin, "buildings")?;
    if !buildings.cells.is_empty() && buildings.arity != BUILDING_ATTRIBUTES.len() {
        return Err(Error::InvalidArgument(format!(
            "building sums have arity {}, expected {}",
            buildings.arity,
            BUILDING_ATTRIBUTES.len()
        )));
    }
    let ndvi: BTreeMap<_, _> = ndvi.to_map();
    let ndwi: BTreeMap<_, _> = ndwi.to_map();
    let population: BTreeMap<_, _> = population.to_map();
    let zeros = [0.0; 8];

    let rows = lst
        .cells
        .iter()
        .filter_map(|a| {
            let (ndvi, ndwi) = (*ndvi.get(&a.cell)?, *ndwi.get(&a.cell)?);
            let b = buildings.cells.get(&a.cell).map_or(&zeros[..], |s| &s.sums[..]);
            Some(FeatureRow {
                cell: a.cell,
                lst: a.value,
                ndvi,
                ndwi,
                total_population: population.get(&a.cell).copied().unwrap_or(0.0),
                total_height: b[0],
                total_dwelling_units: b[1],
                total_residential: b[2],
                total_commercial: b[3],
                total_market_hawker: b[4],
                total_multistorey_carpark: b[5],
                total_precinct_pavilion: b[6],
                total_miscellaneous: b[7],
            })
        })
        .collect();
    Ok(FeatureTable { rows })
}
