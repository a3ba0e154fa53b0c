//! Regular pointy-top hexagonal tessellations and pixel/point binning.
//!
//! Cells are addressed with axial coordinates `(q, r)`. Cell `(0, 0)` is
//! centred on the grid origin, which is anchored at the lower-left corner of
//! the bounding box so identical inputs always yield identical cell ids.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::raster::{BBox, GeoPoint, RasterGrid};

/// Circumradius as a fraction of the grid "diameter". Diameter is the
/// flat-to-flat width (1/√3); use 0.5 to read it as vertex-to-vertex instead.
pub const CIRCUMRADIUS_PER_DIAMETER: f64 = 0.577_350_269_189_625_8;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

pub const AXIAL_NEIGHBOR_OFFSETS: [(i64, i64); 6] =
    [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HexCellId {
    pub q: i64,
    pub r: i64,
}

impl HexCellId {
    pub const fn new(q: i64, r: i64) -> Self {
        Self { q, r }
    }

    pub fn neighbors(&self) -> [HexCellId; 6] {
        AXIAL_NEIGHBOR_OFFSETS.map(|(dq, dr)| HexCellId::new(self.q + dq, self.r + dr))
    }

    /// Hex (cube) distance in cell steps.
    pub fn distance(&self, other: &HexCellId) -> i64 {
        let dq = self.q - other.q;
        let dr = self.r - other.r;
        (dq.abs() + dr.abs() + (dq + dr).abs()) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexGrid {
    pub diameter: f64,
    pub origin: GeoPoint,
    pub bbox: BBox,
}

pub fn build_hexgrid(bbox: BBox, diameter: f64) -> Result<HexGrid> {
    if !(diameter > 0.0 && diameter.is_finite()) {
        return Err(Error::InvalidArgument(format!("hex diameter {diameter} must be > 0")));
    }
    let bbox = BBox::new(bbox.min_x, bbox.min_y, bbox.max_x, bbox.max_y)?;
    Ok(HexGrid {
        diameter,
        origin: GeoPoint::new(bbox.min_x, bbox.min_y),
        bbox,
    })
}

impl HexGrid {
    /// Centre-to-vertex distance.
    pub fn circumradius(&self) -> f64 {
        self.diameter * CIRCUMRADIUS_PER_DIAMETER
    }

    /// Horizontal distance between centres in the same row.
    pub fn column_spacing(&self) -> f64 {
        SQRT_3 * self.circumradius()
    }

    pub fn row_spacing(&self) -> f64 {
        1.5 * self.circumradius()
    }

    pub fn cell_area(&self) -> f64 {
        let s = self.circumradius();
        1.5 * SQRT_3 * s * s
    }

    pub fn center(&self, cell: HexCellId) -> GeoPoint {
        let (q, r) = (cell.q as f64, cell.r as f64);
        GeoPoint::new(
            self.origin.x + self.column_spacing() * (q + 0.5 * r),
            self.origin.y + self.row_spacing() * r,
        )
    }

    /// The cell containing `p`. Points on a shared edge resolve by the cube
    /// rounding rule, so every point belongs to exactly one cell.
    pub fn locate(&self, p: GeoPoint) -> HexCellId {
        let s = self.circumradius();
        let dx = p.x - self.origin.x;
        let dy = p.y - self.origin.y;
        let qf = (SQRT_3 / 3.0 * dx - dy / 3.0) / s;
        let rf = (2.0 / 3.0 * dy) / s;
        cube_round(qf, rf)
    }

    /// Polygon ring, counter-clockwise from the lower-right vertex.
    pub fn vertices(&self, cell: HexCellId) -> [GeoPoint; 6] {
        let c = self.center(cell);
        let s = self.circumradius();
        std::array::from_fn(|i| {
            let angle = PI / 180.0 * (60.0 * i as f64 - 30.0);
            GeoPoint::new(c.x + s * angle.cos(), c.y + s * angle.sin())
        })
    }

    /// Identity used to check that layers were binned on the same grid.
    fn same_grid(&self, diameter: f64, origin: GeoPoint) -> bool {
        self.diameter == diameter && self.origin == origin
    }
}

fn cube_round(qf: f64, rf: f64) -> HexCellId {
    let sf = -qf - rf;
    let mut q = qf.round();
    let mut r = rf.round();
    let s = sf.round();
    let dq = (q - qf).abs();
    let dr = (r - rf).abs();
    let ds = (s - sf).abs();
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    HexCellId::new(q as i64, r as i64)
}

pub fn locate(grid: &HexGrid, p: GeoPoint) -> HexCellId {
    grid.locate(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateStat {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexAggregate {
    pub cell: HexCellId,
    pub value: f64,
    pub contributing_count: usize,
}

/// Per-hex aggregates of one raster, tagged with the grid they were binned on.
#[derive(Debug, Clone, PartialEq)]
pub struct HexLayer {
    pub diameter: f64,
    pub origin: GeoPoint,
    /// Sorted by cell id.
    pub cells: Vec<HexAggregate>,
}

impl HexLayer {
    pub fn to_map(&self) -> BTreeMap<HexCellId, f64> {
        self.cells.iter().map(|a| (a.cell, a.value)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSums {
    pub sums: Vec<f64>,
    pub count: usize,
}

/// Per-hex component-wise sums of point attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLayer {
    pub diameter: f64,
    pub origin: GeoPoint,
    pub arity: usize,
    pub cells: BTreeMap<HexCellId, PointSums>,
}

/// Bins every valid pixel by its centre and reduces per hexagon. Hexagons
/// without contributing pixels are omitted.
pub fn aggregate_raster(grid: &HexGrid, raster: &RasterGrid, stat: AggregateStat) -> Result<HexLayer> {
    let extent = raster.bbox();
    if !extent.intersects(&grid.bbox) {
        return Err(Error::DisjointExtents(format!(
            "raster {extent:?} vs hex grid {:?}",
            grid.bbox
        )));
    }
    let mut acc: BTreeMap<HexCellId, (f64, usize)> = BTreeMap::new();
    let (ox, oy, cs, rows) = (
        raster.origin_x(),
        raster.origin_y(),
        raster.cell_size(),
        raster.rows() as f64,
    );
    for (row, col, v) in raster.valid_cells() {
        let p = GeoPoint::new(
            ox + (col as f64 + 0.5) * cs,
            oy + (rows - row as f64 - 0.5) * cs,
        );
        let entry = acc.entry(grid.locate(p)).or_insert((0.0, 0));
        entry.0 += v;
        entry.1 += 1;
    }
    let cells = acc
        .into_iter()
        .map(|(cell, (sum, count))| HexAggregate {
            cell,
            value: match stat {
                AggregateStat::Sum => sum,
                AggregateStat::Mean => sum / count as f64,
            },
            contributing_count: count,
        })
        .collect();
    Ok(HexLayer {
        diameter: grid.diameter,
        origin: grid.origin,
        cells,
    })
}

/// Sums attribute vectors per hexagon. All vectors must share one arity.
pub fn aggregate_points(grid: &HexGrid, points: &[(GeoPoint, Vec<f64>)]) -> Result<PointLayer> {
    let arity = points.first().map_or(0, |(_, a)| a.len());
    let mut cells: BTreeMap<HexCellId, PointSums> = BTreeMap::new();
    for (i, (p, attrs)) in points.iter().enumerate() {
        if attrs.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "point {i} has {} attributes, expected {arity}",
                attrs.len()
            )));
        }
        let entry = cells.entry(grid.locate(*p)).or_insert_with(|| PointSums {
            sums: vec![0.0; arity],
            count: 0,
        });
        for (s, a) in entry.sums.iter_mut().zip(attrs) {
            *s += a;
        }
        entry.count += 1;
    }
    Ok(PointLayer {
        diameter: grid.diameter,
        origin: grid.origin,
        arity,
        cells,
    })
}

pub(crate) fn check_layer_grid(grid: &HexGrid, diameter: f64, origin: GeoPoint, what: &str) -> Result<()> {
    if grid.same_grid(diameter, origin) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{what} binned at diameter {diameter} origin ({}, {}), table grid is diameter {} origin ({}, {})",
            origin.x, origin.y, grid.diameter, grid.origin.x, grid.origin.y
        )))
    }
}

/// CSV with columns `q,r,value,count`.
pub fn write_aggregates_csv<W: std::io::Write>(layer: &HexLayer, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["q", "r", "value", "count"])?;
    for a in &layer.cells {
        w.write_record([
            a.cell.q.to_string(),
            a.cell.r.to_string(),
            a.value.to_string(),
            a.contributing_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// GeoJSON `FeatureCollection` of hexagon polygons in the grid's planar CRS.
/// Each feature carries `q`, `r` and the supplied properties.
pub fn geojson_polygons<'a, I>(grid: &HexGrid, cells: I) -> Value
where
    I: IntoIterator<Item = (HexCellId, Vec<(&'a str, f64)>)>,
{
    let features: Vec<Value> = cells
        .into_iter()
        .map(|(cell, props)| {
            let verts = grid.vertices(cell);
            let mut ring: Vec<[f64; 2]> = verts.iter().map(|p| [p.x, p.y]).collect();
            ring.push(ring[0]);
            let mut properties = serde_json::Map::new();
            properties.insert("q".into(), json!(cell.q));
            properties.insert("r".into(), json!(cell.r));
            for (k, v) in props {
                properties.insert(k.to_string(), json!(v));
            }
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": properties,
            })
        })
        .collect();
    json!({
        "type": "FeatureCollection",
        "crs_note": "coordinates are in the planar CRS of the input rasters (metres)",
        "hex_diameter": grid.diameter,
        "features": features,
    })
}
