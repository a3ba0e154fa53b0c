//! Georeferenced single-band rasters and the ESRI ASCII Grid exchange format.
//!
//! Storage is row-major and north-up: `(row 0, col 0)` is the north-west cell
//! and the origin is the lower-left (south-west) corner of the grid.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel written when a grid file does not declare `NODATA_value`.
pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &GeoPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle in planar metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        let all_finite = [min_x, min_y, max_x, max_y].iter().all(|v| v.is_finite());
        if !all_finite || max_x <= min_x || max_y <= min_y {
            return Err(Error::InvalidArgument(format!(
                "degenerate bounding box ({min_x}, {min_y}) - ({max_x}, {max_y})"
            )));
        }
        Ok(Self {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_y < other.max_y
            && other.min_y < self.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub valid_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    rows: usize,
    cols: usize,
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    nodata: f64,
    values: Vec<f64>,
}

impl RasterGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidRaster(format!("empty grid {rows}x{cols}")));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidRaster(format!("cell size {cell_size} must be > 0")));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::InvalidRaster("non-finite origin".into()));
        }
        if !nodata.is_finite() {
            return Err(Error::InvalidRaster("nodata sentinel must be finite".into()));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidRaster(format!(
                "{} values for a {rows}x{cols} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRaster(format!(
                "non-finite value at row {}, col {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            origin_x,
            origin_y,
            cell_size,
            nodata,
            values,
        })
    }

    /// A grid with the same geometry and nodata sentinel but new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.origin_x,
            self.origin_y,
            self.cell_size,
            self.nodata,
            values,
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn origin_x(&self) -> f64 {
        self.origin_x
    }

    pub fn origin_y(&self) -> f64 {
        self.origin_y
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if row < self.rows && col < self.cols {
            let v = self.values[row * self.cols + col];
            (!self.is_nodata(v)).then_some(v)
        } else {
            None
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox {
            min_x: self.origin_x,
            min_y: self.origin_y,
            max_x: self.origin_x + self.cols as f64 * self.cell_size,
            max_y: self.origin_y + self.rows as f64 * self.cell_size,
        }
    }

    pub fn same_geometry(&self, other: &RasterGrid) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.origin_x == other.origin_x
            && self.origin_y == other.origin_y
            && self.cell_size == other.cell_size
    }

    pub fn ensure_same_geometry(&self, other: &RasterGrid) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{}x{} @ ({}, {}) cell {} vs {}x{} @ ({}, {}) cell {}",
                self.rows,
                self.cols,
                self.origin_x,
                self.origin_y,
                self.cell_size,
                other.rows,
                other.cols,
                other.origin_x,
                other.origin_y,
                other.cell_size
            )))
        }
    }

    /// Centre of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> Result<GeoPoint> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::OutOfBounds {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(GeoPoint {
            x: self.origin_x + (col as f64 + 0.5) * self.cell_size,
            y: self.origin_y + (self.rows as f64 - row as f64 - 0.5) * self.cell_size,
        })
    }

    /// Iterates `(row, col, value)` over the valid cells.
    pub fn valid_cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let cols = self.cols;
        self.values
            .iter()
            .enumerate()
            .filter(move |(_, v)| !self.is_nodata(**v))
            .map(move |(i, v)| (i / cols, i % cols, *v))
    }

    pub fn stats(&self) -> Result<GridStats> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut count = 0usize;
        for v in self.values.iter().copied().filter(|v| !self.is_nodata(*v)) {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            count += 1;
        }
        if count == 0 {
            return Err(Error::AllNodata);
        }
        // Rounding can push the mean a few ulps past a constant grid's value.
        let mean = (sum / count as f64).clamp(min, max);
        Ok(GridStats {
            min,
            max,
            mean,
            valid_count: count,
        })
    }

    /// Applies `f` to each valid cell; nodata cells stay nodata. `f` may
    /// return `None` to mark a cell nodata, or an error carrying the cell.
    pub fn try_map<F>(&self, mut f: F) -> Result<RasterGrid>
    where
        F: FnMut(usize, usize, f64) -> Result<Option<f64>>,
    {
        let mut out = Vec::with_capacity(self.values.len());
        for (i, &v) in self.values.iter().enumerate() {
            if self.is_nodata(v) {
                out.push(self.nodata);
                continue;
            }
            match f(i / self.cols, i % self.cols, v)? {
                Some(r) => out.push(r),
                None => out.push(self.nodata),
            }
        }
        self.with_values(out)
    }

    /// Cell-wise combination of two grids with identical geometry. A cell that
    /// is nodata in either input is nodata in the output.
    pub fn try_zip_map<F>(&self, other: &RasterGrid, mut f: F) -> Result<RasterGrid>
    where
        F: FnMut(usize, usize, f64, f64) -> Result<Option<f64>>,
    {
        self.ensure_same_geometry(other)?;
        let mut out = Vec::with_capacity(self.values.len());
        for (i, (&a, &b)) in self.values.iter().zip(&other.values).enumerate() {
            if self.is_nodata(a) || other.is_nodata(b) {
                out.push(self.nodata);
                continue;
            }
            match f(i / self.cols, i % self.cols, a, b)? {
                Some(r) => out.push(r),
                None => out.push(self.nodata),
            }
        }
        self.with_values(out)
    }
}

/// Free-function form of [`RasterGrid::cell_center`].
pub fn cell_center(grid: &RasterGrid, row: usize, col: usize) -> Result<GeoPoint> {
    grid.cell_center(row, col)
}

/// Free-function form of [`RasterGrid::stats`].
pub fn grid_stats(grid: &RasterGrid) -> Result<GridStats> {
    grid.stats()
}

#[derive(Default)]
struct Header {
    ncols: Option<usize>,
    nrows: Option<usize>,
    xll: Option<(f64, bool)>,
    yll: Option<(f64, bool)>,
    cellsize: Option<f64>,
    nodata: Option<f64>,
}

fn parse_number<T: std::str::FromStr>(token: &str, line: usize, what: &str) -> Result<T> {
    token.parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{token}`"),
    })
}

/// Parses an ESRI ASCII Grid. Header keywords are case-insensitive;
/// `xllcenter`/`yllcenter` are accepted and converted to corner form.
pub fn read_ascii_grid<R: BufRead>(source: R) -> Result<RasterGrid> {
    let mut header = Header::default();
    let mut values: Vec<f64> = Vec::new();
    let mut in_data = false;
    let mut last_line = 0;

    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let first = trimmed.split_whitespace().next().unwrap_or_default();
        let is_keyword = first.starts_with(|c: char| c.is_ascii_alphabetic())
            && !first.eq_ignore_ascii_case("nan")
            && !first.eq_ignore_ascii_case("inf");
        if !in_data && is_keyword {
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap_or_default().to_ascii_lowercase();
            let value = parts.next().ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("header `{key}` has no value"),
            })?;
            if parts.next().is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("header `{key}` has trailing tokens"),
                });
            }
            match key.as_str() {
                "ncols" => header.ncols = Some(parse_number(value, line_no, "ncols")?),
                "nrows" => header.nrows = Some(parse_number(value, line_no, "nrows")?),
                "xllcorner" => header.xll = Some((parse_number(value, line_no, "xllcorner")?, false)),
                "yllcorner" => header.yll = Some((parse_number(value, line_no, "yllcorner")?, false)),
                "xllcenter" => header.xll = Some((parse_number(value, line_no, "xllcenter")?, true)),
                "yllcenter" => header.yll = Some((parse_number(value, line_no, "yllcenter")?, true)),
                "cellsize" => header.cellsize = Some(parse_number(value, line_no, "cellsize")?),
                "nodata_value" => header.nodata = Some(parse_number(value, line_no, "NODATA_value")?),
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown header keyword `{key}`"),
                    })
                }
            }
            continue;
        }
        if !in_data {
            in_data = true;
            let missing: Vec<&str> = [
                ("ncols", header.ncols.is_none()),
                ("nrows", header.nrows.is_none()),
                ("xllcorner", header.xll.is_none()),
                ("yllcorner", header.yll.is_none()),
                ("cellsize", header.cellsize.is_none()),
            ]
            .iter()
            .filter(|(_, m)| *m)
            .map(|(k, _)| *k)
            .collect();
            if !missing.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("header missing {}", missing.join(", ")),
                });
            }
            let expected = header.ncols.unwrap_or(0) * header.nrows.unwrap_or(0);
            values.reserve(expected);
        }
        for token in trimmed.split_whitespace() {
            values.push(parse_number::<f64>(token, line_no, "value")?);
        }
    }

    let (Some(ncols), Some(nrows), Some((xll, x_center)), Some((yll, y_center)), Some(cellsize)) =
        (header.ncols, header.nrows, header.xll, header.yll, header.cellsize)
    else {
        return Err(Error::Parse {
            line: last_line,
            message: "incomplete header".into(),
        });
    };
    let expected = ncols * nrows;
    if values.len() != expected {
        return Err(Error::Parse {
            line: last_line,
            message: format!(
                "expected {expected} values ({nrows} rows x {ncols} cols), found {}",
                values.len()
            ),
        });
    }
    let origin_x = if x_center { xll - 0.5 * cellsize } else { xll };
    let origin_y = if y_center { yll - 0.5 * cellsize } else { yll };
    let nodata = header.nodata.unwrap_or(DEFAULT_NODATA);
    RasterGrid::new(nrows, ncols, origin_x, origin_y, cellsize, nodata, values).map_err(|e| {
        Error::Parse {
            line: last_line,
            message: e.to_string(),
        }
    })
}

/// Writes an ESRI ASCII Grid. Numbers use the shortest decimal form that
/// parses back to the identical `f64`, so a read after a write is bit-exact.
pub fn write_ascii_grid<W: Write>(grid: &RasterGrid, mut sink: W) -> Result<()> {
    writeln!(sink, "ncols {}", grid.cols)?;
    writeln!(sink, "nrows {}", grid.rows)?;
    writeln!(sink, "xllcorner {}", grid.origin_x)?;
    writeln!(sink, "yllcorner {}", grid.origin_y)?;
    writeln!(sink, "cellsize {}", grid.cell_size)?;
    writeln!(sink, "NODATA_value {}", grid.nodata)?;
    let mut line = String::with_capacity(grid.cols * 20);
    for row in grid.values.chunks(grid.cols) {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{v}").expect("writing to a String cannot fail");
        }
        line.push('\n');
        sink.write_all(line.as_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_ascii_grid_file(path: impl AsRef<std::path::Path>) -> Result<RasterGrid> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::path_io(path, e))?;
    read_ascii_grid(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RasterGrid> {
        read_ascii_grid(text.as_bytes())
    }

    #[test]
    fn parses_two_by_two() {
        let g = parse("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 30\n1 2\n3 4\n").unwrap();
        assert_eq!(g.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.get(0, 0), Some(1.0));
        assert_eq!(g.nodata(), DEFAULT_NODATA);
    }

    #[test]
    fn header_keywords_are_case_insensitive() {
        let g = parse("NCOLS 1\nNRows 1\nXLLCORNER 5\nyllCorner 6\nCELLSIZE 2\nnodata_value -1\n7\n")
            .unwrap();
        assert_eq!(g.origin_x(), 5.0);
        assert_eq!(g.nodata(), -1.0);
    }

    #[test]
    fn center_registration_converts_to_corner() {
        let g = parse("ncols 1\nnrows 1\nxllcenter 15\nyllcenter 15\ncellsize 30\n1\n").unwrap();
        assert_eq!((g.origin_x(), g.origin_y()), (0.0, 0.0));
    }

    #[test]
    fn value_count_mismatch_reports_line() {
        let err = parse("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 30\n1 2\n3\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 7);
                assert!(message.contains("expected 4"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_token_reports_line() {
        let err = parse("ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 30\n1 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 6, .. }), "{err:?}");
    }

    #[test]
    fn malformed_header_reports_line() {
        let err = parse("ncols two\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse("ncols 1\nnrows 1\ncellsize 1\n5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn nodata_cells_are_excluded_from_stats() {
        let g = parse(
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 -9999\n",
        )
        .unwrap();
        let s = g.stats().unwrap();
        assert_eq!((s.min, s.max, s.mean, s.valid_count), (1.0, 3.0, 2.0, 3));
    }

    #[test]
    fn stats_of_constant_and_empty_grids() {
        let g = RasterGrid::new(3, 3, 0.0, 0.0, 1.0, -1.0, vec![0.1; 9]).unwrap();
        let s = g.stats().unwrap();
        assert_eq!((s.min, s.max, s.mean), (0.1, 0.1, 0.1));
        let g = RasterGrid::new(1, 2, 0.0, 0.0, 1.0, -1.0, vec![-1.0; 2]).unwrap();
        assert!(matches!(g.stats(), Err(Error::AllNodata)));
    }

    #[test]
    fn single_cell_writes_single_data_line() {
        let g = RasterGrid::new(1, 1, 0.0, 0.0, 30.0, -9999.0, vec![5.0]).unwrap();
        let mut out = Vec::new();
        write_ascii_grid(&g, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().last(), Some("5"));
    }

    #[test]
    fn nodata_token_is_emitted() {
        let g = RasterGrid::new(1, 2, 0.0, 0.0, 30.0, -9999.0, vec![1.5, -9999.0]).unwrap();
        let mut out = Vec::new();
        write_ascii_grid(&g, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("NODATA_value -9999\n"));
        assert!(text.ends_with("1.5 -9999\n"));
    }

    #[test]
    fn cell_centers() {
        let g = RasterGrid::new(1, 1, 0.0, 0.0, 30.0, -9999.0, vec![0.0]).unwrap();
        assert_eq!(g.cell_center(0, 0).unwrap(), GeoPoint::new(15.0, 15.0));
        let g = RasterGrid::new(2, 2, 0.0, 0.0, 100.0, -9999.0, vec![0.0; 4]).unwrap();
        assert_eq!(g.cell_center(0, 1).unwrap(), GeoPoint::new(150.0, 150.0));
        assert!(matches!(g.cell_center(5, 0), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        assert!(RasterGrid::new(2, 2, 0.0, 0.0, 0.0, -1.0, vec![0.0; 4]).is_err());
        assert!(RasterGrid::new(2, 2, 0.0, 0.0, 1.0, -1.0, vec![0.0; 3]).is_err());
        assert!(RasterGrid::new(1, 1, 0.0, 0.0, 1.0, -1.0, vec![f64::NAN]).is_err());
    }
}
