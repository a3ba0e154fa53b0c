//! Procedural demo scene: five Landsat-style bands, a population raster and
//! building records over a planted city with parks, reservoirs, a river and
//! a warm core.

use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{write_buildings, BuildingRecord};
use crate::indices::RadiometricConstants;
use crate::raster::{write_ascii_grid, GeoPoint, RasterGrid, DEFAULT_NODATA};

/// Landsat 8 band 10 scene constants.
pub const DEMO_M_L: f64 = 3.342e-4;
pub const DEMO_A_L: f64 = 0.1;
pub const DEMO_K1: f64 = 774.8853;
pub const DEMO_K2: f64 = 1321.0789;

/// File names written by [`DemoScene::write_to`].
pub const DEMO_FILES: DemoFiles = DemoFiles {
    red: "band_red.asc",
    nir: "band_nir.asc",
    green: "band_green.asc",
    swir: "band_swir.asc",
    thermal: "band_thermal.asc",
    population: "population.asc",
    buildings: "buildings.csv",
};

#[derive(Debug, Clone, Copy)]
pub struct DemoFiles {
    pub red: &'static str,
    pub nir: &'static str,
    pub green: &'static str,
    pub swir: &'static str,
    pub thermal: &'static str,
    pub population: &'static str,
    pub buildings: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoParams {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub origin: GeoPoint,
    pub buildings: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            rows: 1000,
            cols: 1000,
            cell_size: 10.0,
            origin: GeoPoint::new(20_000.0, 30_000.0),
            buildings: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoScene {
    pub red: RasterGrid,
    pub nir: RasterGrid,
    pub green: RasterGrid,
    pub swir: RasterGrid,
    pub thermal_dn: RasterGrid,
    pub population: RasterGrid,
    pub buildings: Vec<BuildingRecord>,
    pub constants: RadiometricConstants,
}

/// Smooth random field in roughly [-1, 1]: bilinear value noise with
/// smoothstep blending on a lattice `spacing` cells apart.
struct ValueNoise {
    spacing: f64,
    width: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut StdRng, rows: usize, cols: usize, spacing: usize) -> Self {
        let width = cols / spacing + 2;
        let height = rows / spacing + 2;
        let lattice = (0..width * height).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self {
            spacing: spacing as f64,
            width,
            lattice,
        }
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        let fy = row as f64 / self.spacing;
        let fx = col as f64 / self.spacing;
        let (iy, ix) = (fy as usize, fx as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
        let v = |y: usize, x: usize| self.lattice[y * self.width + x];
        let top = v(iy, ix) * (1.0 - tx) + v(iy, ix + 1) * tx;
        let bottom = v(iy + 1, ix) * (1.0 - tx) + v(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

struct Blob {
    row: f64,
    col: f64,
    radius: f64,
}

impl Blob {
    fn random(rng: &mut StdRng, rows: usize, cols: usize, radius: std::ops::Range<f64>) -> Self {
        Self {
            row: rng.random_range(0.0..rows as f64),
            col: rng.random_range(0.0..cols as f64),
            radius: rng.random_range(radius),
        }
    }

    fn weight(&self, row: usize, col: usize) -> f64 {
        let d2 = (row as f64 - self.row).powi(2) + (col as f64 - self.col).powi(2);
        (-d2 / (2.0 * self.radius * self.radius)).exp()
    }

    fn inside(&self, row: usize, col: usize) -> bool {
        (row as f64 - self.row).powi(2) + (col as f64 - self.col).powi(2) <= self.radius * self.radius
    }
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Inverse of the brightness-temperature relation, quantized to a DN.
fn thermal_dn(t: f64, c: &RadiometricConstants) -> f64 {
    let radiance = c.k1 / ((c.k2 / t).exp() - 1.0);
    ((radiance - c.a_l) / c.m_l).round()
}

impl DemoScene {
    pub fn generate(params: &DemoParams, seed: u64) -> Result<Self> {
        let DemoParams { rows, cols, .. } = *params;
        if rows < 8 || cols < 8 {
            return Err(Error::InvalidArgument(format!("demo scene {rows}x{cols} is too small")));
        }
        let constants = RadiometricConstants::new(DEMO_M_L, DEMO_A_L, DEMO_K1, DEMO_K2)?;
        let mut rng = StdRng::seed_from_u64(seed);
        let scale = rows.min(cols) as f64;

        let coarse = ValueNoise::new(&mut rng, rows, cols, (rows.min(cols) / 8).max(2));
        let fine = ValueNoise::new(&mut rng, rows, cols, (rows.min(cols) / 40).max(2));
        let heat_noise = ValueNoise::new(&mut rng, rows, cols, (rows.min(cols) / 16).max(2));
        let heat_texture = ValueNoise::new(&mut rng, rows, cols, (rows.min(cols) / 60).max(2));
        let heat_grain = ValueNoise::new(&mut rng, rows, cols, (rows.min(cols) / 120).max(2));
        let core = Blob {
            row: rows as f64 * rng.random_range(0.4..0.6),
            col: cols as f64 * rng.random_range(0.4..0.6),
            radius: scale * 0.28,
        };
        let parks: Vec<Blob> = (0..7)
            .map(|_| Blob::random(&mut rng, rows, cols, scale * 0.03..scale * 0.08))
            .collect();
        let reservoirs: Vec<Blob> = (0..3)
            .map(|_| Blob::random(&mut rng, rows, cols, scale * 0.02..scale * 0.05))
            .collect();
        let cloud = Blob::random(&mut rng, rows, cols, scale * 0.01..scale * 0.02);
        let river_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let river_row = |col: usize| {
            rows as f64 * (0.3 + 0.08 * (col as f64 / cols as f64 * 5.0 + river_phase).sin())
        };
        let river_half_width = (scale * 0.006).max(1.0);

        let n = rows * cols;
        let mut urban = vec![0.0; n];
        let mut water = vec![false; n];
        let (mut red, mut nir, mut green, mut swir) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut thermal = vec![0.0; n];
        let mut population = vec![0.0; n];
        let pixel_noise = Normal::new(0.0, 0.004).expect("valid sd");

        for row in 0..rows {
            for col in 0..cols {
                let i = row * cols + col;
                let u = (core.weight(row, col) + 0.15 * coarse.at(row, col)).clamp(0.0, 1.0);
                let park = parks.iter().map(|b| b.weight(row, col)).fold(0.0, f64::max);
                let v = (0.25 + 0.6 * park - 0.35 * u + 0.15 * fine.at(row, col)).clamp(0.0, 1.0);
                let is_water = reservoirs.iter().any(|b| b.inside(row, col))
                    || (row as f64 - river_row(col)).abs() <= river_half_width;
                urban[i] = u;
                water[i] = is_water;

                let (r, ni, g, s) = if is_water {
                    (0.03, 0.02, 0.07, 0.01)
                } else {
                    (
                        0.06 + 0.10 * u - 0.03 * v,
                        0.14 + 0.36 * v + 0.04 * u,
                        0.07 + 0.03 * u + 0.02 * v,
                        0.16 + 0.12 * u - 0.08 * v,
                    )
                };
                let mut jitter = || pixel_noise.sample(&mut rng);
                red[i] = round_to((r + jitter()).max(0.001), 1e-4);
                nir[i] = round_to((ni + jitter()).max(0.001), 1e-4);
                green[i] = round_to((g + jitter()).max(0.001), 1e-4);
                swir[i] = round_to((s + jitter()).max(0.001), 1e-4);

                thermal[i] = if cloud.inside(row, col) {
                    DEFAULT_NODATA
                } else {
                    let t = 296.0 + 7.0 * u - 6.0 * v - if is_water { 4.0 } else { 0.0 }
                        + 1.5 * heat_noise.at(row, col)
                        + 1.2 * heat_texture.at(row, col)
                        + 1.0 * heat_grain.at(row, col);
                    thermal_dn(t, &constants)
                };
                population[i] = if is_water {
                    DEFAULT_NODATA
                } else {
                    round_to((40.0 * u * (1.0 - 0.7 * park) + 2.0 * jitter()).max(0.0), 0.01)
                };
            }
        }

        let buildings = place_buildings(&mut rng, params, &urban, &water)?;
        let grid = |values| {
            RasterGrid::new(
                rows,
                cols,
                params.origin.x,
                params.origin.y,
                params.cell_size,
                DEFAULT_NODATA,
                values,
            )
        };
        Ok(Self {
            red: grid(red)?,
            nir: grid(nir)?,
            green: grid(green)?,
            swir: grid(swir)?,
            thermal_dn: grid(thermal)?,
            population: grid(population)?,
            buildings,
            constants,
        })
    }

    /// Writes every band, the population raster and the building CSV using
    /// the names in [`DEMO_FILES`].
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::path_io(dir, e))?;
        let f = DEMO_FILES;
        for (grid, name) in [
            (&self.red, f.red),
            (&self.nir, f.nir),
            (&self.green, f.green),
            (&self.swir, f.swir),
            (&self.thermal_dn, f.thermal),
            (&self.population, f.population),
        ] {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).map_err(|e| Error::path_io(&path, e))?;
            let mut sink = std::io::BufWriter::new(file);
            write_ascii_grid(grid, &mut sink)?;
            std::io::Write::flush(&mut sink).map_err(|e| Error::path_io(&path, e))?;
        }
        let path = dir.join(f.buildings);
        let file = std::fs::File::create(&path).map_err(|e| Error::path_io(&path, e))?;
        write_buildings(&self.buildings, std::io::BufWriter::new(file))
    }
}

/// Rejection-samples land pixels with probability tracking urban intensity.
fn place_buildings(
    rng: &mut StdRng,
    params: &DemoParams,
    urban: &[f64],
    water: &[bool],
) -> Result<Vec<BuildingRecord>> {
    let (rows, cols, cs) = (params.rows, params.cols, params.cell_size);
    let mut out = Vec::with_capacity(params.buildings);
    let mut attempts = 0usize;
    while out.len() < params.buildings {
        attempts += 1;
        if attempts > params.buildings * 1000 {
            return Err(Error::InvalidArgument("could not place demo buildings".into()));
        }
        let row = rng.random_range(0..rows);
        let col = rng.random_range(0..cols);
        let i = row * cols + col;
        if water[i] || rng.random::<f64>() > urban[i].powi(2) {
            continue;
        }
        let x = params.origin.x + (col as f64 + rng.random::<f64>()) * cs;
        let y = params.origin.y + ((rows - row - 1) as f64 + rng.random::<f64>()) * cs;
        let u = urban[i];
        let storeys = (3.0 + 35.0 * u * rng.random::<f64>()).round() as u32;
        let residential = rng.random_bool((0.55 + 0.3 * (1.0 - u)).min(0.95));
        let commercial = rng.random_bool(0.1 + 0.4 * u);
        let dwellings = if residential {
            storeys * rng.random_range(4..10)
        } else {
            0
        };
        let id = out.len() + 1;
        out.push(BuildingRecord {
            address_key: format!("BLK {id} DEMO AVE {}", id % 97 + 1),
            location: Some(GeoPoint::new(round_to(x, 0.01), round_to(y, 0.01))),
            height_storeys: storeys,
            dwelling_units: dwellings,
            residential_flag: residential as u8,
            commercial_flag: commercial as u8,
            market_hawker_flag: rng.random_bool(0.05) as u8,
            multistorey_carpark_flag: rng.random_bool(0.08) as u8,
            precinct_pavilion_flag: rng.random_bool(0.06) as u8,
            miscellaneous_flag: rng.random_bool(0.04) as u8,
        });
    }
    Ok(out)
}
