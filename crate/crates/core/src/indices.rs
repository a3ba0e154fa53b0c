//! Thermal-band radiometry and normalized-difference spectral indices.
//!
//! The land-surface-temperature chain is: digital numbers to top-of-atmosphere
//! radiance, radiance to brightness temperature, NDVI to vegetation proportion,
//! vegetation proportion to emissivity, and finally the emissivity-corrected
//! surface temperature. Every step is a pure cell-wise transform; nodata cells
//! propagate unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterGrid;

/// Composite constant h·c/σ in metre·kelvin.
pub const DEFAULT_RHO_PLANCK: f64 = 1.438e-2;
/// Centre wavelength of the Landsat 8 TIRS band 10, in metres.
pub const DEFAULT_BAND10_WAVELENGTH: f64 = 10.895e-6;
pub const KELVIN_OFFSET: f64 = 273.15;

const EMISSIVITY_SLOPE: f64 = 0.004;
const EMISSIVITY_INTERCEPT: f64 = 0.986;

fn default_wavelength() -> f64 {
    DEFAULT_BAND10_WAVELENGTH
}

fn default_rho() -> f64 {
    DEFAULT_RHO_PLANCK
}

/// Scene-specific rescaling and thermal conversion constants.
///
/// `m_l`, `a_l`, `k1` and `k2` come from the scene metadata and have no
/// defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiometricConstants {
    pub m_l: f64,
    pub a_l: f64,
    pub k1: f64,
    pub k2: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength: f64,
    #[serde(default = "default_rho")]
    pub rho_planck: f64,
}

impl RadiometricConstants {
    pub fn new(m_l: f64, a_l: f64, k1: f64, k2: f64) -> Result<Self> {
        let c = Self {
            m_l,
            a_l,
            k1,
            k2,
            wavelength: DEFAULT_BAND10_WAVELENGTH,
            rho_planck: DEFAULT_RHO_PLANCK,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k1", self.k1),
            ("k2", self.k2),
            ("wavelength", self.wavelength),
            ("rho_planck", self.rho_planck),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !self.m_l.is_finite() || !self.a_l.is_finite() {
            return Err(Error::InvalidArgument("rescaling factors must be finite".into()));
        }
        Ok(())
    }
}

/// `L = M_L·Q_cal + A_L`.
pub fn toa_radiance(qcal: &RasterGrid, constants: &RadiometricConstants) -> Result<RasterGrid> {
    constants.validate()?;
    qcal.try_map(|row, col, q| {
        if q < 0.0 {
            return Err(Error::CellDomain {
                row,
                col,
                message: format!("negative digital number {q}"),
            });
        }
        Ok(Some(constants.m_l * q + constants.a_l))
    })
}

/// `T = K2 / ln(K1/L + 1)`, in kelvin.
pub fn brightness_temperature(
    radiance: &RasterGrid,
    constants: &RadiometricConstants,
) -> Result<RasterGrid> {
    constants.validate()?;
    radiance.try_map(|row, col, l| {
        if l <= 0.0 {
            return Err(Error::CellDomain {
                row,
                col,
                message: format!("radiance {l} must be > 0"),
            });
        }
        Ok(Some(constants.k2 / (constants.k1 / l + 1.0).ln()))
    })
}

/// `(a − b)/(a + b)`; cells where `a + b == 0` become nodata.
///
/// NDVI is `normalized_difference(nir, red)`, NDWI is
/// `normalized_difference(green, swir)`.
pub fn normalized_difference(band_a: &RasterGrid, band_b: &RasterGrid) -> Result<RasterGrid> {
    band_a.try_zip_map(band_b, |_, _, a, b| {
        let sum = a + b;
        if sum == 0.0 {
            Ok(None)
        } else {
            Ok(Some((a - b) / sum))
        }
    })
}

/// `Pv = [(NDVI − min)/(max − min)]²`, with the normalized position clamped to
/// `[0, 1]` so cells outside the range saturate at 0 or 1.
pub fn vegetation_proportion(ndvi: &RasterGrid, ndvi_min: f64, ndvi_max: f64) -> Result<RasterGrid> {
    if !(ndvi_max > ndvi_min) || !ndvi_min.is_finite() || !ndvi_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ndvi_max ({ndvi_max}) must exceed ndvi_min ({ndvi_min})"
        )));
    }
    let span = ndvi_max - ndvi_min;
    ndvi.try_map(|_, _, v| {
        let t = ((v - ndvi_min) / span).clamp(0.0, 1.0);
        Ok(Some(t * t))
    })
}

/// `ε = 0.004·Pv + 0.986`.
pub fn emissivity(pv: &RasterGrid) -> Result<RasterGrid> {
    pv.try_map(|row, col, p| {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::CellDomain {
                row,
                col,
                message: format!("vegetation proportion {p} outside [0, 1]"),
            });
        }
        Ok(Some(EMISSIVITY_SLOPE * p + EMISSIVITY_INTERCEPT))
    })
}

/// `LST = T / (1 + (λT/ρ)·ln ε)`, optionally converted to °C.
pub fn land_surface_temperature(
    bt: &RasterGrid,
    eps: &RasterGrid,
    constants: &RadiometricConstants,
    output_celsius: bool,
) -> Result<RasterGrid> {
    constants.validate()?;
    let scale = constants.wavelength / constants.rho_planck;
    bt.try_zip_map(eps, |row, col, t, e| {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::CellDomain {
                row,
                col,
                message: format!("emissivity {e} outside (0, 1]"),
            });
        }
        let lst = t / (1.0 + scale * t * e.ln());
        Ok(Some(if output_celsius { lst - KELVIN_OFFSET } else { lst }))
    })
}

/// Input bands for the full temperature and index chain.
pub struct SceneBands<'a> {
    pub thermal_dn: &'a RasterGrid,
    pub red: &'a RasterGrid,
    pub nir: &'a RasterGrid,
    pub green: &'a RasterGrid,
    pub swir: &'a RasterGrid,
}

#[derive(Debug, Clone)]
pub struct SceneIndices {
    pub lst: RasterGrid,
    pub ndvi: RasterGrid,
    pub ndwi: RasterGrid,
    pub ndvi_range: (f64, f64),
}

/// Runs the whole chain. `ndvi_range` overrides the scene NDVI extrema used
/// for the vegetation proportion.
pub fn compute_scene_indices(
    bands: &SceneBands<'_>,
    constants: &RadiometricConstants,
    ndvi_range: Option<(f64, f64)>,
    output_celsius: bool,
) -> Result<SceneIndices> {
    let radiance = toa_radiance(bands.thermal_dn, constants)?;
    let bt = brightness_temperature(&radiance, constants)?;
    let ndvi = normalized_difference(bands.nir, bands.red)?;
    let ndwi = normalized_difference(bands.green, bands.swir)?;
    let (lo, hi) = match ndvi_range {
        Some(r) => r,
        None => {
            let s = ndvi.stats()?;
            (s.min, s.max)
        }
    };
    let pv = vegetation_proportion(&ndvi, lo, hi)?;
    let eps = emissivity(&pv)?;
    let lst = land_surface_temperature(&bt, &eps, constants, output_celsius)?;
    Ok(SceneIndices {
        lst,
        ndvi,
        ndwi,
        ndvi_range: (lo, hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const ND: f64 = -9999.0;

    fn grid(values: &[f64]) -> RasterGrid {
        RasterGrid::new(1, values.len(), 0.0, 0.0, 30.0, ND, values.to_vec()).unwrap()
    }

    fn landsat() -> RadiometricConstants {
        RadiometricConstants::new(3.342e-4, 0.1, 774.8853, 1321.0789).unwrap()
    }

    #[test]
    fn radiance_examples() {
        let c = landsat();
        let out = toa_radiance(&grid(&[21000.0, 0.0, ND]), &c).unwrap();
        assert_relative_eq!(out.values()[0], 7.1182, epsilon = 1e-12);
        assert_eq!(out.values()[1], 0.1);
        assert_eq!(out.values()[2], ND);
    }

    #[test]
    fn brightness_temperature_examples() {
        let c = landsat();
        // Frozen from an independent evaluation of K2 / ln(K1/L + 1).
        let out = brightness_temperature(&grid(&[7.1182]), &c).unwrap();
        assert_relative_eq!(out.values()[0], 281.128209528992, epsilon = 1e-9);

        let l = c.k1 / (std::f64::consts::E - 1.0);
        let out = brightness_temperature(&grid(&[l]), &c).unwrap();
        assert_relative_eq!(out.values()[0], c.k2, max_relative = 1e-15);

        let err = brightness_temperature(&grid(&[1.0, 0.0]), &c).unwrap_err();
        assert!(matches!(err, Error::CellDomain { row: 0, col: 1, .. }));
    }

    #[test]
    fn normalized_difference_examples() {
        let a = grid(&[0.4, 0.5, 0.0, ND]);
        let b = grid(&[0.4, 0.3, 0.0, 0.2]);
        let out = normalized_difference(&a, &b).unwrap();
        assert_eq!(out.values()[0], 0.0);
        assert_relative_eq!(out.values()[1], 0.25, epsilon = 1e-15);
        assert_eq!(out.values()[2], ND);
        assert_eq!(out.values()[3], ND);
    }

    #[test]
    fn normalized_difference_rejects_mismatched_geometry() {
        let a = grid(&[0.4, 0.5]);
        let b = RasterGrid::new(2, 1, 0.0, 0.0, 30.0, ND, vec![0.1, 0.2]).unwrap();
        assert!(matches!(normalized_difference(&a, &b), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn vegetation_proportion_examples() {
        let out = vegetation_proportion(&grid(&[-0.2, 0.8, 0.3, -0.5, 0.9]), -0.2, 0.8).unwrap();
        assert_eq!(out.values()[0], 0.0);
        assert_eq!(out.values()[1], 1.0);
        assert_relative_eq!(out.values()[2], 0.25, epsilon = 1e-15);
        assert_eq!(out.values()[3], 0.0);
        assert_eq!(out.values()[4], 1.0);
        assert!(vegetation_proportion(&grid(&[0.0]), 0.5, 0.5).is_err());
    }

    #[test]
    fn emissivity_examples() {
        let out = emissivity(&grid(&[0.0, 1.0, 0.5])).unwrap();
        assert_relative_eq!(out.values()[0], 0.986, epsilon = 1e-15);
        assert_relative_eq!(out.values()[1], 0.990, epsilon = 1e-15);
        assert_relative_eq!(out.values()[2], 0.988, epsilon = 1e-15);
        assert!(emissivity(&grid(&[1.5])).is_err());
    }

    #[test]
    fn lst_examples() {
        let c = landsat();
        let out = land_surface_temperature(&grid(&[300.0]), &grid(&[1.0]), &c, false).unwrap();
        assert_eq!(out.values()[0], 300.0);

        let k = land_surface_temperature(&grid(&[300.0]), &grid(&[0.99]), &c, false).unwrap();
        assert_relative_eq!(k.values()[0], 300.6868860012843, epsilon = 1e-9);
        let cel = land_surface_temperature(&grid(&[300.0]), &grid(&[0.99]), &c, true).unwrap();
        assert!((cel.values()[0] - 27.54).abs() < 5e-3);

        assert!(land_surface_temperature(&grid(&[300.0]), &grid(&[0.0]), &c, false).is_err());
    }

    #[test]
    fn constants_validation() {
        assert!(RadiometricConstants::new(1.0, 0.0, 0.0, 1.0).is_err());
        let c: RadiometricConstants =
            serde_json::from_str(r#"{"m_l":1e-4,"a_l":0.1,"k1":774.8853,"k2":1321.0789}"#).unwrap();
        assert_eq!(c.wavelength, DEFAULT_BAND10_WAVELENGTH);
        assert_eq!(c.rho_planck, DEFAULT_RHO_PLANCK);
    }
}
