//! Pipeline configuration: one JSON document.
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uhi_core::features::REGRESSORS;
use uhi_core::{ModelKind, RadiometricConstants};

use crate::error::CliError;

pub const DEFAULT_DIAMETERS: [f64; 6] = [600.0, 500.0, 480.0, 400.0, 300.0, 200.0];

/// Environment variable that overrides the geocode cache directory.
pub const CACHE_DIR_ENV: &str = "UHI_GEOCODE_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub red: PathBuf,
    pub nir: PathBuf,
    pub green: PathBuf,
    pub swir: PathBuf,
    pub thermal: PathBuf,
    pub population: PathBuf,
    pub buildings: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeocodeSettings {
    pub base_url: String,
    #[serde(default = "default_query_param")]
    pub query_param: String,
    /// Requests per second across all workers.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_query_param() -> String {
    "searchVal".into()
}
fn default_rate_limit() -> f64 {
    1.0
}
fn default_concurrency() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_timeout() -> f64 {
    10.0
}
fn default_diameters() -> Vec<f64> {
    DEFAULT_DIAMETERS.to_vec()
}
fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub constants: RadiometricConstants,
    #[serde(default = "default_diameters")]
    pub diameters: Vec<f64>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    /// Subset of the regressor columns; all of them when absent.
    #[serde(default)]
    pub regressors: Option<Vec<String>>,
    /// Overrides the scene NDVI extrema used for the vegetation proportion.
    #[serde(default)]
    pub ndvi_range: Option<(f64, f64)>,
    /// LST in °C rather than kelvin.
    #[serde(default = "default_true")]
    pub celsius: bool,
    #[serde(default)]
    pub geocode: Option<GeocodeSettings>,
    pub output_dir: PathBuf,
    /// Seeds the demo generator; the pipeline itself draws no random numbers.
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    /// Parses, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [
            &mut i.red,
            &mut i.nir,
            &mut i.green,
            &mut i.swir,
            &mut i.thermal,
            &mut i.population,
            &mut i.buildings,
            &mut self.output_dir,
        ] {
            fix(p);
        }
        if let Some(dir) = self.geocode.as_mut().and_then(|g| g.cache_dir.as_mut()) {
            fix(dir);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let i = &self.inputs;
        for (name, p) in [
            ("red", &i.red),
            ("nir", &i.nir),
            ("green", &i.green),
            ("swir", &i.swir),
            ("thermal", &i.thermal),
            ("population", &i.population),
            ("buildings", &i.buildings),
        ] {
            if !p.is_file() {
                return Err(CliError::config(format!("{name} input {} does not exist", p.display())));
            }
        }
        self.constants
            .validate()
            .map_err(|e| CliError::config(format!("constants: {e}")))?;
        if self.diameters.is_empty() {
            return Err(CliError::config("no hex diameters configured"));
        }
        for (n, d) in self.diameters.iter().enumerate() {
            if !(*d > 0.0 && d.is_finite()) {
                return Err(CliError::config(format!("diameter {d} must be > 0")));
            }
            if self.diameters[..n].contains(d) {
                return Err(CliError::config(format!("diameter {d} listed twice")));
            }
        }
        if self.models.is_empty() {
            return Err(CliError::config("no model kinds configured"));
        }
        if let Some(names) = &self.regressors {
            if names.is_empty() {
                return Err(CliError::config("regressor list is empty"));
            }
            if let Some(bad) = names.iter().find(|n| !REGRESSORS.contains(&n.as_str())) {
                return Err(CliError::config(format!(
                    "unknown regressor `{bad}`; expected one of {REGRESSORS:?}"
                )));
            }
        }
        if let Some((lo, hi)) = self.ndvi_range {
            if !(lo < hi) {
                return Err(CliError::config(format!("ndvi_range ({lo}, {hi}) is empty")));
            }
        }
        if let Some(g) = &self.geocode {
            if g.base_url.is_empty() {
                return Err(CliError::config("geocode.base_url is empty"));
            }
            if !(g.rate_limit > 0.0) || g.max_concurrency == 0 || !(g.timeout_seconds > 0.0) {
                return Err(CliError::config(
                    "geocode rate_limit, max_concurrency and timeout_seconds must be > 0",
                ));
            }
        }
        Ok(())
    }

    pub fn regressors(&self) -> Vec<String> {
        self.regressors
            .clone()
            .unwrap_or_else(|| REGRESSORS.iter().map(|s| s.to_string()).collect())
    }

    /// Environment override, then the configured directory, then a folder
    /// in the output directory.
    pub fn cache_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(dir);
        }
        self.geocode
            .as_ref()
            .and_then(|g| g.cache_dir.clone())
            .unwrap_or_else(|| self.output_dir.join("geocode_cache"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_inputs(dir: &Path) {
        for name in ["r", "n", "g", "s", "t", "p", "b"] {
            std::fs::write(dir.join(name), "").unwrap();
        }
    }

    fn doc() -> serde_json::Value {
        serde_json::json!({
            "inputs": {"red": "r", "nir": "n", "green": "g", "swir": "s",
                       "thermal": "t", "population": "p", "buildings": "b"},
            "constants": {"m_l": 3.342e-4, "a_l": 0.1, "k1": 774.8853, "k2": 1321.0789},
            "output_dir": "out"
        })
    }

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        let path = dir.path().join("config.json");
        std::fs::write(&path, doc().to_string()).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.diameters, DEFAULT_DIAMETERS.to_vec());
        assert_eq!(cfg.models, ModelKind::ALL.to_vec());
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.regressors().len(), 11);
        assert!(cfg.celsius);
    }

    #[test]
    fn missing_thermal_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        std::fs::remove_file(dir.path().join("t")).unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, doc().to_string()).unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("thermal"), "{err}");
    }

    #[test]
    fn rejects_bad_diameters_and_regressors() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        let path = dir.path().join("config.json");
        for (key, value) in [
            ("diameters", serde_json::json!([600, -1])),
            ("diameters", serde_json::json!([600, 600])),
            ("regressors", serde_json::json!(["ndvi", "albedo"])),
        ] {
            let mut d = doc();
            d[key] = value;
            std::fs::write(&path, d.to_string()).unwrap();
            assert_eq!(PipelineConfig::load(&path).unwrap_err().exit_code(), 2);
        }
    }
}
