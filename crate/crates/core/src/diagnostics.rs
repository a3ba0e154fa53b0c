//! Residual spatial-autocorrelation diagnostics and the model-selection report.
//!
//! Moran's I uses the normality-assumption moments with `E[I] = −1/(n−1)`.
//! The LM-lag and LM-error score tests use OLS residuals and are referred to
//! χ²(1).

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::models::{annihilate, float_or_null, DesignMatrix, ModelFit, ModelKind, Significance};
use crate::weights::SpatialWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum Reference {
    Normal {
        #[serde(with = "float_or_null")]
        z: f64,
        expected: f64,
        #[serde(with = "float_or_null")]
        variance: f64,
    },
    ChiSquared {
        df: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticResult {
    pub statistic: f64,
    pub reference: Reference,
    pub p_value: f64,
    pub significant_at: Significance,
}

impl DiagnosticResult {
    fn new(statistic: f64, reference: Reference, p_value: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            reference,
            p_value,
            significant_at: Significance::from_p_value(p_value),
        }
    }
}

/// Diagnostics attached to one fitted model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub morans_i: Option<DiagnosticResult>,
    pub lm_lag: Option<DiagnosticResult>,
    pub lm_error: Option<DiagnosticResult>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}

/// Global Moran's I of a residual vector.
pub fn morans_i(residuals: &[f64], w: &SpatialWeights) -> Result<DiagnosticResult> {
    let n = w.n();
    check_len(n, residuals.len())?;
    let ete = dot(residuals, residuals);
    if !(ete > 0.0) {
        return Err(Error::ZeroVariance("residuals are identically zero".into()));
    }
    let s0 = w.s0();
    if !(s0 > 0.0) {
        return Err(Error::Weights("weights matrix has no links".into()));
    }
    let we = w.spatial_lag(residuals)?;
    let nf = n as f64;
    let i = nf / s0 * dot(residuals, &we) / ete;

    let expected = -1.0 / (nf - 1.0);
    let (s1, s2) = w.moran_sums();
    let variance =
        (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0) - expected * expected;
    // Degenerate layouts (n = 2) have a point-mass null distribution.
    let (z, p) = if variance > 1e-15 {
        let z = (i - expected) / variance.sqrt();
        (z, 2.0 * Normal::standard().sf(z.abs()))
    } else {
        (0.0, 1.0)
    };
    Ok(DiagnosticResult::new(
        i,
        Reference::Normal {
            z,
            expected,
            variance,
        },
        p,
    ))
}

fn ols_inputs<'a>(
    ols_fit: &'a ModelFit,
    design: &DesignMatrix,
    w: &SpatialWeights,
) -> Result<(&'a [f64], f64, f64)> {
    if ols_fit.kind != ModelKind::Ols {
        return Err(Error::InvalidArgument(format!(
            "LM tests need an OLS fit, got {}",
            ols_fit.kind
        )));
    }
    check_len(w.n(), design.n())?;
    check_len(w.n(), ols_fit.residuals.len())?;
    let e = ols_fit.residuals.as_slice();
    let ete = dot(e, e);
    if !(ete > 0.0) {
        return Err(Error::ZeroVariance("OLS residuals are identically zero".into()));
    }
    let (wtw, ww) = w.traces();
    Ok((e, ete / w.n() as f64, wtw + ww))
}

fn chi2_1(stat: f64) -> DiagnosticResult {
    let p = ChiSquared::new(1.0).expect("df = 1").sf(stat);
    DiagnosticResult::new(stat, Reference::ChiSquared { df: 1 }, p)
}

/// LM test for a spatially autocorrelated error.
pub fn lm_error_test(ols_fit: &ModelFit, design: &DesignMatrix, w: &SpatialWeights) -> Result<DiagnosticResult> {
    let (e, sigma2, t) = ols_inputs(ols_fit, design, w)?;
    let we = w.spatial_lag(e)?;
    let score = dot(e, &we) / sigma2;
    Ok(chi2_1(score * score / t))
}

/// LM test for an omitted spatially lagged dependent variable.
pub fn lm_lag_test(ols_fit: &ModelFit, design: &DesignMatrix, w: &SpatialWeights) -> Result<DiagnosticResult> {
    let (e, sigma2, t) = ols_inputs(ols_fit, design, w)?;
    let wy = w.spatial_lag(design.y().as_slice())?;
    let score = dot(e, &wy) / sigma2;
    let xb = design.x() * DVector::from_vec(ols_fit.beta());
    let wxb = DVector::from_vec(w.spatial_lag(xb.as_slice())?);
    let m_wxb = annihilate(design, &wxb)?;
    let d = m_wxb.norm_squared() / sigma2 + t;
    Ok(chi2_1(score * score / d))
}

/// One fitted model with its diagnostics, as fed to the selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub diameter: f64,
    pub fit: ModelFit,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCoefficient {
    pub name: String,
    pub estimate: f64,
    pub significance: Significance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub diameter: f64,
    pub model: ModelKind,
    pub n: usize,
    pub r2: f64,
    pub adjusted_r2: f64,
    #[serde(with = "float_or_null")]
    pub log_likelihood: f64,
    #[serde(with = "float_or_null")]
    pub aic: f64,
    pub morans_i: Option<DiagnosticResult>,
    pub lm_lag: Option<DiagnosticResult>,
    pub lm_error: Option<DiagnosticResult>,
    pub spatial_coefficient: Option<f64>,
    pub coefficients: Vec<ReportCoefficient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenModel {
    pub diameter: f64,
    pub model: ModelKind,
    pub adjusted_r2: f64,
    #[serde(with = "float_or_null")]
    pub aic: f64,
    pub spatial_coefficient: Option<f64>,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Ordered by diameter (largest first), then OLS, SAR, SEM.
    pub rows: Vec<ReportRow>,
    pub chosen: ChosenModel,
}

fn row_from(record: &FitRecord) -> ReportRow {
    let fit = &record.fit;
    ReportRow {
        diameter: record.diameter,
        model: fit.kind,
        n: fit.n,
        r2: fit.r2,
        adjusted_r2: fit.adjusted_r2,
        log_likelihood: fit.log_likelihood,
        aic: fit.aic,
        morans_i: record.diagnostics.morans_i,
        lm_lag: record.diagnostics.lm_lag,
        lm_error: record.diagnostics.lm_error,
        spatial_coefficient: fit.spatial_estimate(),
        coefficients: fit
            .coefficients
            .iter()
            .map(|c| ReportCoefficient {
                name: c.name.clone(),
                estimate: c.estimate,
                significance: c.significance,
            })
            .collect(),
    }
}

/// Priority: higher adjusted r², then lower AIC, then larger |spatial coef|.
fn preference(a: &ReportRow, b: &ReportRow) -> (Ordering, &'static str) {
    let by_r2 = a.adjusted_r2.total_cmp(&b.adjusted_r2);
    if by_r2 != Ordering::Equal {
        return (by_r2, "highest adjusted r2");
    }
    let by_aic = b.aic.total_cmp(&a.aic);
    if by_aic != Ordering::Equal {
        return (by_aic, "adjusted r2 tie broken by lower AIC");
    }
    let mag = |r: &ReportRow| r.spatial_coefficient.map_or(0.0, f64::abs);
    (
        mag(a).total_cmp(&mag(b)),
        "adjusted r2 and AIC tie broken by larger spatial coefficient",
    )
}

pub fn build_selection_report(fits: &[FitRecord]) -> Result<SelectionReport> {
    if fits.is_empty() {
        return Err(Error::Empty("no fits to report".into()));
    }
    let mut rows: Vec<ReportRow> = fits.iter().map(row_from).collect();
    rows.sort_by(|a, b| b.diameter.total_cmp(&a.diameter).then(a.model.cmp(&b.model)));
    if let Some(pair) = rows
        .windows(2)
        .find(|p| p[0].diameter == p[1].diameter && p[0].model == p[1].model)
    {
        return Err(Error::InvalidArgument(format!(
            "duplicate fit for diameter {} model {}",
            pair[0].diameter, pair[0].model
        )));
    }

    // Earliest row wins a complete tie.
    let mut best = 0;
    for i in 1..rows.len() {
        if preference(&rows[i], &rows[best]).0 == Ordering::Greater {
            best = i;
        }
    }
    let reason = match (0..rows.len())
        .filter(|&i| i != best)
        .max_by(|&i, &j| preference(&rows[i], &rows[j]).0)
    {
        None => "only fit",
        Some(runner_up) => match preference(&rows[best], &rows[runner_up]) {
            (Ordering::Equal, _) => "complete tie; first row in report order kept",
            (_, why) => why,
        },
    };
    let b = &rows[best];
    let chosen = ChosenModel {
        diameter: b.diameter,
        model: b.model,
        adjusted_r2: b.adjusted_r2,
        aic: b.aic,
        spatial_coefficient: b.spatial_coefficient,
        justification: reason.to_string(),
    };
    Ok(SelectionReport { rows, chosen })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map_or_else(String::new, |x| x.to_string())
}

/// Mantissa with two decimals and a signed two-digit exponent, e.g. `-9.69E+00`.
fn sci(v: f64) -> String {
    if !v.is_finite() {
        return "NA".into();
    }
    if v == 0.0 {
        return "0.00E+00".into();
    }
    let text = format!("{v:.2e}");
    let (mantissa, exp) = text.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mantissa}E{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

impl SelectionReport {
    /// Regressor names in first-appearance order across rows.
    pub fn variable_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for row in &self.rows {
            for c in &row.coefficients {
                if !names.contains(&c.name) {
                    names.push(c.name.clone());
                }
            }
        }
        names
    }

    fn is_chosen(&self, row: &ReportRow) -> bool {
        row.diameter == self.chosen.diameter && row.model == self.chosen.model
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let vars = self.variable_names();
        let mut w = csv::Writer::from_writer(sink);
        let mut header: Vec<String> = [
            "diameter",
            "model",
            "n",
            "r2",
            "adjusted_r2",
            "log_likelihood",
            "aic",
            "morans_i",
            "morans_i_z",
            "morans_i_p",
            "morans_i_significance",
            "lm_lag",
            "lm_lag_p",
            "lm_error",
            "lm_error_p",
            "spatial_coefficient",
            "chosen",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for v in &vars {
            header.push(v.clone());
            header.push(format!("{v}_significance"));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let moran_z = row.morans_i.and_then(|m| match m.reference {
                Reference::Normal { z, .. } => Some(z),
                Reference::ChiSquared { .. } => None,
            });
            let mut rec = vec![
                row.diameter.to_string(),
                row.model.to_string(),
                row.n.to_string(),
                row.r2.to_string(),
                row.adjusted_r2.to_string(),
                fmt_opt(Some(row.log_likelihood)),
                fmt_opt(Some(row.aic)),
                fmt_opt(row.morans_i.map(|m| m.statistic)),
                fmt_opt(moran_z),
                fmt_opt(row.morans_i.map(|m| m.p_value)),
                row.morans_i.map_or_else(String::new, |m| m.significant_at.label().to_string()),
                fmt_opt(row.lm_lag.map(|m| m.statistic)),
                fmt_opt(row.lm_lag.map(|m| m.p_value)),
                fmt_opt(row.lm_error.map(|m| m.statistic)),
                fmt_opt(row.lm_error.map(|m| m.p_value)),
                fmt_opt(row.spatial_coefficient),
                self.is_chosen(row).to_string(),
            ];
            for v in &vars {
                match row.coefficients.iter().find(|c| &c.name == v) {
                    Some(c) => {
                        rec.push(c.estimate.to_string());
                        rec.push(c.significance.label().to_string());
                    }
                    None => {
                        rec.push(String::new());
                        rec.push(String::new());
                    }
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text tables: model statistics, then coefficients with stars.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let cols: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("{}m {}", r.diameter, r.model))
            .collect();
        let width = cols.iter().map(String::len).max().unwrap_or(8).max(12) + 2;
        let label_width = self
            .variable_names()
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(24);

        let line = |out: &mut String, label: &str, cells: Vec<String>| {
            let _ = write!(out, "{label:<label_width$}");
            for c in cells {
                let _ = write!(out, "{c:>width$}");
            }
            out.push('\n');
        };
        line(&mut out, "", cols.clone());
        line(&mut out, "n", self.rows.iter().map(|r| r.n.to_string()).collect());
        line(&mut out, "r2", self.rows.iter().map(|r| format!("{:.3}", r.r2)).collect());
        line(&mut out, "adjusted r2", self.rows.iter().map(|r| format!("{:.3}", r.adjusted_r2)).collect());
        line(&mut out, "log-likelihood", self.rows.iter().map(|r| format!("{:.1}", r.log_likelihood)).collect());
        line(&mut out, "AIC", self.rows.iter().map(|r| format!("{:.1}", r.aic)).collect());
        line(&mut out, 
            "Moran's I (residuals)",
            self.rows
                .iter()
                .map(|r| {
                    r.morans_i.map_or("-".into(), |m| {
                        format!("{:.3}{}", m.statistic, m.significant_at.stars())
                    })
                })
                .collect(),
        );
        line(&mut out, 
            "LM test",
            self.rows
                .iter()
                .map(|r| {
                    let lm = match r.model {
                        ModelKind::Ols => None,
                        ModelKind::Sar => r.lm_lag,
                        ModelKind::Sem => r.lm_error,
                    };
                    lm.map_or("-".into(), |m| format!("{:.1}{}", m.statistic, m.significant_at.stars()))
                })
                .collect(),
        );
        line(&mut out, 
            "spatial coefficient",
            self.rows
                .iter()
                .map(|r| r.spatial_coefficient.map_or("-".into(), |c| format!("{c:.3}")))
                .collect(),
        );
        out.push('\n');
        for v in self.variable_names() {
            let cells = self
                .rows
                .iter()
                .map(|r| {
                    r.coefficients
                        .iter()
                        .find(|c| c.name == v)
                        .map_or("-".into(), |c| format!("{}{}", sci(c.estimate), c.significance.stars()))
                })
                .collect();
            line(&mut out, &v, cells);
        }
        let _ = writeln!(
            out,
            "\nsignificance: * 0.95, ** 0.99, *** 0.999\nselected: {}m {} ({})",
            self.chosen.diameter, self.chosen.model, self.chosen.justification
        );
        out
    }
}
