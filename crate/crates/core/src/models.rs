//! OLS, spatial lag (SAR) and spatial error (SEM) regressions.
//!
//! Both spatial models are fitted by maximum likelihood. The likelihood is
//! concentrated on the spatial coefficient, which is then found by a bounded
//! 1-D search over the feasible interval derived from the eigenvalues of `W`.
//! Standard errors come from a central-difference Hessian of the full
//! log-likelihood in `(β, coefficient, σ²)`.
//!
//! Residuals reported for the spatial models are the innovations `ε`: for SAR
//! `y − ρWy − Xβ`, for SEM `(I − λW)(y − Xβ)`. For SEM the structural residual
//! `y − Xβ` is the autocorrelated error `U`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::optim::maximize_scalar;
use crate::weights::SpatialWeights;

/// Final bracket width of the spatial-coefficient search.
pub const COEFFICIENT_TOLERANCE: f64 = 1e-8;
/// Relative central-difference step for the numerical Hessian.
pub const HESSIAN_STEP: f64 = 1e-5;
/// The search stays this far inside the open feasible interval.
const BOUNDARY_MARGIN: f64 = 1e-6;
/// Scaled `|R_ii|` below this marks a column as collinear.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Ols,
    Sar,
    Sem,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ols, ModelKind::Sar, ModelKind::Sem];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Ols => "OLS",
            ModelKind::Sar => "SAR",
            ModelKind::Sem => "SEM",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OLS" => Ok(ModelKind::Ols),
            "SAR" | "LAG" => Ok(ModelKind::Sar),
            "SEM" | "ERROR" => Ok(ModelKind::Sem),
            _ => Err(Error::InvalidArgument(format!("unknown model kind `{s}`"))),
        }
    }
}

/// Highest confidence level at which a p-value is significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Significance {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "0.95")]
    P95,
    #[serde(rename = "0.99")]
    P99,
    #[serde(rename = "0.999")]
    P999,
}

impl Significance {
    pub fn from_p_value(p: f64) -> Self {
        if p < 0.001 {
            Significance::P999
        } else if p < 0.01 {
            Significance::P99
        } else if p < 0.05 {
            Significance::P95
        } else {
            Significance::None
        }
    }

    pub fn stars(&self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::P95 => "*",
            Significance::P99 => "**",
            Significance::P999 => "***",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Significance::None => "none",
            Significance::P95 => "0.95",
            Significance::P99 => "0.99",
            Significance::P999 => "0.999",
        }
    }
}

/// Serde adapter writing non-finite floats as `null` and reading `null` back
/// as NaN, so fit documents stay valid JSON.
pub(crate) mod float_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl DesignMatrix {
    /// `columns` are the regressors without the intercept, one `Vec` per
    /// column; a leading column of ones is added.
    pub fn new(names: Vec<String>, columns: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let n = response.len();
        let k = columns.len();
        if names.len() != k {
            return Err(Error::InvalidArgument(format!("{} names for {k} columns", names.len())));
        }
        if let Some(c) = columns.iter().position(|c| c.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: columns[c].len(),
            });
        }
        if n <= k + 1 {
            return Err(Error::InvalidArgument(format!(
                "{n} observations cannot support {k} regressors plus intercept"
            )));
        }
        if response.iter().chain(columns.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design contains non-finite values".into()));
        }
        let x = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });
        Ok(Self {
            names,
            x,
            y: DVector::from_vec(response),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Regressors excluding the intercept.
    pub fn k(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Coefficient names including the leading `intercept`.
    pub fn coefficient_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string()).chain(self.names.iter().cloned()).collect()
    }

    /// Same design with a different response.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Self> {
        if response.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                actual: response.len(),
            });
        }
        Ok(Self {
            names: self.names.clone(),
            x: self.x.clone(),
            y: DVector::from_vec(response),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    #[serde(with = "float_or_null")]
    pub std_error: f64,
    /// t statistic for OLS, z statistic for the ML fits.
    #[serde(with = "float_or_null")]
    pub statistic: f64,
    #[serde(with = "float_or_null")]
    pub p_value: f64,
    pub significance: Significance,
}

impl Coefficient {
    fn new(name: String, estimate: f64, std_error: f64, p_of: impl Fn(f64) -> f64) -> Self {
        let statistic = estimate / std_error;
        let p_value = if std_error == 0.0 {
            if estimate == 0.0 {
                1.0
            } else {
                0.0
            }
        } else if statistic.is_finite() {
            p_of(statistic.abs())
        } else {
            f64::NAN
        };
        Self {
            name,
            estimate,
            std_error,
            statistic,
            p_value,
            significance: if p_value.is_nan() {
                Significance::None
            } else {
                Significance::from_p_value(p_value)
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub kind: ModelKind,
    pub n: usize,
    /// Regressors excluding the intercept.
    pub k: usize,
    /// Intercept first.
    pub coefficients: Vec<Coefficient>,
    /// `rho` for SAR, `lambda` for SEM.
    pub spatial_coefficient: Option<Coefficient>,
    pub sigma2: f64,
    #[serde(with = "float_or_null")]
    pub log_likelihood: f64,
    #[serde(with = "float_or_null")]
    pub aic: f64,
    pub param_count: usize,
    /// R² for OLS; squared correlation of fitted and observed for SAR/SEM.
    pub r2: f64,
    pub adjusted_r2: f64,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
}

impl ModelFit {
    pub fn beta(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }

    pub fn spatial_estimate(&self) -> Option<f64> {
        self.spatial_coefficient.as_ref().map(|c| c.estimate)
    }
}

/// `2·param_count − 2·lnL`; `param_count` counts the intercept and the
/// spatial coefficient but not σ².
pub fn aic(fit: &ModelFit) -> f64 {
    2.0 * fit.param_count as f64 - 2.0 * fit.log_likelihood
}

/// Column-scaled thin QR of a design, reused across right-hand sides.
struct LeastSquares {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    scale: DVector<f64>,
}

impl LeastSquares {
    fn new(x: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        let scale = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.norm()));
        let mut xs = x.clone();
        for (j, s) in scale.iter().enumerate() {
            if *s > 0.0 {
                xs.column_mut(j).unscale_mut(*s);
            }
        }
        let qr = xs.qr();
        let r = qr.r();
        let max_diag = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let collinear: Vec<String> = (0..x.ncols())
            .filter(|&j| scale[j] == 0.0 || r[(j, j)].abs() <= RANK_TOLERANCE * max_diag)
            .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("column {j}")))
            .collect();
        if !collinear.is_empty() {
            return Err(Error::RankDeficient { columns: collinear });
        }
        Ok(Self {
            q: qr.q(),
            r,
            scale,
        })
    }

    /// Returns `(β, residuals)` for response `y`.
    fn solve(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let qty = self.q.tr_mul(y);
        let bs = self
            .r
            .solve_upper_triangular(&qty)
            .expect("R has a nonzero diagonal after the rank check");
        let beta = bs.component_div(&self.scale);
        let resid = y - &self.q * qty;
        (beta, resid)
    }

    /// `(XᵀX)⁻¹` for the unscaled design.
    fn xtx_inverse(&self) -> DMatrix<f64> {
        let p = self.r.ncols();
        let r_inv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .expect("R has a nonzero diagonal after the rank check");
        let mut inv = &r_inv * r_inv.transpose();
        for i in 0..p {
            for j in 0..p {
                inv[(i, j)] /= self.scale[i] * self.scale[j];
            }
        }
        inv
    }
}

/// `M·v = v − X(XᵀX)⁻¹Xᵀv`, the residual of regressing `v` on the design.
pub(crate) fn annihilate(design: &DesignMatrix, v: &DVector<f64>) -> Result<DVector<f64>> {
    let ls = LeastSquares::new(design.x(), &design.coefficient_names())?;
    Ok(ls.solve(v).1)
}

fn gaussian_log_likelihood(n: f64, sigma2: f64) -> f64 {
    -0.5 * n * (2.0 * PI * sigma2).ln() - 0.5 * n
}

/// Squared Pearson correlation; 0 when either side has no variance.
fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let scale_a: f64 = a.iter().map(|v| v * v).sum();
    let scale_b: f64 = b.iter().map(|v| v * v).sum();
    if saa <= 1e-24 * scale_a || sbb <= 1e-24 * scale_b || saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    ((sab * sab) / (saa * sbb)).clamp(0.0, 1.0)
}

fn adjusted(r2: f64, n: usize, params: usize) -> f64 {
    if r2 == 0.0 && n <= params {
        return 0.0;
    }
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - params as f64)
}

fn t_p_value(df: f64) -> impl Fn(f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    move |t| (2.0 * dist.sf(t)).min(1.0)
}

fn z_p_value(z: f64) -> f64 {
    let dist = Normal::standard();
    (2.0 * dist.sf(z)).min(1.0)
}

pub fn fit_ols(design: &DesignMatrix) -> Result<ModelFit> {
    let names = design.coefficient_names();
    let ls = LeastSquares::new(design.x(), &names)?;
    let (beta, resid) = ls.solve(design.y());
    let n = design.n();
    let k = design.k();
    let sse = resid.norm_squared();
    let sigma2_ml = sse / n as f64;
    let df = (n - k - 1) as f64;
    let s2 = sse / df;
    let cov = ls.xtx_inverse() * s2;

    let y = design.y();
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let degenerate = sst <= 1e-24 * y.norm_squared() || sst == 0.0;
    let (r2, adjusted_r2) = if degenerate {
        (0.0, 0.0)
    } else {
        let r2 = 1.0 - sse / sst;
        (r2, 1.0 - (1.0 - r2) * (n as f64 - 1.0) / df)
    };

    let p_of = t_p_value(df);
    let coefficients = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| Coefficient::new(name, beta[j], cov[(j, j)].max(0.0).sqrt(), &p_of))
        .collect();
    let log_likelihood = gaussian_log_likelihood(n as f64, sigma2_ml);
    let param_count = k + 1;
    let fitted: Vec<f64> = (y - &resid).iter().copied().collect();
    let mut fit = ModelFit {
        kind: ModelKind::Ols,
        n,
        k,
        coefficients,
        spatial_coefficient: None,
        sigma2: sigma2_ml,
        log_likelihood,
        aic: 0.0,
        param_count,
        r2,
        adjusted_r2,
        residuals: resid.iter().copied().collect(),
        fitted,
    };
    fit.aic = aic(&fit);
    Ok(fit)
}

fn check_aligned(design: &DesignMatrix, w: &SpatialWeights) -> Result<()> {
    if design.n() != w.n() {
        return Err(Error::LengthMismatch {
            expected: w.n(),
            actual: design.n(),
        });
    }
    if design.n() <= design.k() + 2 {
        return Err(Error::InvalidArgument(format!(
            "{} observations cannot support {} regressors, intercept and a spatial coefficient",
            design.n(),
            design.k()
        )));
    }
    Ok(())
}

fn full_log_likelihood(n: usize, log_det: f64, sse: f64, sigma2: f64) -> f64 {
    if !(sigma2 > 0.0) {
        return f64::NAN;
    }
    -0.5 * n as f64 * (2.0 * PI * sigma2).ln() + log_det - sse / (2.0 * sigma2)
}

/// Full SAR log-likelihood `lnL(β, ρ, σ²)`.
pub fn sar_log_likelihood(
    design: &DesignMatrix,
    w: &SpatialWeights,
    beta: &[f64],
    rho: f64,
    sigma2: f64,
) -> Result<f64> {
    check_aligned(design, w)?;
    let wy = DVector::from_vec(w.spatial_lag(design.y().as_slice())?);
    sar_log_likelihood_with_lag(design, w, &wy, beta, rho, sigma2)
}

fn sar_log_likelihood_with_lag(
    design: &DesignMatrix,
    w: &SpatialWeights,
    wy: &DVector<f64>,
    beta: &[f64],
    rho: f64,
    sigma2: f64,
) -> Result<f64> {
    let log_det = w.log_det_factor(rho)?;
    let b = DVector::from_column_slice(beta);
    let e = design.y() - wy * rho - design.x() * b;
    Ok(full_log_likelihood(design.n(), log_det, e.norm_squared(), sigma2))
}

/// Full SEM log-likelihood `lnL(β, λ, σ²)`.
pub fn sem_log_likelihood(
    design: &DesignMatrix,
    w: &SpatialWeights,
    beta: &[f64],
    lambda: f64,
    sigma2: f64,
) -> Result<f64> {
    check_aligned(design, w)?;
    let b = DVector::from_column_slice(beta);
    let u = design.y() - design.x() * b;
    let wu = DVector::from_vec(w.spatial_lag(u.as_slice())?);
    let log_det = w.log_det_factor(lambda)?;
    let e = u - wu * lambda;
    Ok(full_log_likelihood(design.n(), log_det, e.norm_squared(), sigma2))
}

fn search_interval(w: &SpatialWeights) -> (f64, f64) {
    let (lo, hi) = w.feasible_interval();
    (lo + BOUNDARY_MARGIN, hi - BOUNDARY_MARGIN)
}

/// Maximizes a concentrated log-likelihood over the feasible interval.
/// Returns `None` when `W` has no links (the likelihood is flat in the
/// coefficient).
fn optimize_coefficient<F>(w: &SpatialWeights, model: ModelKind, f: F) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    if w.s0() == 0.0 {
        return Ok(None);
    }
    let (lo, hi) = search_interval(w);
    let opt = maximize_scalar(f, lo, hi, COEFFICIENT_TOLERANCE)?;
    let edge = 10.0 * COEFFICIENT_TOLERANCE;
    if opt.argmax - lo < edge || hi - opt.argmax < edge {
        return Err(Error::NonConvergence(format!(
            "{model} coefficient search hit the feasible boundary at {:.9} (interval {lo:.6}..{hi:.6})",
            opt.argmax
        )));
    }
    Ok(Some(opt.argmax))
}

fn numerical_hessian<F>(f: F, theta: &[f64], steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let p = theta.len();
    let mut h = DMatrix::zeros(p, p);
    let f0 = f(theta)?;
    let mut t = theta.to_vec();
    let eval = |t: &mut Vec<f64>, moves: &[(usize, f64)]| -> Result<f64> {
        for &(i, d) in moves {
            t[i] += d;
        }
        let v = f(t);
        for &(i, d) in moves {
            t[i] -= d;
        }
        v
    };
    for i in 0..p {
        let hi = steps[i];
        let fp = eval(&mut t, &[(i, hi)])?;
        let fm = eval(&mut t, &[(i, -hi)])?;
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let fpp = eval(&mut t, &[(i, hi), (j, hj)])?;
            let fpm = eval(&mut t, &[(i, hi), (j, -hj)])?;
            let fmp = eval(&mut t, &[(i, -hi), (j, hj)])?;
            let fmm = eval(&mut t, &[(i, -hi), (j, -hj)])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Standard errors from `(−H)⁻¹`; NaN where the Hessian is not negative
/// definite.
fn hessian_std_errors(h: &DMatrix<f64>) -> Vec<f64> {
    let neg = -h.clone();
    match neg.cholesky() {
        Some(chol) => {
            let cov = chol.inverse();
            (0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect()
        }
        None => {
            log::warn!("log-likelihood Hessian is not negative definite; standard errors unavailable");
            vec![f64::NAN; h.nrows()]
        }
    }
}

fn hessian_steps(theta: &[f64]) -> Vec<f64> {
    let last = theta.len() - 1;
    theta
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if i == last {
                // σ² > 0; a purely relative step keeps σ² ± h positive.
                HESSIAN_STEP * v.abs()
            } else {
                HESSIAN_STEP * v.abs().max(1.0)
            }
        })
        .collect()
}

struct SpatialEstimate {
    kind: ModelKind,
    coef: f64,
    beta: DVector<f64>,
    innovations: DVector<f64>,
    std_errors: Vec<f64>,
}

fn finish_spatial_fit(design: &DesignMatrix, est: SpatialEstimate, log_likelihood: f64) -> ModelFit {
    let n = design.n();
    let k = design.k();
    let sigma2 = est.innovations.norm_squared() / n as f64;
    let names = design.coefficient_names();
    let coefficients = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| Coefficient::new(name, est.beta[j], est.std_errors[j], z_p_value))
        .collect();
    let coef_name = match est.kind {
        ModelKind::Sar => "rho",
        _ => "lambda",
    };
    let spatial = Coefficient::new(coef_name.into(), est.coef, est.std_errors[k + 1], z_p_value);
    let residuals: Vec<f64> = est.innovations.iter().copied().collect();
    let fitted: Vec<f64> = design.y().iter().zip(&residuals).map(|(y, e)| y - e).collect();
    let r2 = squared_correlation(&fitted, design.y().as_slice());
    let param_count = k + 2;
    let mut fit = ModelFit {
        kind: est.kind,
        n,
        k,
        coefficients,
        spatial_coefficient: Some(spatial),
        sigma2,
        log_likelihood,
        aic: 0.0,
        param_count,
        r2,
        adjusted_r2: adjusted(r2, n, param_count),
        residuals,
        fitted,
    };
    fit.aic = aic(&fit);
    fit
}

/// Spatial lag model `y = ρWy + Xβ + ε`.
pub fn fit_sar(design: &DesignMatrix, w: &SpatialWeights) -> Result<ModelFit> {
    check_aligned(design, w)?;
    let n = design.n();
    let ls = LeastSquares::new(design.x(), &design.coefficient_names())?;
    let y = design.y();
    let wy = DVector::from_vec(w.spatial_lag(y.as_slice())?);
    let (b_y, e_y) = ls.solve(y);
    let (b_wy, e_wy) = ls.solve(&wy);
    let (a, b, c) = (e_y.norm_squared(), e_y.dot(&e_wy), e_wy.norm_squared());

    let concentrated = |rho: f64| -> Result<f64> {
        let sse = (a - 2.0 * rho * b + rho * rho * c).max(f64::MIN_POSITIVE);
        Ok(gaussian_log_likelihood(n as f64, sse / n as f64) + w.log_det_factor(rho)?)
    };
    let rho = optimize_coefficient(w, ModelKind::Sar, concentrated)?.unwrap_or(0.0);

    let beta = &b_y - &b_wy * rho;
    let innovations = &e_y - &e_wy * rho;
    let sigma2 = innovations.norm_squared() / n as f64;

    let mut theta: Vec<f64> = beta.iter().copied().collect();
    theta.push(rho);
    theta.push(sigma2);
    let p = theta.len();
    let log_likelihood = sar_log_likelihood_with_lag(design, w, &wy, &theta[..p - 2], rho, sigma2)?;
    let hessian = numerical_hessian(
        |t| sar_log_likelihood_with_lag(design, w, &wy, &t[..p - 2], t[p - 2], t[p - 1]),
        &theta,
        &hessian_steps(&theta),
    )?;
    let est = SpatialEstimate {
        kind: ModelKind::Sar,
        coef: rho,
        beta,
        innovations,
        std_errors: hessian_std_errors(&hessian),
    };
    Ok(finish_spatial_fit(design, est, log_likelihood))
}

/// Spatial error model `y = Xβ + u`, `u = λWu + ε`.
pub fn fit_sem(design: &DesignMatrix, w: &SpatialWeights) -> Result<ModelFit> {
    check_aligned(design, w)?;
    let n = design.n();
    let names = design.coefficient_names();
    // Rank of X itself; A(λ)X is checked per evaluation.
    LeastSquares::new(design.x(), &names)?;
    let x = design.x();
    let y = design.y();
    let wx = w.lag_matrix(x);
    let wy = DVector::from_vec(w.spatial_lag(y.as_slice())?);

    let filtered = |lambda: f64| -> Result<(DVector<f64>, DVector<f64>)> {
        let ax = x - &wx * lambda;
        let ay = y - &wy * lambda;
        let ls = LeastSquares::new(&ax, &names)?;
        Ok(ls.solve(&ay))
    };
    let concentrated = |lambda: f64| -> Result<f64> {
        let (_, e) = filtered(lambda)?;
        let sigma2 = e.norm_squared() / n as f64;
        Ok(gaussian_log_likelihood(n as f64, sigma2) + w.log_det_factor(lambda)?)
    };
    let lambda = optimize_coefficient(w, ModelKind::Sem, concentrated)?.unwrap_or(0.0);

    let (beta, innovations) = filtered(lambda)?;
    let sigma2 = innovations.norm_squared() / n as f64;
    let mut theta: Vec<f64> = beta.iter().copied().collect();
    theta.push(lambda);
    theta.push(sigma2);
    let p = theta.len();
    let log_likelihood = sem_log_likelihood(design, w, &theta[..p - 2], lambda, sigma2)?;
    let hessian = numerical_hessian(
        |t| sem_log_likelihood(design, w, &t[..p - 2], t[p - 2], t[p - 1]),
        &theta,
        &hessian_steps(&theta),
    )?;
    let est = SpatialEstimate {
        kind: ModelKind::Sem,
        coef: lambda,
        beta,
        innovations,
        std_errors: hessian_std_errors(&hessian),
    };
    Ok(finish_spatial_fit(design, est, log_likelihood))
}

pub fn fit_model(kind: ModelKind, design: &DesignMatrix, w: &SpatialWeights) -> Result<ModelFit> {
    match kind {
        ModelKind::Ols => fit_ols(design),
        ModelKind::Sar => fit_sar(design, w),
        ModelKind::Sem => fit_sem(design, w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexgrid::HexCellId;
    use crate::weights::build_weights;
    use approx::assert_relative_eq;

    fn single(xs: &[f64], ys: &[f64]) -> DesignMatrix {
        DesignMatrix::new(vec!["x".into()], &[xs.to_vec()], ys.to_vec()).unwrap()
    }

    #[test]
    fn exact_line() {
        let fit = fit_ols(&single(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0])).unwrap();
        assert!(fit.beta()[0].abs() < 1e-12);
        assert_relative_eq!(fit.beta()[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_response_has_zero_r2() {
        let fit = fit_ols(&single(&[1.0, 2.0, 3.0, 5.0], &[4.0; 4])).unwrap();
        assert_relative_eq!(fit.beta()[0], 4.0, epsilon = 1e-12);
        assert!(fit.beta()[1].abs() < 1e-12);
        assert_eq!(fit.r2, 0.0);
        assert_eq!(fit.adjusted_r2, 0.0);
    }

    #[test]
    fn collinear_columns_are_reported() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let d = DesignMatrix::new(vec!["a".into(), "b".into()], &[a, b], vec![1.0, 3.0, 2.0, 5.0, 4.0])
            .unwrap();
        match fit_ols(&d).unwrap_err() {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["b".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        let zero = DesignMatrix::new(vec!["z".into()], &[vec![0.0; 4]], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(fit_ols(&zero), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn design_rejects_too_few_rows() {
        assert!(DesignMatrix::new(vec!["x".into()], &[vec![1.0, 2.0]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn aic_definition() {
        let mut fit = fit_ols(&single(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 5.0])).unwrap();
        fit.log_likelihood = -285.0;
        fit.param_count = 13;
        assert_eq!(aic(&fit), 596.0);
        fit.log_likelihood = 0.0;
        fit.param_count = 1;
        assert_eq!(aic(&fit), 2.0);
    }

    #[test]
    fn significance_thresholds() {
        assert_eq!(Significance::from_p_value(0.2), Significance::None);
        assert_eq!(Significance::from_p_value(0.04), Significance::P95);
        assert_eq!(Significance::from_p_value(0.005), Significance::P99);
        assert_eq!(Significance::from_p_value(0.0005), Significance::P999);
        assert_eq!(serde_json::to_string(&Significance::P999).unwrap(), "\"0.999\"");
    }

    #[test]
    fn spatial_fit_needs_aligned_weights() {
        let w = build_weights(&[HexCellId::new(0, 0), HexCellId::new(1, 0)]).unwrap();
        let d = single(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 5.0]);
        assert!(matches!(fit_sar(&d, &w), Err(Error::LengthMismatch { .. })));
        assert!(matches!(fit_sem(&d, &w), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn fit_json_round_trips_with_nan_fields() {
        let mut fit = fit_ols(&single(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 5.0])).unwrap();
        fit.coefficients[0].std_error = f64::NAN;
        let text = serde_json::to_string(&fit).unwrap();
        assert!(text.contains("\"std_error\":null"));
        let back: ModelFit = serde_json::from_str(&text).unwrap();
        assert!(back.coefficients[0].std_error.is_nan());
        assert_eq!(back.beta(), fit.beta());
    }

    #[test]
    fn model_kind_parsing() {
        assert_eq!("sem".parse::<ModelKind>().unwrap(), ModelKind::Sem);
        assert_eq!(serde_json::to_string(&ModelKind::Sar).unwrap(), "\"SAR\"");
        assert!("gwr".parse::<ModelKind>().is_err());
    }
}
