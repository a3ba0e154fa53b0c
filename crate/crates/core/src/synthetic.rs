//! Simulated spatial regression data on hexagon patches.
//!
//! Used to check estimator recovery, diagnostic calibration and the
//! selection rule against processes with a known data-generating model.

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hexgrid::HexCellId;
use crate::models::DesignMatrix;
use crate::weights::{build_weights, SpatialWeights};

/// Data-generating process for the response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Process {
    /// y = Xβ + ε
    Independent,
    /// y = ρWy + Xβ + ε
    Lag { rho: f64 },
    /// y = Xβ + u, u = λWu + ε
    Error { lambda: f64 },
}

/// All cells within hex distance `radius` of the origin, sorted.
pub fn hex_patch(radius: i64) -> Vec<HexCellId> {
    let mut cells = Vec::new();
    for q in -radius..=radius {
        for r in (-radius).max(-q - radius)..=radius.min(-q + radius) {
            cells.push(HexCellId::new(q, r));
        }
    }
    cells.sort();
    cells
}

/// Solves `(I − coef·W) u = v` by the Neumann series. Requires `|coef| < 1`,
/// which bounds the series for a row-standardized `W`.
pub fn solve_spatial_filter(w: &SpatialWeights, coef: f64, v: &[f64]) -> Result<Vec<f64>> {
    if !(coef.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("|{coef}| must be < 1 for the series")));
    }
    let mut u = v.to_vec();
    let mut term = v.to_vec();
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    for _ in 0..10_000 {
        term = w.spatial_lag(&term)?;
        let mut largest = 0.0f64;
        for (ui, ti) in u.iter_mut().zip(term.iter_mut()) {
            *ti *= coef;
            *ui += *ti;
            largest = largest.max(ti.abs());
        }
        if largest <= 1e-14 * scale {
            return Ok(u);
        }
    }
    Err(Error::NonConvergence("spatial filter series did not converge".into()))
}

/// Regressors, weights and response drawn from one process.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub design: DesignMatrix,
    pub weights: SpatialWeights,
    pub beta: Vec<f64>,
}

/// Draws `k` standard-normal regressors on a hex patch and a response from
/// `process` with intercept 1, slopes `1, −0.5, 0.25, …` and unit error
/// variance.
pub fn sample(radius: i64, k: usize, process: Process, seed: u64) -> Result<SyntheticSample> {
    let weights = build_weights(&hex_patch(radius))?;
    let n = weights.n();
    let mut rng = StdRng::seed_from_u64(seed);
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut beta = vec![1.0];
    beta.extend((0..k).map(|j| (-0.5f64).powi(j as i32)));
    let names = (1..=k).map(|j| format!("x{j}")).collect();
    let placeholder = DesignMatrix::new(names, &columns, vec![0.0; n])?;
    let y = draw_response(&weights, placeholder.x(), &beta, process, &mut rng)?;
    Ok(SyntheticSample {
        design: placeholder.with_response(y)?,
        weights,
        beta,
    })
}

/// Draws a response for a fixed design. `x` includes the intercept column.
pub fn draw_response<R: Rng + ?Sized>(
    w: &SpatialWeights,
    x: &DMatrix<f64>,
    beta: &[f64],
    process: Process,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x.nrows() != w.n() {
        return Err(Error::LengthMismatch {
            expected: w.n(),
            actual: x.nrows(),
        });
    }
    if x.ncols() != beta.len() {
        return Err(Error::LengthMismatch {
            expected: x.ncols(),
            actual: beta.len(),
        });
    }
    let xb = x * nalgebra::DVector::from_column_slice(beta);
    let eps: Vec<f64> = (0..w.n()).map(|_| rng.sample(StandardNormal)).collect();
    match process {
        Process::Independent => Ok(xb.iter().zip(&eps).map(|(a, e)| a + e).collect()),
        Process::Lag { rho } => {
            let v: Vec<f64> = xb.iter().zip(&eps).map(|(a, e)| a + e).collect();
            solve_spatial_filter(w, rho, &v)
        }
        Process::Error { lambda } => {
            let u = solve_spatial_filter(w, lambda, &eps)?;
            Ok(xb.iter().zip(&u).map(|(a, e)| a + e).collect())
        }
    }
}
