//! Independent reference computations shared by the oracle tests and the
//! acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use uhi_core::hexgrid::{HexCellId, HexGrid};
use uhi_core::models::{DesignMatrix, ModelKind};
use uhi_core::raster::GeoPoint;
use uhi_core::weights::SpatialWeights;

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite input")
}

/// OLS coefficients from the normal equations solved in exact rational
/// arithmetic, rounded to f64 once at the end.
pub fn ols_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let (n, p) = x.shape();
    let xs: Vec<Vec<BigRational>> = (0..n).map(|i| (0..p).map(|j| exact(x[(i, j)])).collect()).collect();
    let ys: Vec<BigRational> = y.iter().map(|v| exact(*v)).collect();
    // Augmented [XᵀX | Xᵀy].
    let mut a: Vec<Vec<BigRational>> = (0..p)
        .map(|r| {
            let mut row: Vec<BigRational> = (0..p)
                .map(|c| (0..n).fold(BigRational::zero(), |s, i| s + &xs[i][r] * &xs[i][c]))
                .collect();
            row.push((0..n).fold(BigRational::zero(), |s, i| s + &xs[i][r] * &ys[i]));
            row
        })
        .collect();
    for col in 0..p {
        let pivot = (col..p).find(|&r| !a[r][col].is_zero()).expect("full rank oracle input");
        a.swap(col, pivot);
        for r in 0..p {
            if r != col && !a[r][col].is_zero() {
                let f = &a[r][col] / &a[col][col];
                for c in col..=p {
                    let delta = &f * &a[col][c];
                    a[r][c] -= delta;
                }
            }
        }
    }
    (0..p).map(|r| (&a[r][p] / &a[r][r]).to_f64().expect("representable")).collect()
}

/// `ln|det(I − coef·W)|` from a dense LU factorization.
pub fn dense_log_det(w: &SpatialWeights, coef: f64) -> f64 {
    let n = w.n();
    let m = DMatrix::<f64>::identity(n, n) - w.to_dense() * coef;
    m.lu().determinant().abs().ln()
}

/// Concentrated log-likelihood evaluated on `points` equally spaced values
/// across the open feasible interval; returns the best grid coefficient.
/// Uses normal equations with precomputed Gram blocks, independent of the
/// QR-based estimator.
pub fn grid_search_coefficient(kind: ModelKind, design: &DesignMatrix, w: &SpatialWeights, points: usize) -> f64 {
    let n = design.n() as f64;
    let x = design.x();
    let y = design.y();
    let wy = DVector::from_vec(w.spatial_lag(y.as_slice()).unwrap());
    let wx = w.lag_matrix(x);
    let (lo, hi) = w.feasible_interval();
    let margin = 1e-6 * (hi - lo);

    let sse: Box<dyn Fn(f64) -> f64> = match kind {
        ModelKind::Sar => {
            let xtx = x.transpose() * x;
            let inv = xtx.try_inverse().unwrap();
            let hat = |v: &DVector<f64>| v - x * (&inv * (x.transpose() * v));
            let (ey, ewy) = (hat(y), hat(&wy));
            Box::new(move |rho| (&ey - &ewy * rho).norm_squared())
        }
        ModelKind::Sem => {
            let (xx, xwx, wxwx) = (x.transpose() * x, x.transpose() * &wx, wx.transpose() * &wx);
            let (xy, xwy, wxy, wxwy) = (
                x.transpose() * y,
                x.transpose() * &wy,
                wx.transpose() * y,
                wx.transpose() * &wy,
            );
            let (yy, ywy, wywy) = (y.dot(y), y.dot(&wy), wy.dot(&wy));
            Box::new(move |l: f64| {
                let g = &xx - (&xwx + xwx.transpose()) * l + &wxwx * (l * l);
                let c = &xy - (&xwy + &wxy) * l + &wxwy * (l * l);
                let b = g.cholesky().unwrap().solve(&c);
                (yy - 2.0 * l * ywy + l * l * wywy) - c.dot(&b)
            })
        }
        ModelKind::Ols => panic!("no spatial coefficient for OLS"),
    };
    let eig = w.eigenvalues().to_vec();
    let lnl = |c: f64| -> f64 {
        let log_det: f64 = eig.iter().map(|e| (1.0 - c * e).abs().ln()).sum();
        -0.5 * n * (sse(c) / n).ln() + log_det
    };
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..points {
        let c = lo + margin + (hi - lo - 2.0 * margin) * i as f64 / (points - 1) as f64;
        let v = lnl(c);
        if v > best.0 {
            best = (v, c);
        }
    }
    best.1
}

/// Nearest hexagon centre by exhaustive search over a window of cells.
pub fn brute_force_locate(grid: &HexGrid, p: GeoPoint, q_range: (i64, i64), r_range: (i64, i64)) -> HexCellId {
    let mut best = (f64::INFINITY, HexCellId::new(0, 0));
    for r in r_range.0..=r_range.1 {
        for q in q_range.0..=q_range.1 {
            let cell = HexCellId::new(q, r);
            let d = grid.center(cell).distance(&p);
            if d < best.0 {
                best = (d, cell);
            }
        }
    }
    best.1
}

/// Axial ranges that cover `[0, w] × [0, h]` relative to the grid origin.
pub fn covering_ranges(grid: &HexGrid, w: f64, h: f64) -> ((i64, i64), (i64, i64)) {
    let r_max = (h / grid.row_spacing()).ceil() as i64 + 1;
    let q_max = (w / grid.column_spacing()).ceil() as i64 + 1;
    ((-r_max / 2 - 2, q_max + 2), (-1, r_max))
}

/// Monte Carlo estimate of one cell's area from uniform samples in a box
/// around its centre.
pub fn monte_carlo_area<R: Rng>(grid: &HexGrid, cell: HexCellId, samples: usize, rng: &mut R) -> f64 {
    let c = grid.center(cell);
    let half = 0.6 * grid.diameter;
    let hits = (0..samples)
        .filter(|_| {
            let p = GeoPoint::new(
                c.x + rng.random_range(-half..half),
                c.y + rng.random_range(-half..half),
            );
            grid.locate(p) == cell
        })
        .count();
    hits as f64 / samples as f64 * (2.0 * half).powi(2)
}

pub fn random_design<R: Rng>(rng: &mut R, n: usize, k: usize) -> DesignMatrix {
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let y = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
    let names = (0..k).map(|j| format!("x{j}")).collect();
    DesignMatrix::new(names, &columns, y).unwrap()
}
