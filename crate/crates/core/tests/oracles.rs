mod support;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use uhi_core::hexgrid::{build_hexgrid, HexCellId};
use uhi_core::models::{fit_ols, fit_sar, fit_sem, ModelKind};
use uhi_core::raster::{BBox, GeoPoint};
use uhi_core::synthetic::{hex_patch, sample, Process};
use uhi_core::weights::build_weights;

use support::*;

#[test]
fn ols_matches_exact_normal_equations() {
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..40 {
        let k = rng.random_range(1..=5);
        let n = rng.random_range(k + 3..=60);
        let design = random_design(&mut rng, n, k);
        let fit = fit_ols(&design).unwrap();
        let oracle = ols_oracle(design.x(), design.y());
        for (got, want) in fit.beta().iter().zip(&oracle) {
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn log_det_matches_dense_lu() {
    let mut rng = StdRng::seed_from_u64(2);
    let patch = hex_patch(4);
    for _ in 0..30 {
        let mut cells = patch.clone();
        while cells.len() > rng.random_range(10..=50) {
            cells.remove(rng.random_range(0..cells.len()));
        }
        let Ok(w) = build_weights(&cells) else { continue };
        let (lo, hi) = w.feasible_interval();
        let rho = rng.random_range(0.99 * lo..0.99 * hi);
        let want = dense_log_det(&w, rho);
        let got = w.log_det_factor(rho).unwrap();
        assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-12), "{got} vs {want} at {rho}");
    }
}

#[test]
fn spatial_estimates_match_dense_grid_search() {
    let s = sample(8, 2, Process::Lag { rho: 0.5 }, 3).unwrap();
    let fit = fit_sar(&s.design, &s.weights).unwrap();
    let grid = grid_search_coefficient(ModelKind::Sar, &s.design, &s.weights, 10_000);
    assert!((fit.spatial_estimate().unwrap() - grid).abs() < 1e-3);

    let s = sample(8, 2, Process::Error { lambda: 0.6 }, 4).unwrap();
    let fit = fit_sem(&s.design, &s.weights).unwrap();
    let grid = grid_search_coefficient(ModelKind::Sem, &s.design, &s.weights, 10_000);
    assert!((fit.spatial_estimate().unwrap() - grid).abs() < 1e-3);
}

#[test]
fn locate_matches_nearest_centre() {
    let mut rng = StdRng::seed_from_u64(5);
    let (w, h) = (3000.0, 2000.0);
    let grid = build_hexgrid(BBox::new(0.0, 0.0, w, h).unwrap(), 300.0).unwrap();
    let (qr, rr) = covering_ranges(&grid, w, h);
    for _ in 0..2000 {
        let p = GeoPoint::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        assert_eq!(grid.locate(p), brute_force_locate(&grid, p, qr, rr), "{p:?}");
    }
}

#[test]
fn monte_carlo_area_matches_formula() {
    let mut rng = StdRng::seed_from_u64(6);
    let grid = build_hexgrid(BBox::new(0.0, 0.0, 1e4, 1e4).unwrap(), 480.0).unwrap();
    let est = monte_carlo_area(&grid, HexCellId::new(3, 4), 100_000, &mut rng);
    assert!((est / grid.cell_area() - 1.0).abs() < 0.01);
}
