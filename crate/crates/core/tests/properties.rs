use proptest::prelude::*;
use uhi_core::hexgrid::{aggregate_points, aggregate_raster, build_hexgrid, AggregateStat, HexCellId};
use uhi_core::indices::{emissivity, land_surface_temperature, normalized_difference, vegetation_proportion};
use uhi_core::models::{fit_ols, DesignMatrix};
use uhi_core::raster::{read_ascii_grid, write_ascii_grid, BBox, GeoPoint, RasterGrid};
use uhi_core::synthetic::hex_patch;
use uhi_core::weights::build_weights;
use uhi_core::RadiometricConstants;

const NODATA: f64 = -9999.0;

fn raster(rows: usize, cols: usize, values: Vec<f64>) -> RasterGrid {
    RasterGrid::new(rows, cols, 1000.0, 2000.0, 30.0, NODATA, values).unwrap()
}

fn grid_strategy() -> impl Strategy<Value = RasterGrid> {
    (1usize..12, 1usize..12).prop_flat_map(|(rows, cols)| {
        prop::collection::vec(
            prop_oneof![9 => -1e6f64..1e6, 1 => Just(NODATA)],
            rows * cols,
        )
        .prop_map(move |v| raster(rows, cols, v))
    })
}

fn constants() -> RadiometricConstants {
    RadiometricConstants::new(3.342e-4, 0.1, 774.8853, 1321.0789).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ascii_grid_round_trip_is_bit_exact(g in grid_strategy()) {
        let mut buf = Vec::new();
        write_ascii_grid(&g, &mut buf).unwrap();
        let back = read_ascii_grid(buf.as_slice()).unwrap();
        prop_assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert!(back.same_geometry(&g));
    }

    #[test]
    fn normalized_difference_is_bounded(a in prop::collection::vec(0.0f64..1.0, 16),
                                        b in prop::collection::vec(0.0f64..1.0, 16)) {
        let nd = normalized_difference(&raster(4, 4, a.clone()), &raster(4, 4, b.clone())).unwrap();
        for (i, v) in nd.values().iter().enumerate() {
            if a[i] + b[i] == 0.0 {
                prop_assert_eq!(*v, NODATA);
            } else {
                prop_assert!((-1.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn emissivity_stays_in_band(ndvi in prop::collection::vec(-1.0f64..1.0, 25)) {
        let pv = vegetation_proportion(&raster(5, 5, ndvi), -0.2, 0.8).unwrap();
        let eps = emissivity(&pv).unwrap();
        for (p, e) in pv.values().iter().zip(eps.values()) {
            prop_assert!((0.0..=1.0).contains(p));
            prop_assert!((0.986..=0.990).contains(e));
        }
    }

    #[test]
    fn unit_emissivity_leaves_brightness_temperature(t in prop::collection::vec(200.0f64..340.0, 9)) {
        let bt = raster(3, 3, t.clone());
        let lst = land_surface_temperature(&bt, &raster(3, 3, vec![1.0; 9]), &constants(), false).unwrap();
        prop_assert_eq!(lst.values(), t.as_slice());
    }

    #[test]
    fn locate_inverts_center(q in -500i64..500, r in -500i64..500, d in 50.0f64..1000.0) {
        let grid = build_hexgrid(BBox::new(0.0, 0.0, 1e4, 1e4).unwrap(), d).unwrap();
        let cell = HexCellId::new(q, r);
        prop_assert_eq!(grid.locate(grid.center(cell)), cell);
    }

    #[test]
    fn points_near_a_center_stay_in_its_cell(q in -50i64..50, r in -50i64..50,
                                             angle in 0.0f64..std::f64::consts::TAU,
                                             frac in 0.0f64..0.999) {
        let grid = build_hexgrid(BBox::new(0.0, 0.0, 1e4, 1e4).unwrap(), 300.0).unwrap();
        let cell = HexCellId::new(q, r);
        let c = grid.center(cell);
        // Inscribed circle has radius d/2.
        let rad = frac * grid.diameter / 2.0;
        let p = GeoPoint::new(c.x + rad * angle.cos(), c.y + rad * angle.sin());
        prop_assert_eq!(grid.locate(p), cell);
    }

    #[test]
    fn aggregation_conserves_totals(values in prop::collection::vec(0.0f64..100.0, 400),
                                    d in prop::sample::select(vec![600.0, 500.0, 480.0, 400.0, 300.0, 200.0])) {
        let r = RasterGrid::new(20, 20, 0.0, 0.0, 50.0, NODATA, values.clone()).unwrap();
        let grid = build_hexgrid(r.bbox(), d).unwrap();
        let layer = aggregate_raster(&grid, &r, AggregateStat::Sum).unwrap();
        let count: usize = layer.cells.iter().map(|a| a.contributing_count).sum();
        prop_assert_eq!(count, 400);
        let total: f64 = layer.cells.iter().map(|a| a.value).sum();
        prop_assert!((total - values.iter().sum::<f64>()).abs() < 1e-9 * total.max(1.0));

        let points: Vec<_> = values.chunks(2)
            .map(|c| (GeoPoint::new(c[0] * 10.0, c[1] * 10.0), vec![1.0]))
            .collect();
        let pl = aggregate_points(&grid, &points).unwrap();
        prop_assert_eq!(pl.cells.values().map(|s| s.count).sum::<usize>(), points.len());
        prop_assert_eq!(pl.cells.values().map(|s| s.sums[0]).sum::<f64>(), points.len() as f64);
    }

    #[test]
    fn weights_are_row_stochastic_with_unit_spectral_radius(radius in 1i64..6, holes in prop::collection::vec(any::<prop::sample::Index>(), 0..5)) {
        let mut cells = hex_patch(radius);
        for h in holes {
            if cells.len() > 3 {
                let i = h.index(cells.len());
                cells.remove(i);
            }
        }
        let w = build_weights(&cells);
        prop_assume!(w.is_ok());
        let w = w.unwrap();
        for i in 0..w.n() {
            let s: f64 = w.neighbors(i).iter().map(|(_, v)| v).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for &(j, _) in w.neighbors(i) {
                prop_assert!(w.neighbors(j).iter().any(|&(k, _)| k == i));
            }
        }
        let eig = w.eigenvalues();
        prop_assert!((eig[eig.len() - 1] - 1.0).abs() < 1e-9);
        prop_assert!(eig[0] >= -1.0 - 1e-9);
        prop_assert_eq!(w.log_det_factor(0.0).unwrap(), 0.0);
    }

    #[test]
    fn ols_residuals_are_orthogonal_to_the_design(
        rows in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -50.0f64..50.0), 8..40)
    ) {
        let x1: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let x2: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let design = DesignMatrix::new(vec!["a".into(), "b".into()], &[x1, x2], y.clone()).unwrap();
        if let Ok(fit) = fit_ols(&design) {
            let e = nalgebra::DVector::from_vec(fit.residuals.clone());
            let xte = design.x().transpose() * e;
            let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(xte.amax() < 1e-8 * ynorm.max(1.0));
            prop_assert!(fit.r2 <= 1.0 + 1e-12);
        }
    }
}
