#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;

use proptest::prelude::*;
use rml_core::fields::{mollify, MollifierConfig, SingularSetMask};
use rml_core::flow::rdf_rhs;
use rml_core::linalg::{spd_inverse, Mat};
use rml_core::{BackgroundGeometry, Grid, MetricField};

fn spd(n: usize, entries: &[f64], shift: f64) -> Mat {
    // A Aᵀ + shift·I
    let mut a = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = entries[i * 3 + j];
        }
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = (0..n).map(|k| a[i][k] * a[j][k]).sum();
        }
        m[i][i] += shift;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unit_steps_match_shift(d0 in 8usize..14, d1 in 8usize..14, d2 in 8usize..14, pick in 0usize..1000) {
        let grid = Grid::new(3, &[d0, d1, d2], &[0.1, 0.2, 0.3]).unwrap();
        let c = pick % grid.cell_count();
        let st = grid.unit_steps(c);
        for a in 0..3 {
            prop_assert_eq!((c as isize + st[a][0]) as usize, grid.shift(c, a, -1));
            prop_assert_eq!((c as isize + st[a][1]) as usize, grid.shift(c, a, 1));
        }
    }

    #[test]
    fn spd_inverse_is_inverse(n in 2usize..4, e in prop::collection::vec(-1.0f64..1.0, 9), shift in 0.1f64..2.0) {
        let m = spd(n, &e, shift);
        let (inv, det) = spd_inverse(&m, n).unwrap();
        prop_assert!(det > 0.0);
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| m[i][k] * inv[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((v - target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_metrics_are_stationary(n in 2usize..4, e in prop::collection::vec(-1.0f64..1.0, 9), shift in 0.1f64..2.0) {
        let grid = Grid::cubic(n, 8, 2.0 * PI).unwrap();
        let g = MetricField::constant(grid, spd(n, &e, shift));
        let bg = BackgroundGeometry::flat(grid);
        prop_assert_eq!(rdf_rhs(&g, &bg).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn mollify_keeps_constants(e in prop::collection::vec(-1.0f64..1.0, 9), shift in 0.1f64..2.0, index in 1usize..6) {
        let grid = Grid::cubic(2, 32, 2.0 * PI).unwrap();
        let g = MetricField::constant(grid, spd(2, &e, shift));
        let mask = SingularSetMask::points(grid, &[[PI, PI, 0.0]]);
        let cfg = MollifierConfig { index, chart_radius: 1.5, overlap: 0.4 };
        let out = mollify(&g, &mask, &cfg).unwrap();
        prop_assert_eq!(out.data(), g.data());
    }

    #[test]
    fn rhs_is_symmetric(a in -0.3f64..0.3, kx in 1i32..3, ky in 1i32..3, phase in 0.0f64..6.0) {
        let grid = Grid::cubic(2, 16, 2.0 * PI).unwrap();
        let g = MetricField::from_fn(grid, move |x| {
            let s = a * (kx as f64 * x[0] + phase).sin();
            let c = 0.5 * a * (ky as f64 * x[1]).cos();
            [[1.0 + s, c, 0.0], [c, 1.0 - s, 0.0], [0.0; 3]]
        });
        let rhs = rdf_rhs(&g, &BackgroundGeometry::flat(grid)).unwrap();
        for c in 0..grid.cell_count() {
            let v = rhs.cell(c);
            prop_assert!((v[1] - v[2]).abs() <= 1e-12 * (1.0 + v[1].abs()));
        }
    }
}
