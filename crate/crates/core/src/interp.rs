//! Periodic tensor-product cubic Lagrange interpolation.

use crate::grid::{Grid, MAX_DIM};

#[inline]
fn weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Interpolates a `width`-component field at `x`; exact for cubics along
/// each axis, fourth-order accurate for smooth data.
pub fn sample(grid: &Grid, data: &[f64], width: usize, x: &[f64], out: &mut [f64]) {
    let n = grid.n();
    let mut base = [0isize; MAX_DIM];
    let mut w = [[0.0; 4]; MAX_DIM];
    for a in 0..n {
        let s = x[a] / grid.spacing()[a];
        let f = s.floor();
        base[a] = f as isize - 1;
        w[a] = weights(s - f);
    }
    for v in out[..width].iter_mut() {
        *v = 0.0;
    }
    let layers = if n == 3 { 4 } else { 1 };
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..layers {
                let wt = if n == 3 {
                    w[0][i] * w[1][j] * w[2][k]
                } else {
                    w[0][i] * w[1][j]
                };
                let mut idx = [0usize; MAX_DIM];
                let pick = [i, j, k];
                for a in 0..n {
                    let d = grid.dims()[a] as isize;
                    idx[a] = (base[a] + pick[a] as isize).rem_euclid(d) as usize;
                }
                let c = grid.linear_index(&idx) * width;
                for m in 0..width {
                    out[m] += wt * data[c + m];
                }
            }
        }
    }
}
