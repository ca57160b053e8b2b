//! Periodic Cartesian grids on flat tori.
//!
//! Cells are indexed row-major with axis 0 slowest. Sample points sit at
//! `x_a = index_a * spacing_a`; every axis wraps with period
//! `dims_a * spacing_a`.

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;
pub const MIN_CELLS_PER_AXIS: usize = 8;

pub type Point = [f64; MAX_DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    dims: [usize; MAX_DIM],
    spacing: [f64; MAX_DIM],
    strides: [usize; MAX_DIM],
}

impl Grid {
    pub fn new(n: usize, dims: &[usize], spacing: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&n) {
            return Err(Error::InvalidGrid(format!(
                "dimension {n} outside {{2, 3}}"
            )));
        }
        if dims.len() != n || spacing.len() != n {
            return Err(Error::InvalidGrid(format!(
                "expected {n} dims and spacings, got {} and {}",
                dims.len(),
                spacing.len()
            )));
        }
        let mut d = [1usize; MAX_DIM];
        let mut h = [1.0f64; MAX_DIM];
        for a in 0..n {
            if dims[a] < MIN_CELLS_PER_AXIS {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has {} cells, minimum is {MIN_CELLS_PER_AXIS}",
                    dims[a]
                )));
            }
            if !(spacing[a] > 0.0) || !spacing[a].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} spacing {} is not positive",
                    spacing[a]
                )));
            }
            d[a] = dims[a];
            h[a] = spacing[a];
        }
        let mut strides = [0usize; MAX_DIM];
        let mut s = 1;
        for a in (0..n).rev() {
            strides[a] = s;
            s *= d[a];
        }
        Ok(Self {
            n,
            dims: d,
            spacing: h,
            strides,
        })
    }

    /// Uniform grid with `cells` per axis covering a torus of side `period`.
    pub fn cubic(n: usize, cells: usize, period: f64) -> Result<Self> {
        let dims = vec![cells; n];
        let spacing = vec![period / cells as f64; n];
        Self::new(n, &dims, &spacing)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.n]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.n]
    }

    pub fn period(&self, axis: usize) -> f64 {
        self.dims[axis] as f64 * self.spacing[axis]
    }

    pub fn periods(&self) -> Vec<f64> {
        (0..self.n).map(|a| self.period(a)).collect()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_period(&self) -> f64 {
        (0..self.n)
            .map(|a| self.period(a))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn cell_count(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.cell_count() as f64
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    #[inline]
    pub fn multi_index(&self, cell: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        for a in 0..self.n {
            idx[a] = (cell / self.strides[a]) % self.dims[a];
        }
        idx
    }

    #[inline]
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        (0..self.n)
            .map(|a| (idx[a] % self.dims[a]) * self.strides[a])
            .sum()
    }

    /// Cell reached by moving `offset` cells along `axis`, wrapping periodically.
    #[inline]
    pub fn shift(&self, cell: usize, axis: usize, offset: isize) -> usize {
        let d = self.dims[axis] as isize;
        let s = self.strides[axis];
        let i = ((cell / s) % self.dims[axis]) as isize;
        let j = (i + offset).rem_euclid(d);
        (cell as isize + (j - i) * s as isize) as usize
    }

    /// Index deltas to the `-1` and `+1` neighbours along each axis. Offsets
    /// along different axes add, so diagonal neighbours are sums of these.
    #[inline]
    pub fn unit_steps(&self, cell: usize) -> [[isize; 2]; MAX_DIM] {
        let mut out = [[0isize; 2]; MAX_DIM];
        let mut rest = cell;
        for a in (0..self.n).rev() {
            let d = self.dims[a];
            let s = self.strides[a] as isize;
            let i = rest % d;
            rest /= d;
            out[a][0] = if i == 0 { (d as isize - 1) * s } else { -s };
            out[a][1] = if i + 1 == d { -(d as isize - 1) * s } else { s };
        }
        out
    }

    /// Cell reached by a multi-axis integer offset.
    #[inline]
    pub fn offset(&self, cell: usize, offset: &[isize]) -> usize {
        let mut c = cell;
        for (a, &o) in offset.iter().enumerate().take(self.n) {
            if o != 0 {
                c = self.shift(c, a, o);
            }
        }
        c
    }

    #[inline]
    pub fn coords(&self, cell: usize) -> Point {
        let idx = self.multi_index(cell);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.n {
            x[a] = idx[a] as f64 * self.spacing[a];
        }
        x
    }

    /// Signed minimal-image difference `b - a` along `axis`.
    #[inline]
    pub fn periodic_delta(&self, a: f64, b: f64, axis: usize) -> f64 {
        let l = self.period(axis);
        let mut d = (b - a) % l;
        if d > 0.5 * l {
            d -= l;
        } else if d < -0.5 * l {
            d += l;
        }
        d
    }

    #[inline]
    pub fn periodic_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..self.n {
            let d = self.periodic_delta(x[a], y[a], a);
            s += d * d;
        }
        s.sqrt()
    }

    /// Integer offsets whose physical length is strictly below `radius`.
    pub fn ball_offsets(&self, radius: f64) -> Vec<[isize; MAX_DIM]> {
        let mut reach = [0isize; MAX_DIM];
        for a in 0..self.n {
            reach[a] = (radius / self.spacing[a]).ceil() as isize;
            // never wrap onto the same cell twice
            reach[a] = reach[a].min((self.dims[a] as isize - 1) / 2);
        }
        let mut out = Vec::new();
        let r2 = radius * radius;
        let (ry, rz) = (reach[1], if self.n == 3 { reach[2] } else { 0 });
        for i in -reach[0]..=reach[0] {
            for j in -ry..=ry {
                for k in -rz..=rz {
                    let o = [i, j, k];
                    let d2: f64 = (0..self.n)
                        .map(|a| (o[a] as f64 * self.spacing[a]).powi(2))
                        .sum();
                    if d2 < r2 {
                        out.push(o);
                    }
                }
            }
        }
        out
    }

    /// Integer cell-offset bound per axis covering `radius`.
    pub fn reach(&self, radius: f64) -> [isize; MAX_DIM] {
        let mut reach = [0isize; MAX_DIM];
        for a in 0..self.n {
            reach[a] = (radius / self.spacing[a]).ceil() as isize;
        }
        reach
    }
}
