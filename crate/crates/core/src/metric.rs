//! Riemannian metrics sampled on a grid, and the fixed background metric
//! `h` whose connection measures every derivative.

use crate::error::{Error, Result};
use crate::geometry;
use crate::grid::{Grid, Point, MAX_DIM};
use crate::linalg::{self, Mat};
use crate::par;
use crate::tensor::{Slot, TensorField};

/// Symmetric covariant 2-tensor stored with all `n^2` components per cell.
/// Symmetry `g_ij == g_ji` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    inner: TensorField,
}

impl MetricField {
    pub fn identity(grid: Grid) -> Self {
        Self::from_fn(grid, |_| linalg::IDENTITY)
    }

    pub fn constant(grid: Grid, m: Mat) -> Self {
        Self::from_fn(grid, move |_| m)
    }

    /// Samples `f` at every cell; only the upper triangle is read.
    pub fn from_fn<F>(grid: Grid, f: F) -> Self
    where
        F: Fn(&Point) -> Mat + Sync + Send,
    {
        let n = grid.n();
        let mut data = vec![0.0; n * n * grid.cell_count()];
        par::fill(&mut data, n * n, |c, out| {
            let m = f(&grid.coords(c));
            for i in 0..n {
                for j in i..n {
                    out[i * n + j] = m[i][j];
                    out[j * n + i] = m[i][j];
                }
            }
        });
        Self {
            inner: TensorField::from_raw(grid, vec![Slot::Co, Slot::Co], data),
        }
    }

    /// Wraps a covariant 2-tensor; rejects asymmetric or non-finite input.
    pub fn from_tensor(t: TensorField) -> Result<Self> {
        if t.slots() != [Slot::Co, Slot::Co] {
            return Err(Error::InvalidInput(
                "metric must be a covariant 2-tensor".into(),
            ));
        }
        t.check_finite()?;
        let m = Self { inner: t };
        if m.max_asymmetry() != 0.0 {
            return Err(Error::InvalidInput(
                "metric components are not symmetric".into(),
            ));
        }
        Ok(m)
    }

    /// Builds from full per-cell component data, enforcing symmetry from the
    /// upper triangle.
    pub fn from_components(grid: Grid, data: Vec<f64>) -> Result<Self> {
        let t = TensorField::from_data(grid, &[Slot::Co, Slot::Co], data)?;
        let mut m = Self { inner: t };
        m.enforce_symmetry();
        Ok(m)
    }

    pub fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    pub fn n(&self) -> usize {
        self.inner.grid().n()
    }

    pub fn tensor(&self) -> &TensorField {
        &self.inner
    }

    pub fn into_tensor(self) -> TensorField {
        self.inner
    }

    pub fn data(&self) -> &[f64] {
        self.inner.data()
    }

    #[inline]
    pub fn at(&self, cell: usize) -> Mat {
        let n = self.n();
        let c = self.inner.cell(cell);
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = c[i * n + j];
            }
        }
        m
    }

    /// Copies the upper triangle onto the lower one in every cell.
    pub fn enforce_symmetry(&mut self) {
        let n = self.n();
        par::fill(self.inner.data_mut(), n * n, |_, c| {
            for i in 0..n {
                for j in i + 1..n {
                    c[j * n + i] = c[i * n + j];
                }
            }
        });
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n();
        self.inner
            .data()
            .chunks(n * n)
            .map(|c| {
                let mut m: f64 = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        m = m.max((c[i * n + j] - c[j * n + i]).abs());
                    }
                }
                m
            })
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let data = self.data().iter().map(|v| c * v).collect();
        Self {
            inner: TensorField::from_raw(*self.grid(), vec![Slot::Co, Slot::Co], data),
        }
    }

    /// `self + s * other`, symmetry preserved.
    pub fn add_scaled(&self, s: f64, other: &TensorField) -> Self {
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a + s * b)
            .collect();
        let mut m = Self {
            inner: TensorField::from_raw(*self.grid(), vec![Slot::Co, Slot::Co], data),
        };
        m.enforce_symmetry();
        m
    }

    /// Linear interpolation `(1 - w) * self + w * other`.
    pub fn lerp(&self, other: &MetricField, w: f64) -> Self {
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        Self {
            inner: TensorField::from_raw(*self.grid(), vec![Slot::Co, Slot::Co], data),
        }
    }

    /// Per-cell inverse and determinant, failing on the first degenerate cell.
    pub fn inverses(&self) -> Result<Vec<(Mat, f64)>> {
        let n = self.n();
        let inv = par::map(self.grid().cell_count(), |c| {
            let m = self.at(c);
            linalg::spd_inverse(&m, n).ok_or_else(|| Error::DegenerateMetric {
                cell: c,
                pivot: linalg::relative_pivot(&m, n),
            })
        });
        inv.into_iter().collect()
    }

    /// `max |self - other|` over all components.
    pub fn c0_distance(&self, other: &MetricField) -> f64 {
        self.data()
            .iter()
            .zip(other.data())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// The fixed reference metric `h` with its connection and curvature.
#[derive(Debug, Clone)]
pub struct BackgroundGeometry {
    metric: MetricField,
    christoffels: TensorField,
    riemann: TensorField,
    curvature_bounds: Vec<f64>,
    flat: bool,
    inverse: Vec<Mat>,
    chol_inverse: Vec<Mat>,
}

impl BackgroundGeometry {
    /// Flat torus, `h = δ`.
    pub fn flat(grid: Grid) -> Self {
        Self {
            metric: MetricField::identity(grid),
            christoffels: TensorField::zeros(grid, &[Slot::Contra, Slot::Co, Slot::Co]),
            riemann: TensorField::covariant(grid, 4),
            curvature_bounds: vec![0.0; 3],
            flat: true,
            inverse: Vec::new(),
            chol_inverse: Vec::new(),
        }
    }

    /// Curved background built from a sampled metric. Its Christoffels,
    /// Riemann tensor and `k_i = sup |∇̃^i Rm(h)|` for `i = 0, 1, 2` are
    /// computed with the same stencils as everything else.
    pub fn from_metric(h: MetricField) -> Result<Self> {
        let n = h.n();
        let grid = *h.grid();
        let inv = h.inverses()?;
        let chol_inverse = (0..grid.cell_count())
            .map(|c| {
                let l = linalg::cholesky(&h.at(c), n).ok_or(Error::DegenerateMetric {
                    cell: c,
                    pivot: 0.0,
                })?;
                Ok(linalg::lower_inverse(&l, n))
            })
            .collect::<Result<Vec<_>>>()?;
        let christoffels = geometry::christoffels(&h)?;
        let curv = geometry::curvature_tensors(&h)?;
        let flat = christoffels.max_abs() == 0.0 && curv.riemann.max_abs() == 0.0;
        let mut bg = Self {
            metric: h,
            christoffels,
            riemann: curv.riemann,
            curvature_bounds: Vec::new(),
            flat,
            inverse: inv.into_iter().map(|(m, _)| m).collect(),
            chol_inverse,
        };
        let mut bounds = vec![geometry::sup_norm(&bg.riemann, &bg)];
        let mut d = bg.riemann.clone();
        for _ in 1..3 {
            d = geometry::covariant_derivative(&d, &bg, 1)?;
            bounds.push(geometry::sup_norm(&d, &bg));
        }
        bg.curvature_bounds = bounds;
        Ok(bg)
    }

    pub fn grid(&self) -> &Grid {
        self.metric.grid()
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn christoffels(&self) -> &TensorField {
        &self.christoffels
    }

    pub fn riemann(&self) -> &TensorField {
        &self.riemann
    }

    /// `k_i = sup |∇̃^i Rm(h)|`, `i = 0, 1, 2`.
    pub fn curvature_bounds(&self) -> &[f64] {
        &self.curvature_bounds
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    #[inline]
    pub fn inverse_at(&self, cell: usize) -> Mat {
        if self.flat {
            linalg::IDENTITY
        } else {
            self.inverse[cell]
        }
    }

    /// `L^{-1}` where `h = L L^T` at `cell`.
    #[inline]
    pub fn chol_inverse_at(&self, cell: usize) -> Mat {
        if self.flat {
            linalg::IDENTITY
        } else {
            self.chol_inverse[cell]
        }
    }

    /// `sqrt(det h)` at `cell`.
    #[inline]
    pub fn volume_density(&self, cell: usize) -> f64 {
        if self.flat {
            1.0
        } else {
            linalg::det(&self.metric.at(cell), self.grid().n()).sqrt()
        }
    }

    /// Eigenvalues of `g` relative to `h` at one cell, ascending.
    pub fn relative_eigenvalues(&self, g: &Mat, cell: usize) -> [f64; MAX_DIM] {
        let n = self.grid().n();
        if self.flat {
            linalg::sym_eigenvalues(g, n)
        } else {
            let li = self.chol_inverse[cell];
            linalg::sym_eigenvalues(&linalg::congruence(&li, g, n), n)
        }
    }
}
