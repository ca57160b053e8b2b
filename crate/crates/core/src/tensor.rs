//! Grid-sampled tensor and scalar fields.
//!
//! Components are stored cell-major: all `n^rank` components of cell 0,
//! then cell 1, and so on. Within a cell the multi-index is row-major in
//! slot order, slowest index first.

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Co,
    Contra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Valence {
    pub covariant: usize,
    pub contravariant: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid,
    slots: Vec<Slot>,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: Grid, slots: &[Slot]) -> Self {
        let width = grid.n().pow(slots.len() as u32);
        Self {
            grid,
            slots: slots.to_vec(),
            data: vec![0.0; width * grid.cell_count()],
        }
    }

    pub fn covariant(grid: Grid, rank: usize) -> Self {
        Self::zeros(grid, &vec![Slot::Co; rank])
    }

    pub fn from_data(grid: Grid, slots: &[Slot], data: Vec<f64>) -> Result<Self> {
        let width = grid.n().pow(slots.len() as u32);
        if data.len() != width * grid.cell_count() {
            return Err(Error::InvalidInput(format!(
                "tensor data has {} entries, expected {}",
                data.len(),
                width * grid.cell_count()
            )));
        }
        let field = Self {
            grid,
            slots: slots.to_vec(),
            data,
        };
        field.check_finite()?;
        Ok(field)
    }

    pub(crate) fn from_raw(grid: Grid, slots: Vec<Slot>, data: Vec<f64>) -> Self {
        debug_assert_eq!(
            data.len(),
            grid.n().pow(slots.len() as u32) * grid.cell_count()
        );
        Self { grid, slots, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn valence(&self) -> Valence {
        let covariant = self.slots.iter().filter(|s| **s == Slot::Co).count();
        Valence {
            covariant,
            contravariant: self.slots.len() - covariant,
        }
    }

    /// Components per cell.
    pub fn width(&self) -> usize {
        self.grid.n().pow(self.slots.len() as u32)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        let w = self.width();
        &self.data[cell * w..(cell + 1) * w]
    }

    pub fn cell_mut(&mut self, cell: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.data[cell * w..(cell + 1) * w]
    }

    /// Offset of a multi-index within one cell.
    pub fn component(&self, index: &[usize]) -> usize {
        let n = self.grid.n();
        index.iter().fold(0, |acc, &i| acc * n + i)
    }

    pub fn get(&self, cell: usize, index: &[usize]) -> f64 {
        self.cell(cell)[self.component(index)]
    }

    pub fn check_finite(&self) -> Result<()> {
        let w = self.width().max(1);
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite { cell: i / w }),
            None => Ok(()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Component-wise `self - other`.
    pub fn sub(&self, other: &TensorField) -> Result<TensorField> {
        if self.grid != other.grid || self.slots != other.slots {
            return Err(Error::InvalidInput("tensor shapes differ".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_raw(self.grid, self.slots.clone(), data))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.cell_count()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            data: vec![value; grid.cell_count()],
        }
    }

    pub fn from_fn<F>(grid: Grid, f: F) -> Self
    where
        F: Fn(&Point) -> f64 + Sync + Send,
    {
        let data = par::map(grid.cell_count(), |c| f(&grid.coords(c)));
        Self { grid, data }
    }

    pub fn from_data(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.cell_count() {
            return Err(Error::InvalidInput(format!(
                "scalar data has {} entries, expected {}",
                data.len(),
                grid.cell_count()
            )));
        }
        if let Some(cell) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { cell });
        }
        Ok(Self { grid, data })
    }

    pub(crate) fn from_raw(grid: Grid, data: Vec<f64>) -> Self {
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, cell: usize) -> f64 {
        self.data[cell]
    }

    /// Cell-midpoint integral against the flat measure.
    pub fn integral(&self) -> f64 {
        par::sum(&self.data) * self.grid.cell_volume()
    }

    pub fn sup_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        par::min(&self.data)
    }

    pub fn max(&self) -> f64 {
        par::max(&self.data)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> ScalarField {
        Self::from_raw(self.grid, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &ScalarField, f: F) -> ScalarField {
        Self::from_raw(
            self.grid,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }
}
