//! Densities on the tensor-product grid `Ω^rank`.

use crate::error::{Error, Result};
use crate::fields::{Grid1D, Quantity, ScalarField};

/// Row-major values over `rank` copies of a 1D grid: the flat index of
/// `(i_0, .., i_{rank-1})` is `Σ i_k n^{rank-1-k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTensor {
    grid: Grid1D,
    rank: usize,
    values: Vec<f64>,
}

impl DensityTensor {
    pub fn new(grid: Grid1D, rank: usize, values: Vec<f64>) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidParameter("tensor rank must be positive".into()));
        }
        let len = grid.n_cells().checked_pow(rank as u32).ok_or(Error::BudgetExceeded { cells: usize::MAX, budget: 0 })?;
        if values.len() != len {
            return Err(Error::InvalidParameter(format!("tensor needs {len} values, got {}", values.len())));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, rank, values })
    }

    pub fn from_fn(grid: Grid1D, rank: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let n = grid.n_cells();
        let len = n.pow(rank as u32);
        let centers = grid.cell_centers();
        let mut x = vec![0.0; rank];
        let values = (0..len)
            .map(|flat| {
                let mut r = flat;
                for k in (0..rank).rev() {
                    x[k] = centers[r % n];
                    r /= n;
                }
                f(&x)
            })
            .collect();
        Self::new(grid, rank, values)
    }

    pub(crate) fn raw(grid: Grid1D, rank: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells().pow(rank as u32));
        Self { grid, rank, values }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.grid.n_cells().pow((self.rank - 1 - axis) as u32)
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.grid.n_cells() + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    /// Multi-index of a flat position.
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        let n = self.grid.n_cells();
        for k in (0..self.rank).rev() {
            out[k] = flat % n;
            flat /= n;
        }
    }

    /// `∫ values dx^rank` (midpoint rule).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx().powi(self.rank as i32)
    }

    /// Integrates out the trailing `rank - keep` coordinates.
    pub fn marginal(&self, keep: usize) -> Result<DensityTensor> {
        if keep == 0 || keep > self.rank {
            return Err(Error::OutOfRange(format!("cannot keep {keep} of {} coordinates", self.rank)));
        }
        let block = self.grid.n_cells().pow((self.rank - keep) as u32);
        let weight = self.grid.dx().powi((self.rank - keep) as i32);
        let values = self.values.chunks(block).map(|c| c.iter().sum::<f64>() * weight).collect();
        Ok(DensityTensor::raw(self.grid, keep, values))
    }

    pub fn scaled(&self, factor: f64) -> DensityTensor {
        DensityTensor::raw(self.grid, self.rank, self.values.iter().map(|v| v * factor).collect())
    }

    /// Rank-1 tensor as a density field.
    pub fn to_scalar_field(&self) -> Result<ScalarField> {
        if self.rank != 1 {
            return Err(Error::InvalidParameter(format!("rank {} tensor is not a 1D field", self.rank)));
        }
        ScalarField::new(self.grid, Quantity::Density, self.values.clone())
    }

    /// Largest deviation under exchange of any two coordinates.
    pub fn exchange_asymmetry(&self) -> f64 {
        if self.rank < 2 {
            return 0.0;
        }
        let mut idx = vec![0; self.rank];
        let mut worst = 0.0f64;
        for flat in 0..self.values.len() {
            self.unflatten(flat, &mut idx);
            for a in 0..self.rank {
                for b in a + 1..self.rank {
                    idx.swap(a, b);
                    let other = self.values[self.flat_index(&idx)];
                    idx.swap(a, b);
                    worst = worst.max((self.values[flat] - other).abs());
                }
            }
        }
        worst
    }

    pub fn max_distance(&self, other: &DensityTensor) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn l1_distance(&self, other: &DensityTensor) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>()
            * self.grid.dx().powi(self.rank as i32)
    }
}
