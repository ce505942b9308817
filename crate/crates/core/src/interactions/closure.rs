use serde::{Deserialize, Serialize};

use super::pair::{cell_force_table, PairInteraction};
use crate::error::{Error, Result};
use crate::fields::{integrate, ScalarField};
use crate::tensor::DensityTensor;

/// Two-body density as a functional of the one-body density.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Closure {
    /// `ρ₂(x, y) = (1 - 1/N) ρ(x) ρ(y)`
    Ideal { n_particles: usize },
    /// `ρ₂(x, y) = ρ(x) ρ(y) g(|x - y|)`, `g` tabulated and linearly interpolated.
    AdiabaticProduct { r: Vec<f64>, g: Vec<f64> },
    #[default]
    None,
}

impl Closure {
    pub fn validate(&self) -> Result<()> {
        match self {
            Closure::Ideal { n_particles } if *n_particles < 2 => Err(Error::InvalidParameter(format!(
                "ideal closure needs N >= 2, got {n_particles}"
            ))),
            Closure::AdiabaticProduct { r, g } => {
                if r.len() != g.len() || r.len() < 2 {
                    return Err(Error::InvalidParameter("pair-correlation table needs >= 2 matching points".into()));
                }
                if !r.windows(2).all(|w| w[1] > w[0]) || r[0] < 0.0 {
                    return Err(Error::InvalidParameter("pair-correlation radii must increase from >= 0".into()));
                }
                if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidParameter("pair correlation must be finite and >= 0".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Pair weight `w(x, y)` with `ρ₂ = w ρ(x) ρ(y)`.
    fn weight(&self, r: f64) -> Result<f64> {
        match self {
            Closure::Ideal { n_particles } => Ok(1.0 - 1.0 / *n_particles as f64),
            Closure::AdiabaticProduct { r: rs, g } => Ok(interpolate_table(rs, g, r)),
            Closure::None => Err(Error::ClosureUnavailable(
                "no closure configured; use N-body or Brownian-dynamics data for ρ₂".into(),
            )),
        }
    }

    /// Average interaction force `∫ ρ₂(x, y) K₂(x, y) dy` at the cell
    /// centers without materializing `ρ₂`.
    pub fn interaction_force(&self, rho: &ScalarField, p: &PairInteraction) -> Result<Vec<f64>> {
        let grid = rho.grid();
        let n = grid.n_cells();
        if p.is_none() {
            return Ok(vec![0.0; n]);
        }
        self.validate()?;
        let table = cell_force_table(p, grid);
        let c = grid.cell_centers();
        let r = rho.values();
        let dx = grid.dx();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.weight(distance(grid, c[i], c[j]))? * r[j] * table[i * n + j];
            }
            out[i] = r[i] * acc * dx;
        }
        Ok(out)
    }
}

fn distance(grid: &crate::fields::Grid1D, x: f64, y: f64) -> f64 {
    let d = (x - y).abs();
    if grid.bc().is_periodic() {
        d.min(grid.length() - d)
    } else {
        d
    }
}

fn interpolate_table(r: &[f64], g: &[f64], x: f64) -> f64 {
    if x <= r[0] {
        return g[0];
    }
    let k = r.partition_point(|&v| v <= x);
    if k >= r.len() {
        return g[g.len() - 1];
    }
    let w = (x - r[k - 1]) / (r[k] - r[k - 1]);
    (1.0 - w) * g[k - 1] + w * g[k]
}

/// Two-body density implied by a closure.
///
/// For the ideal closure the density must integrate to `N` (within 1e-8).
pub fn closure_rho2(c: &Closure, rho: &ScalarField) -> Result<DensityTensor> {
    c.validate()?;
    if let Closure::Ideal { n_particles } = c {
        let total = integrate(rho);
        if (total - *n_particles as f64).abs() > 1e-8 * (*n_particles as f64) {
            return Err(Error::InvalidParameter(format!(
                "density integrates to {total}, closure expects N = {n_particles}"
            )));
        }
    }
    let grid = *rho.grid();
    let n = grid.n_cells();
    let x = grid.cell_centers();
    let r = rho.values();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = c.weight(distance(&grid, x[i], x[j]))? * r[i] * r[j];
        }
    }
    DensityTensor::new(grid, 2, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BoundaryKind, Grid1D, Quantity};

    #[test]
    fn ideal_closure_two_particles() {
        let g = Grid1D::new(0.0, 1.0, 16, BoundaryKind::NoFlux).unwrap();
        let rho = ScalarField::constant(g, Quantity::Density, 2.0).unwrap();
        let r2 = closure_rho2(&Closure::Ideal { n_particles: 2 }, &rho).unwrap();
        assert!(r2.values().iter().all(|v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn ideal_closure_errors() {
        let g = Grid1D::new(0.0, 1.0, 16, BoundaryKind::NoFlux).unwrap();
        let rho = ScalarField::constant(g, Quantity::Density, 1.0).unwrap();
        assert!(closure_rho2(&Closure::Ideal { n_particles: 1 }, &rho).is_err());
        assert!(closure_rho2(&Closure::Ideal { n_particles: 3 }, &rho).is_err());
        assert!(matches!(closure_rho2(&Closure::None, &rho), Err(Error::ClosureUnavailable(_))));
    }

    #[test]
    fn adiabatic_product_uses_table() {
        let g = Grid1D::new(0.0, 1.0, 8, BoundaryKind::NoFlux).unwrap();
        let rho = ScalarField::constant(g, Quantity::Density, 1.0).unwrap();
        let c = Closure::AdiabaticProduct { r: vec![0.0, 1.0], g: vec![0.0, 1.0] };
        let r2 = closure_rho2(&c, &rho).unwrap();
        // g(|x - y|) = |x - y| on the diagonal is 0
        assert_eq!(r2.get(&[3, 3]), 0.0);
        assert!((r2.get(&[0, 4]) - 0.5).abs() < 1e-15);
        let bad = Closure::AdiabaticProduct { r: vec![0.0, 1.0], g: vec![-1.0, 1.0] };
        assert!(closure_rho2(&bad, &rho).is_err());
    }
}
