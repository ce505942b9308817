//! Pair interactions, external drives, closures and the average
//! interaction force of the reduced hierarchy.

mod closure;
mod drive;
mod pair;

pub use closure::{closure_rho2, Closure};
pub use drive::{ExternalDrive, FaceForce, Potential, PotentialTerm, SpaceProfile, TimeProfile};
pub use pair::{pair_force, PairInteraction, PairKind};

pub(crate) use pair::{cell_force_table, face_force_table};

use crate::error::{Error, Result};
use crate::tensor::DensityTensor;

/// Average `n`-body interaction force on particle `i` (1-based):
/// `E_{n,i}(xⁿ) = ∫ ρ_{n+1}(xⁿ, y) K₂(x_i, y) dy` by midpoint quadrature
/// over the last coordinate of `rho_np1`.
pub fn avg_interaction_force(rho_np1: &DensityTensor, p: &PairInteraction, i: usize) -> Result<DensityTensor> {
    let rank = rho_np1.rank();
    if rank < 2 {
        return Err(Error::InvalidParameter("need an (n+1)-body density with n >= 1".into()));
    }
    let n_body = rank - 1;
    if i == 0 || i > n_body {
        return Err(Error::OutOfRange(format!("particle index {i} not in 1..={n_body}")));
    }
    if let Some(index) = rho_np1.values().iter().position(|&v| v < 0.0) {
        return Err(Error::NegativeDensity { index, value: rho_np1.values()[index] });
    }
    let grid = *rho_np1.grid();
    let n = grid.n_cells();
    let dy = grid.dx();
    let table = cell_force_table(p, &grid);
    let axis_stride = n.pow((n_body - i) as u32);
    let values: Vec<f64> = rho_np1
        .values()
        .chunks(n)
        .enumerate()
        .map(|(flat, row)| {
            let xi = (flat / axis_stride) % n;
            let k = &table[xi * n..(xi + 1) * n];
            row.iter().zip(k).map(|(r, f)| r * f).sum::<f64>() * dy
        })
        .collect();
    Ok(DensityTensor::raw(grid, n_body, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BoundaryKind, Grid1D};

    #[test]
    fn no_interaction_gives_zero() {
        let g = Grid1D::new(0.0, 1.0, 8, BoundaryKind::NoFlux).unwrap();
        let r2 = DensityTensor::from_fn(g, 2, |x| 1.0 + x[0] * x[1]).unwrap();
        let e = avg_interaction_force(&r2, &PairInteraction::none(), 1).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
        assert!(avg_interaction_force(&r2, &PairInteraction::none(), 2).is_err());
        assert!(avg_interaction_force(&r2, &PairInteraction::none(), 0).is_err());
    }

    #[test]
    fn harmonic_spring_on_constant_density() {
        // ∫0^1 2·(-(x - y)) dy = -2x + 1; midpoint rule is exact for linear integrands
        let g = Grid1D::new(0.0, 1.0, 32, BoundaryKind::NoFlux).unwrap();
        let r2 = DensityTensor::from_fn(g, 2, |_| 2.0).unwrap();
        let p = PairInteraction::new(PairKind::HarmonicSpring { k: 1.0 }, &g).unwrap();
        let e = avg_interaction_force(&r2, &p, 1).unwrap();
        for (i, x) in g.cell_centers().iter().enumerate() {
            assert!((e.values()[i] - (1.0 - 2.0 * x)).abs() < 1e-13);
        }
    }

    #[test]
    fn symmetric_density_gives_zero_force_at_center() {
        let g = Grid1D::new(-1.0, 1.0, 33, BoundaryKind::NoFlux).unwrap();
        let r2 = DensityTensor::from_fn(g, 2, |x| (-(x[0] * x[0]) - x[1] * x[1]).exp()).unwrap();
        let p = PairInteraction::new(PairKind::GaussianCore { epsilon: 1.0, sigma: 0.5 }, &g).unwrap();
        let e = avg_interaction_force(&r2, &p, 1).unwrap();
        assert!(e.values()[16].abs() < 1e-14);
    }

    #[test]
    fn force_on_second_particle_of_three() {
        let g = Grid1D::new(0.0, 1.0, 6, BoundaryKind::NoFlux).unwrap();
        let r3 = DensityTensor::from_fn(g, 3, |x| 1.0 + x[2]).unwrap();
        let p = PairInteraction::new(PairKind::HarmonicSpring { k: 1.0 }, &g).unwrap();
        let e = avg_interaction_force(&r3, &p, 2).unwrap();
        let c = g.cell_centers();
        // depends on x_2 only: Σ_y (1 + y)(y - x_2) dy
        for a in 0..6 {
            for b in 0..6 {
                let expect: f64 = c.iter().map(|y| (1.0 + y) * (y - c[b])).sum::<f64>() * g.dx();
                assert!((e.get(&[a, b]) - expect).abs() < 1e-14);
            }
        }
    }
}
