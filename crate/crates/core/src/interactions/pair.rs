use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Grid1D;

/// Pair potential `U(x - y)` between two particles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PairKind {
    #[default]
    None,
    /// `U(r) = ε exp(-r²/σ²)`
    GaussianCore { epsilon: f64, sigma: f64 },
    /// `U(r) = k r² / 2`
    HarmonicSpring { k: f64 },
    /// Accepted by the parser only so that it can be rejected with a diagnostic.
    HardSphere { diameter: f64 },
}

/// A bounded, smooth pair interaction on a given domain.
///
/// The force is `K₂(x, y) = -∂_x U(x - y)`; the transverse part `Q` of the
/// general two-body force is identically zero in one dimension. On a
/// periodic grid the potential is summed over periodic images so that it is
/// smooth across the seam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairInteraction {
    kind: PairKind,
    period: Option<f64>,
    images: i32,
    bound: f64,
}

impl PairInteraction {
    pub fn none() -> Self {
        Self { kind: PairKind::None, period: None, images: 0, bound: 0.0 }
    }

    pub fn new(kind: PairKind, grid: &Grid1D) -> Result<Self> {
        let period = grid.bc().is_periodic().then(|| grid.length());
        let (images, bound) = match kind {
            PairKind::None => (0, 0.0),
            PairKind::GaussianCore { epsilon, sigma } => {
                if !(epsilon.is_finite() && sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::InvalidParameter(format!("gaussian core needs finite ε and σ > 0 (ε={epsilon}, σ={sigma})")));
                }
                let images = period.map_or(0, |l| (8.0 * sigma / l).ceil() as i32 + 1);
                // max |d/dr ε e^{-r²/σ²}| = ε √2 e^{-1/2} / σ per image
                let per_image = epsilon.abs() * std::f64::consts::SQRT_2 * (-0.5f64).exp() / sigma;
                (images, per_image * (2 * images + 1) as f64)
            }
            PairKind::HarmonicSpring { k } => {
                if !k.is_finite() {
                    return Err(Error::InvalidParameter("harmonic spring constant must be finite".into()));
                }
                if period.is_some() {
                    return Err(Error::UnsupportedInteraction(
                        "a harmonic spring is not periodic; use a bounded domain".into(),
                    ));
                }
                (0, k.abs() * grid.length())
            }
            PairKind::HardSphere { diameter } => {
                return Err(Error::UnsupportedInteraction(format!(
                    "hard spheres (diameter {diameter}) have an unbounded, discontinuous pair force; only bounded C¹ interactions are supported"
                )))
            }
        };
        Ok(Self { kind, period, images, bound })
    }

    pub fn kind(&self) -> PairKind {
        self.kind
    }

    pub fn is_none(&self) -> bool {
        match self.kind {
            PairKind::None => true,
            PairKind::GaussianCore { epsilon, .. } => epsilon == 0.0,
            PairKind::HarmonicSpring { k } => k == 0.0,
            PairKind::HardSphere { .. } => false,
        }
    }

    /// Upper bound on `|K₂|` over the domain.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    fn bare_potential(&self, r: f64) -> f64 {
        match self.kind {
            PairKind::GaussianCore { epsilon, sigma } => epsilon * (-(r * r) / (sigma * sigma)).exp(),
            PairKind::HarmonicSpring { k } => 0.5 * k * r * r,
            PairKind::None | PairKind::HardSphere { .. } => 0.0,
        }
    }

    fn bare_force(&self, r: f64) -> f64 {
        match self.kind {
            PairKind::GaussianCore { epsilon, sigma } => {
                let s2 = sigma * sigma;
                2.0 * epsilon * r / s2 * (-(r * r) / s2).exp()
            }
            PairKind::HarmonicSpring { k } => -k * r,
            PairKind::None | PairKind::HardSphere { .. } => 0.0,
        }
    }

    /// `U(x - y)`, image-summed on periodic domains.
    pub fn potential(&self, x: f64, y: f64) -> f64 {
        let r = x - y;
        match self.period {
            Some(l) => (-self.images..=self.images).map(|k| self.bare_potential(r + k as f64 * l)).sum(),
            None => self.bare_potential(r),
        }
    }

    /// Conservative force `-∂_x U(x - y)` on a particle at `x` due to one at `y`.
    pub fn conservative_force(&self, x: f64, y: f64) -> f64 {
        let r = x - y;
        match self.period {
            Some(l) => (-self.images..=self.images).map(|k| self.bare_force(r + k as f64 * l)).sum(),
            None => self.bare_force(r),
        }
    }
}

/// `K₂(x, y) = -∂_x U(x - y) + Q(x, y)` with `Q ≡ 0` in one dimension.
pub fn pair_force(p: &PairInteraction, x: f64, y: f64) -> f64 {
    p.conservative_force(x, y)
}

/// `K₂(x_i, y_j)` at all pairs of cell centers, row-major in `i`.
pub(crate) fn cell_force_table(p: &PairInteraction, grid: &Grid1D) -> Vec<f64> {
    let c = grid.cell_centers();
    let n = c.len();
    let mut t = vec![0.0; n * n];
    if p.is_none() {
        return t;
    }
    for i in 0..n {
        for j in 0..n {
            t[i * n + j] = p.conservative_force(c[i], c[j]);
        }
    }
    t
}

/// Discrete face pair force on faces `f = 0..=n` against partner cells `j`:
/// `-(U(x_f⁺ - y_j) - U(x_f⁻ - y_j)) / dx`, with `x_f∓` the cells left and
/// right of face `f`. Row-major in `f`. Boundary faces of a bounded grid get
/// the analytic force at the wall.
pub(crate) fn face_force_table(p: &PairInteraction, grid: &Grid1D) -> Vec<f64> {
    let n = grid.n_cells();
    let c = grid.cell_centers();
    let dx = grid.dx();
    let mut t = vec![0.0; (n + 1) * n];
    if p.is_none() {
        return t;
    }
    for f in 0..=n {
        for j in 0..n {
            let v = if f > 0 && f < n {
                -(p.potential(c[f], c[j]) - p.potential(c[f - 1], c[j])) / dx
            } else if grid.bc().is_periodic() {
                -(p.potential(c[0], c[j]) - p.potential(c[n - 1], c[j])) / dx
            } else {
                p.conservative_force(grid.face(f), c[j])
            };
            t[f * n + j] = v;
        }
    }
    t
}
