//! Admissible weight functions: positive on the simplex interior and
//! exactly zero on its boundary.
//!
//! The boundary zeros are literal 0.0, not underflow values, so the
//! weighted integration-by-parts cancellation is bit-exact on the
//! lattice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::sync::Arc;

use crate::mesh::{Field, Lattice};

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("polynomial weight requires alpha >= 1, got {0}")]
    BadAlpha(f64),
    #[error("exponential weight requires lambda > 0, got {0}")]
    BadLambda(f64),
}

/// Boundary-vanishing weight on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    /// `w(xi) = prod_i xi_i^alpha`, `alpha >= 1`
    Polynomial { alpha: f64 },
    /// `w(xi) = exp(-lambda / prod_i xi_i)`, `lambda > 0`
    Exponential { lambda: f64 },
    /// `w(xi) = prod_i psi(xi_i)` with `psi(s) = exp(-1/s)` for `s > 0`
    Mollifier,
}

impl WeightSpec {
    pub fn validate(&self) -> Result<(), WeightError> {
        match *self {
            WeightSpec::Polynomial { alpha } if !(alpha >= 1.0) => {
                Err(WeightError::BadAlpha(alpha))
            }
            WeightSpec::Exponential { lambda } if !(lambda > 0.0) => {
                Err(WeightError::BadLambda(lambda))
            }
            _ => Ok(()),
        }
    }
}

/// Evaluates the weight at a simplex point. Returns exactly 0 when any
/// coordinate vanishes.
pub fn weight_eval(spec: &WeightSpec, xi: &[f64]) -> f64 {
    if xi.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    match *spec {
        WeightSpec::Polynomial { alpha } => {
            let prod: f64 = xi.iter().product();
            prod.powf(alpha)
        }
        WeightSpec::Exponential { lambda } => {
            let prod: f64 = xi.iter().product();
            (-lambda / prod).exp()
        }
        WeightSpec::Mollifier => xi.iter().map(|&x| (-1.0 / x).exp()).product(),
    }
}

/// Tabulates the weight at every lattice site. Boundary sites are set to
/// literal 0 using the integer-exact boundary test.
pub fn weight_field(spec: &WeightSpec, lattice: &Arc<Lattice>) -> Field {
    let values = (0..lattice.num_sites())
        .map(|s| {
            if lattice.is_boundary(s) {
                0.0
            } else {
                weight_eval(spec, lattice.xi(s))
            }
        })
        .collect();
    Field::from_values(lattice.clone(), values)
}
