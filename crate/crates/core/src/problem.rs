//! Built-in initial data and potentials, tabulated onto lattice fields.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::sync::Arc;

use crate::mesh::{pi_forward, Field, Lattice};
use crate::graph::SimplexPoint;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("{role} coefficient vector has {got} entries, expected {expected} (one per vertex)")]
    BadCoeffs {
        role: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Initial datum `U_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum InitialData {
    /// `U_0 = value`
    Constant { value: f64 },
    /// `U_0(xi) = sum_i c_i xi_i`; defaults to `xi_1`
    Linear { coeffs: Option<Vec<f64>> },
    /// `U_0(xi) = sum_i c_i xi_i^2`; defaults to `xi_1^2`
    Quadratic { coeffs: Option<Vec<f64>> },
    /// `U_0(xi) = sum_k cos(pi s^k)` over the cumulative coordinates
    #[serde(alias = "cosine-in-s")]
    CosineInS,
}

/// Potential `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `F(xi) = sum_i c_i xi_i`; defaults to `xi_1`
    Linear { coeffs: Option<Vec<f64>> },
    /// `F(xi) = sum_i xi_i^2`
    Quadratic,
}

fn default_first_coeff(d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d];
    c[0] = 1.0;
    c
}

fn check_coeffs(
    role: &'static str,
    coeffs: &Option<Vec<f64>>,
    d: usize,
) -> Result<Vec<f64>, ProblemError> {
    match coeffs {
        None => Ok(default_first_coeff(d)),
        Some(c) if c.len() == d => Ok(c.clone()),
        Some(c) => Err(ProblemError::BadCoeffs {
            role,
            expected: d,
            got: c.len(),
        }),
    }
}

impl InitialData {
    pub fn tabulate(&self, lattice: &Arc<Lattice>) -> Result<Field, ProblemError> {
        let d = lattice.dim();
        Ok(match self {
            InitialData::Constant { value } => Field::tabulate(lattice, |_| *value),
            InitialData::Linear { coeffs } => {
                let c = check_coeffs("u0.linear", coeffs, d)?;
                Field::tabulate(lattice, move |xi| {
                    xi.iter().zip(&c).map(|(x, ci)| x * ci).sum()
                })
            }
            InitialData::Quadratic { coeffs } => {
                let c = check_coeffs("u0.quadratic", coeffs, d)?;
                Field::tabulate(lattice, move |xi| {
                    xi.iter().zip(&c).map(|(x, ci)| x * x * ci).sum()
                })
            }
            InitialData::CosineInS => Field::tabulate(lattice, |xi| {
                let pt = SimplexPoint::new(xi.to_vec()).expect("lattice point");
                pi_forward(&pt)
                    .iter()
                    .map(|s| (std::f64::consts::PI * s).cos())
                    .sum()
            }),
        })
    }
}

impl Potential {
    pub fn tabulate(&self, lattice: &Arc<Lattice>) -> Result<Field, ProblemError> {
        let d = lattice.dim();
        Ok(match self {
            Potential::Zero => Field::zeros(lattice.clone()),
            Potential::Linear { coeffs } => {
                let c = check_coeffs("f.linear", coeffs, d)?;
                Field::tabulate(lattice, move |xi| {
                    xi.iter().zip(&c).map(|(x, ci)| x * ci).sum()
                })
            }
            Potential::Quadratic => {
                Field::tabulate(lattice, |xi| xi.iter().map(|x| x * x).sum())
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_tabulation() {
        let lat = Lattice::build(2, 4, 1 << 20).unwrap();
        let q = InitialData::Quadratic { coeffs: None }.tabulate(&lat).unwrap();
        // xi_1^2 at s in {0, .25, .5, .75, 1}
        let expect = [0.0, 0.0625, 0.25, 0.5625, 1.0];
        for (got, want) in q.values().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
        let f = Potential::Quadratic.tabulate(&lat).unwrap();
        // xi_1^2 + xi_2^2 at the midpoint = 0.5
        let mid = lat.site_at(&[2]).unwrap();
        assert!((f.values()[mid] - 0.5).abs() < 1e-15);
        assert!(InitialData::Linear {
            coeffs: Some(vec![1.0])
        }
        .tabulate(&lat)
        .is_err());
    }
}
