//! The finite graph, its metric tensors, and the xi-weighted edge algebra.
//!
//! A weighted graph `G = (V, E, omega)` carries the probability simplex
//! `P(G) = { xi >= 0 : sum xi_i = 1 }`. Edge fluxes are weighted by a
//! symmetric, 1-homogeneous metric tensor `g(xi_i, xi_j)` (average,
//! logarithmic, or harmonic mean), which degenerates on the simplex
//! boundary. Every Hamiltonian in this crate is assembled from the
//! inner products defined here.
//!
//! Edge-sum convention: all edge sums run over unordered pairs `i < j`
//! with the upper-triangular values; the ordered-pair sum with its 1/2
//! prefactor is folded in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold below which the logarithmic mean switches to its
/// second-order series to avoid cancellation in `ln t - ln r`.
const LOG_MEAN_SERIES_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("vertex count must be >= 2, got {0}")]
    TooFewVertices(usize),
    #[error("omega must be a {expected}x{expected} matrix, got {got} entries")]
    BadOmegaShape { expected: usize, got: usize },
    #[error("omega[{i}][{j}] = {value} must be nonnegative")]
    NegativeWeight { i: usize, j: usize, value: f64 },
    #[error("omega[{i}][{j}] = {a} != omega[{j}][{i}] = {b}: matrix must be symmetric")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("omega[{0}][{0}] must be zero (no self-loops)")]
    SelfLoop(usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("metric weight arguments must be nonnegative, got ({0}, {1})")]
    NegativeMetricInput(f64, f64),
    #[error("simplex point must have nonnegative entries summing to 1, got sum {0}")]
    InvalidSimplexPoint(f64),
    #[error("edge field has {got} entries, expected one per edge ({expected})")]
    BadEdgeField { expected: usize, got: usize },
}

/// An undirected connected graph with symmetric nonnegative edge weights.
#[derive(Debug, Clone)]
pub struct Graph {
    d: usize,
    omega: Vec<f64>,
    edges: Vec<(usize, usize)>,
    sqrt_omega: Vec<f64>,
}

impl Graph {
    /// Builds a graph from a dense row-major `d x d` weight matrix.
    ///
    /// Checks symmetry, zero diagonal, nonnegativity, and connectivity.
    pub fn new(d: usize, omega: Vec<f64>) -> Result<Self, GraphError> {
        if d < 2 {
            return Err(GraphError::TooFewVertices(d));
        }
        if omega.len() != d * d {
            return Err(GraphError::BadOmegaShape {
                expected: d,
                got: omega.len(),
            });
        }
        for i in 0..d {
            if omega[i * d + i] != 0.0 {
                return Err(GraphError::SelfLoop(i));
            }
            for j in 0..d {
                let w = omega[i * d + j];
                if w < 0.0 || !w.is_finite() {
                    return Err(GraphError::NegativeWeight { i, j, value: w });
                }
                if omega[i * d + j] != omega[j * d + i] {
                    return Err(GraphError::Asymmetric {
                        i,
                        j,
                        a: omega[i * d + j],
                        b: omega[j * d + i],
                    });
                }
            }
        }
        let mut edges = Vec::new();
        for i in 0..d {
            for j in (i + 1)..d {
                if omega[i * d + j] > 0.0 {
                    edges.push((i, j));
                }
            }
        }
        // connectivity by breadth-first traversal
        let mut seen = vec![false; d];
        let mut queue = vec![0usize];
        seen[0] = true;
        while let Some(i) = queue.pop() {
            for j in 0..d {
                if !seen[j] && omega[i * d + j] > 0.0 {
                    seen[j] = true;
                    queue.push(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(GraphError::Disconnected);
        }
        let sqrt_omega = edges.iter().map(|&(i, j)| omega[i * d + j].sqrt()).collect();
        Ok(Self {
            d,
            omega,
            edges,
            sqrt_omega,
        })
    }

    /// Complete graph on `d` vertices with unit weights.
    pub fn complete(d: usize) -> Result<Self, GraphError> {
        let mut omega = vec![1.0; d * d];
        for i in 0..d {
            omega[i * d + i] = 0.0;
        }
        Self::new(d, omega)
    }

    pub fn vertex_count(&self) -> usize {
        self.d
    }

    /// Unordered edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn omega(&self, i: usize, j: usize) -> f64 {
        self.omega[i * self.d + j]
    }

    /// `sqrt(omega_ij)` for the k-th edge.
    pub fn sqrt_omega(&self, edge: usize) -> f64 {
        self.sqrt_omega[edge]
    }
}

/// The metric tensor on pairs of vertex masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `g(t, r) = (t + r) / 2`
    Average,
    /// `g(t, r) = (t - r) / (ln t - ln r)`, zero on the axes
    Logarithmic,
    /// `g(t, r) = 2 / (1/t + 1/r)`, zero on the axes
    Harmonic,
}

/// Evaluates the metric weight `g(t, r)`.
///
/// Nonnegative inputs only. The logarithmic mean switches to a series
/// expansion near `t = r` to avoid catastrophic cancellation.
pub fn metric_weight(kind: MetricKind, t: f64, r: f64) -> Result<f64, GraphError> {
    if t < 0.0 || r < 0.0 {
        return Err(GraphError::NegativeMetricInput(t, r));
    }
    Ok(metric_weight_unchecked(kind, t, r))
}

pub(crate) fn metric_weight_unchecked(kind: MetricKind, t: f64, r: f64) -> f64 {
    match kind {
        MetricKind::Average => 0.5 * (t + r),
        MetricKind::Logarithmic => {
            if t == 0.0 || r == 0.0 {
                0.0
            } else if (t - r).abs() <= LOG_MEAN_SERIES_THRESHOLD * t.max(r) {
                let m = 0.5 * (t + r);
                let delta = t - r;
                m - delta * delta / (12.0 * m)
            } else {
                // ln(t/r) via ln_1p keeps full precision when t is close
                // to r, where ln t - ln r would cancel
                let delta = t - r;
                delta / (delta / r).ln_1p()
            }
        }
        MetricKind::Harmonic => {
            if t == 0.0 || r == 0.0 {
                0.0
            } else {
                2.0 / (1.0 / t + 1.0 / r)
            }
        }
    }
}

/// A probability vector on the graph vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    xi: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(xi: Vec<f64>) -> Result<Self, GraphError> {
        let sum: f64 = xi.iter().sum();
        if xi.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(GraphError::InvalidSimplexPoint(sum));
        }
        Ok(Self { xi })
    }

    /// Barycenter `(1/d, ..., 1/d)`.
    pub fn uniform(d: usize) -> Self {
        Self {
            xi: vec![1.0 / d as f64; d],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.xi
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    /// True if some vertex carries zero mass.
    pub fn on_boundary(&self) -> bool {
        self.xi.iter().any(|&x| x == 0.0)
    }
}

/// `I(xi) = sum_i 1/xi_i`, with `+inf` when any coordinate vanishes.
pub fn inv_sum(xi: &[f64]) -> f64 {
    let mut total = 0.0;
    for &x in xi {
        if x == 0.0 {
            return f64::INFINITY;
        }
        total += 1.0 / x;
    }
    total
}

/// `I(xi)^{-2}`, the mobility coefficient of the quadratic Hamiltonian.
///
/// Evaluates to exactly 0 on the boundary, consistent with the zero
/// extension of the Hamiltonian.
pub fn inv_sum_pow_neg2(xi: &[f64]) -> f64 {
    let i = inv_sum(xi);
    if i.is_finite() {
        1.0 / (i * i)
    } else {
        0.0
    }
}

/// Metric weight on the k-th edge of the graph at the point `xi`.
pub(crate) fn edge_metric(graph: &Graph, kind: MetricKind, xi: &[f64], edge: usize) -> f64 {
    let (i, j) = graph.edges()[edge];
    metric_weight_unchecked(kind, xi[i], xi[j])
}

/// Weighted inner product of two edge-indexed vectors:
/// `(p, q)_xi = sum_{i<j in E} p_ij q_ij g_ij(xi)`.
pub fn xi_inner(
    graph: &Graph,
    kind: MetricKind,
    xi: &SimplexPoint,
    p: &[f64],
    q: &[f64],
) -> Result<f64, GraphError> {
    if p.len() != graph.edge_count() {
        return Err(GraphError::BadEdgeField {
            expected: graph.edge_count(),
            got: p.len(),
        });
    }
    if q.len() != graph.edge_count() {
        return Err(GraphError::BadEdgeField {
            expected: graph.edge_count(),
            got: q.len(),
        });
    }
    let mut total = 0.0;
    for e in 0..graph.edge_count() {
        total += p[e] * q[e] * edge_metric(graph, kind, xi.coords(), e);
    }
    Ok(total)
}

/// `||p||^2_xi = sum_{i<j in E} p_ij^2 g_ij(xi)`.
pub fn xi_norm_sq(
    graph: &Graph,
    kind: MetricKind,
    xi: &SimplexPoint,
    p: &[f64],
) -> Result<f64, GraphError> {
    xi_inner(graph, kind, xi, p, p)
}

/// Graph gradient: edge entry `sqrt(omega_ij) (phi_i - phi_j)` for `i < j`.
pub fn graph_gradient(graph: &Graph, phi: &[f64]) -> Vec<f64> {
    graph
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| graph.sqrt_omega(e) * (phi[i] - phi[j]))
        .collect()
}

/// Divergence of a skew-symmetric matrix field (row-major `d x d`):
/// component `i` is `sum_j sqrt(omega_ij) upsilon_ji g_ij(xi)`.
///
/// Satisfies `(grad_G phi, upsilon)_xi = -(phi, div_xi(upsilon))`.
pub fn divergence(
    graph: &Graph,
    kind: MetricKind,
    xi: &SimplexPoint,
    upsilon: &[f64],
) -> Result<Vec<f64>, GraphError> {
    let d = graph.vertex_count();
    if upsilon.len() != d * d {
        return Err(GraphError::BadOmegaShape {
            expected: d,
            got: upsilon.len(),
        });
    }
    let mut out = vec![0.0; d];
    for e in 0..graph.edge_count() {
        let (i, j) = graph.edges()[e];
        let g = edge_metric(graph, kind, xi.coords(), e);
        let w = graph.sqrt_omega(e);
        out[i] += w * upsilon[j * d + i] * g;
        out[j] += w * upsilon[i * d + j] * g;
    }
    Ok(out)
}
