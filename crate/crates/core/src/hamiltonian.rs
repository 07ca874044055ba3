//! The quadratic Hamiltonian `H(xi, P) = I(xi)^{-2} ||P||^2_xi` and its
//! two monotone numerical counterparts.
//!
//! Both numerical Hamiltonians act on pairs `(P, Q)` of forward/backward
//! difference matrices and reduce to `H` on the diagonal `P = Q`:
//!
//! * Lax-Friedrichs: `I^{-2} sum_e g_e [(p^2 + q^2)/2 - gamma (p - q)]`,
//!   monotone on the ball `|p|, |q| <= R0` once `gamma >= 2 R0`;
//! * Osher-Sethian: `I^{-2} sum_e g_e [max(q,0)^2 + min(p,0)^2]`, upwind,
//!   no explicit viscosity.
//!
//! Edge sums run over unordered pairs `i < j` (the ordered-pair 1/2 is
//! folded in); with a skew-symmetric ordered sum the LF viscosity term
//! would cancel identically. All partial derivatives here are the exact
//! gradients of the implemented formulas, so finite differences of
//! `numerical_g` reproduce them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::graph::{edge_metric, inv_sum_pow_neg2, Graph, MetricKind};

#[derive(Debug, Error)]
pub enum HamiltonianError {
    #[error("R0 must be positive, got {0}")]
    BadR0(f64),
    #[error("Lax-Friedrichs viscosity gamma must be positive, got {0}")]
    BadGamma(f64),
    #[error("only the quadratic Hamiltonian (kappa = 2) is implemented, got kappa = {0}")]
    BadKappa(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    LaxFriedrichs,
    OsherSethian,
}

/// Parameters of a numerical Hamiltonian.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub scheme: SchemeKind,
    /// Homogeneity exponent; fixed to 2.
    pub kappa: f64,
    /// Gradient-bound parameter: monotonicity is guaranteed on the ball
    /// `|p|, |q| <= r0`.
    pub r0: f64,
    /// Per-edge viscosity of the LF scheme; unused by OS.
    pub gamma: f64,
}

impl HamiltonianSpec {
    /// `gamma` defaults to `2 * r0`, the smallest uniform viscosity that
    /// makes the LF scheme monotone on the `r0`-ball.
    pub fn new(
        scheme: SchemeKind,
        r0: f64,
        gamma: Option<f64>,
    ) -> Result<Self, HamiltonianError> {
        if !(r0 > 0.0) || !r0.is_finite() {
            return Err(HamiltonianError::BadR0(r0));
        }
        let gamma = gamma.unwrap_or(2.0 * r0);
        if scheme == SchemeKind::LaxFriedrichs && !(gamma > 0.0) {
            return Err(HamiltonianError::BadGamma(gamma));
        }
        Ok(Self {
            scheme,
            kappa: 2.0,
            r0,
            gamma,
        })
    }

    pub fn with_kappa(self, kappa: f64) -> Result<Self, HamiltonianError> {
        if kappa != 2.0 {
            return Err(HamiltonianError::BadKappa(kappa));
        }
        Ok(self)
    }
}

/// `H(xi, P) = I(xi)^{-2} ||P||^2_xi`, extended by zero on the boundary.
pub fn continuous_h(graph: &Graph, kind: MetricKind, xi: &[f64], p: &[f64]) -> f64 {
    let a = inv_sum_pow_neg2(xi);
    if a == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for e in 0..graph.edge_count() {
        let g = edge_metric(graph, kind, xi, e);
        total += p[e] * p[e] * g;
    }
    a * total
}

/// The numerical Hamiltonian `G(xi, P, Q)` on forward/backward quotients.
pub fn numerical_g(
    spec: &HamiltonianSpec,
    graph: &Graph,
    kind: MetricKind,
    xi: &[f64],
    p: &[f64],
    q: &[f64],
) -> f64 {
    let a = inv_sum_pow_neg2(xi);
    if a == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for e in 0..graph.edge_count() {
        let g = edge_metric(graph, kind, xi, e);
        total += g * match spec.scheme {
            SchemeKind::LaxFriedrichs => {
                0.5 * (p[e] * p[e] + q[e] * q[e]) - spec.gamma * (p[e] - q[e])
            }
            SchemeKind::OsherSethian => {
                let qp = q[e].max(0.0);
                let pm = p[e].min(0.0);
                qp * qp + pm * pm
            }
        };
    }
    a * total
}

/// `dG/dp` at one edge; nonpositive on the monotonicity ball.
pub fn dg_dp(
    spec: &HamiltonianSpec,
    graph: &Graph,
    kind: MetricKind,
    xi: &[f64],
    p_e: f64,
    edge: usize,
) -> f64 {
    let a = inv_sum_pow_neg2(xi);
    if a == 0.0 {
        return 0.0;
    }
    let g = edge_metric(graph, kind, xi, edge);
    match spec.scheme {
        SchemeKind::LaxFriedrichs => a * g * (p_e - spec.gamma),
        SchemeKind::OsherSethian => 2.0 * a * g * p_e.min(0.0),
    }
}

/// `dG/dq` at one edge; nonnegative on the monotonicity ball.
pub fn dg_dq(
    spec: &HamiltonianSpec,
    graph: &Graph,
    kind: MetricKind,
    xi: &[f64],
    q_e: f64,
    edge: usize,
) -> f64 {
    let a = inv_sum_pow_neg2(xi);
    if a == 0.0 {
        return 0.0;
    }
    let g = edge_metric(graph, kind, xi, edge);
    match spec.scheme {
        SchemeKind::LaxFriedrichs => a * g * (q_e + spec.gamma),
        SchemeKind::OsherSethian => 2.0 * a * g * q_e.max(0.0),
    }
}

/// Second derivatives `(d2G/dp2, d2G/dpdq, d2G/dq2)` at one edge.
/// OS indicators use strict inequalities at the ties `p = 0`, `q = 0`.
pub fn d2g(
    spec: &HamiltonianSpec,
    graph: &Graph,
    kind: MetricKind,
    xi: &[f64],
    p_e: f64,
    q_e: f64,
    edge: usize,
) -> (f64, f64, f64) {
    let a = inv_sum_pow_neg2(xi);
    if a == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let g = edge_metric(graph, kind, xi, edge);
    match spec.scheme {
        SchemeKind::LaxFriedrichs => (a * g, 0.0, a * g),
        SchemeKind::OsherSethian => (
            if p_e < 0.0 { 2.0 * a * g } else { 0.0 },
            0.0,
            if q_e > 0.0 { 2.0 * a * g } else { 0.0 },
        ),
    }
}

/// A witness of a failed structural check.
#[derive(Debug, Clone)]
pub struct AuditViolation {
    pub check: &'static str,
    pub edge: usize,
    pub xi: Vec<f64>,
    pub p: f64,
    pub q: f64,
    pub value: f64,
}

/// Result of a Monte-Carlo audit of the scheme assumptions.
#[derive(Debug)]
pub struct AuditReport {
    pub samples: usize,
    pub violations: Vec<AuditViolation>,
    /// max of `|G(xi,P,P) - H(xi,P)| / (1 + |H|)`
    pub max_consistency_residual: f64,
    /// max of `|G - G'| / (||P-P'|| + ||Q-Q'||)` over sample pairs
    pub max_lipschitz_ratio: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
            && self.max_consistency_residual <= 1e-12
            && self.max_lipschitz_ratio.is_finite()
    }
}

/// Uniform sample from the simplex interior.
fn sample_interior(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let mut xi: Vec<f64> = (0..d)
            .map(|_| -(rng.gen::<f64>().max(1e-300)).ln())
            .collect();
        let sum: f64 = xi.iter().sum();
        xi.iter_mut().for_each(|x| *x /= sum);
        if xi.iter().all(|&x| x > 1e-6) {
            return xi;
        }
    }
}

/// Monte-Carlo audit over `(xi, P, Q)` with `|p|, |q| <= r0`:
/// monotone partial signs (exact), consistency `G(xi,P,P) = H(xi,P)`,
/// finite local Lipschitz ratios, and per-edge second derivatives within
/// `[0, C g_ij]` with `C = 2 sup I^{-2} = 2/d^4`.
pub fn audit_assumptions(
    spec: &HamiltonianSpec,
    graph: &Graph,
    kind: MetricKind,
    samples: usize,
    seed: u64,
) -> AuditReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = graph.vertex_count();
    let ne = graph.edge_count();
    let hess_cap = 2.0 / (d as f64).powi(4);
    let mut violations = Vec::new();
    let mut max_res: f64 = 0.0;
    let mut max_lip: f64 = 0.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> = None;

    for _ in 0..samples {
        let xi = sample_interior(&mut rng, d);
        let p: Vec<f64> = (0..ne).map(|_| rng.gen_range(-spec.r0..=spec.r0)).collect();
        let q: Vec<f64> = (0..ne).map(|_| rng.gen_range(-spec.r0..=spec.r0)).collect();

        for e in 0..ne {
            let dp = dg_dp(spec, graph, kind, &xi, p[e], e);
            let dq = dg_dq(spec, graph, kind, &xi, q[e], e);
            if dp > 0.0 {
                violations.push(AuditViolation {
                    check: "monotonicity dG/dp <= 0",
                    edge: e,
                    xi: xi.clone(),
                    p: p[e],
                    q: q[e],
                    value: dp,
                });
            }
            if dq < 0.0 {
                violations.push(AuditViolation {
                    check: "monotonicity dG/dq >= 0",
                    edge: e,
                    xi: xi.clone(),
                    p: p[e],
                    q: q[e],
                    value: dq,
                });
            }
            let g = edge_metric(graph, kind, &xi, e);
            let (hpp, hpq, hqq) = d2g(spec, graph, kind, &xi, p[e], q[e], e);
            for h in [hpp, hpq, hqq] {
                if h < 0.0 || h > hess_cap * g * (1.0 + 1e-12) + 1e-300 {
                    violations.push(AuditViolation {
                        check: "second derivatives in [0, C g]",
                        edge: e,
                        xi: xi.clone(),
                        p: p[e],
                        q: q[e],
                        value: h,
                    });
                }
            }
        }

        let h_val = continuous_h(graph, kind, &xi, &p);
        let g_val = numerical_g(spec, graph, kind, &xi, &p, &p);
        let res = (g_val - h_val).abs() / (1.0 + h_val.abs());
        max_res = max_res.max(res);
        if res > 1e-12 {
            violations.push(AuditViolation {
                check: "consistency G(xi,P,P) = H(xi,P)",
                edge: usize::MAX,
                xi: xi.clone(),
                p: 0.0,
                q: 0.0,
                value: res,
            });
        }

        let g_pq = numerical_g(spec, graph, kind, &xi, &p, &q);
        if let Some((pxi, pp, pq, pg)) = &prev {
            if *pxi == xi {
                let dist: f64 = pp
                    .iter()
                    .zip(&p)
                    .chain(pq.iter().zip(&q))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist > 1e-14 {
                    max_lip = max_lip.max((g_pq - pg).abs() / dist);
                }
            }
        }
        // second draw at the same xi for the Lipschitz ratio
        let p2: Vec<f64> = (0..ne).map(|_| rng.gen_range(-spec.r0..=spec.r0)).collect();
        let q2: Vec<f64> = (0..ne).map(|_| rng.gen_range(-spec.r0..=spec.r0)).collect();
        let g2 = numerical_g(spec, graph, kind, &xi, &p2, &q2);
        let dist: f64 = p
            .iter()
            .zip(&p2)
            .chain(q.iter().zip(&q2))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist > 1e-14 {
            max_lip = max_lip.max((g_pq - g2).abs() / dist);
        }
        prev = Some((xi, p, q, g_pq));
    }

    AuditReport {
        samples,
        violations,
        max_consistency_residual: max_res,
        max_lipschitz_ratio: max_lip,
    }
}

/// Deterministic monotonicity scan: a grid of interior points, forward
/// values, and backward values per edge; returns sign violations.
pub fn audit_monotonicity_grid(
    spec: &HamiltonianSpec,
    graph: &Graph,
    kind: MetricKind,
    grid: usize,
) -> Vec<AuditViolation> {
    let d = graph.vertex_count();
    let mut violations = Vec::new();
    for k in 0..grid {
        // interior ramp family: xi_i proportional to 1 + t i
        let t = (k + 1) as f64 / (grid + 1) as f64 * 3.0;
        let mut xi: Vec<f64> = (0..d).map(|i| 1.0 + t * i as f64).collect();
        let sum: f64 = xi.iter().sum();
        xi.iter_mut().for_each(|x| *x /= sum);
        for e in 0..graph.edge_count() {
            for a in 0..grid {
                let p = -spec.r0 + 2.0 * spec.r0 * a as f64 / (grid - 1) as f64;
                for b in 0..grid {
                    let q = -spec.r0 + 2.0 * spec.r0 * b as f64 / (grid - 1) as f64;
                    let dp = dg_dp(spec, graph, kind, &xi, p, e);
                    let dq = dg_dq(spec, graph, kind, &xi, q, e);
                    if dp > 0.0 || dq < 0.0 {
                        violations.push(AuditViolation {
                            check: "grid monotonicity",
                            edge: e,
                            xi: xi.clone(),
                            p,
                            q,
                            value: if dp > 0.0 { dp } else { dq },
                        });
                    }
                }
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{xi_norm_sq, SimplexPoint};

    fn two_node() -> Graph {
        Graph::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    fn lf(r0: f64) -> HamiltonianSpec {
        HamiltonianSpec::new(SchemeKind::LaxFriedrichs, r0, None).unwrap()
    }

    fn os(r0: f64) -> HamiltonianSpec {
        HamiltonianSpec::new(SchemeKind::OsherSethian, r0, None).unwrap()
    }

    #[test]
    fn continuous_h_examples() {
        let g = two_node();
        let xi = [0.5, 0.5];
        let got = continuous_h(&g, MetricKind::Average, &xi, &[2.0]);
        assert!((got - 0.125).abs() < 1e-16);
        assert_eq!(continuous_h(&g, MetricKind::Average, &xi, &[0.0]), 0.0);
        assert_eq!(continuous_h(&g, MetricKind::Average, &[0.0, 1.0], &[7.0]), 0.0);
    }

    #[test]
    fn numerical_g_examples() {
        let g = two_node();
        let xi = [0.5, 0.5];
        for spec in [lf(2.0), os(2.0)] {
            let got = numerical_g(&spec, &g, MetricKind::Average, &xi, &[2.0], &[2.0]);
            assert!((got - 0.125).abs() < 1e-16, "{:?}", spec.scheme);
            assert_eq!(
                numerical_g(&spec, &g, MetricKind::Average, &xi, &[0.0], &[0.0]),
                0.0
            );
        }
        let got = numerical_g(&os(2.0), &g, MetricKind::Average, &xi, &[-1.0], &[2.0]);
        assert!((got - 0.15625).abs() < 1e-16);
    }

    #[test]
    fn derivative_examples() {
        let g = two_node();
        let xi = [0.5, 0.5];
        // gamma = 2, g = 0.5, I^{-2} = 1/16
        let spec = HamiltonianSpec::new(SchemeKind::LaxFriedrichs, 1.0, Some(2.0)).unwrap();
        let dp = dg_dp(&spec, &g, MetricKind::Average, &xi, 0.0, 0);
        assert!((dp + 1.0 / 16.0).abs() < 1e-16);
        let dp_os = dg_dp(&os(1.0), &g, MetricKind::Average, &xi, 0.5, 0);
        assert_eq!(dp_os, 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let g = Graph::complete(3).unwrap();
        let xi = [0.2, 0.3, 0.5];
        let eps = 1e-6;
        for spec in [lf(2.0), os(2.0)] {
            for kind in [MetricKind::Average, MetricKind::Harmonic] {
                // stay away from the OS kinks at p = 0, q = 0
                let p = [0.7, -0.9, 0.4];
                let q = [-0.3, 0.8, -1.1];
                for e in 0..3 {
                    let mut pp = p;
                    pp[e] += eps;
                    let mut pm = p;
                    pm[e] -= eps;
                    let fd = (numerical_g(&spec, &g, kind, &xi, &pp, &q)
                        - numerical_g(&spec, &g, kind, &xi, &pm, &q))
                        / (2.0 * eps);
                    let an = dg_dp(&spec, &g, kind, &xi, p[e], e);
                    assert!(
                        (fd - an).abs() < 1e-8,
                        "{:?} {kind:?} edge {e}: fd {fd} vs analytic {an}",
                        spec.scheme
                    );
                    let mut qp = q;
                    qp[e] += eps;
                    let mut qm = q;
                    qm[e] -= eps;
                    let fd = (numerical_g(&spec, &g, kind, &xi, &p, &qp)
                        - numerical_g(&spec, &g, kind, &xi, &p, &qm))
                        / (2.0 * eps);
                    let an = dg_dq(&spec, &g, kind, &xi, q[e], e);
                    assert!(
                        (fd - an).abs() < 1e-8,
                        "{:?} {kind:?} edge {e}: fd {fd} vs analytic {an}",
                        spec.scheme
                    );
                }
            }
        }
    }

    #[test]
    fn consistency_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for d in [2usize, 3] {
            let g = Graph::complete(d).unwrap();
            for kind in [
                MetricKind::Average,
                MetricKind::Logarithmic,
                MetricKind::Harmonic,
            ] {
                for spec in [lf(2.0), os(2.0)] {
                    for _ in 0..10_000 {
                        let xi = sample_interior(&mut rng, d);
                        let p: Vec<f64> =
                            (0..g.edge_count()).map(|_| rng.gen_range(-2.0..2.0)).collect();
                        let h = continuous_h(&g, kind, &xi, &p);
                        let gv = numerical_g(&spec, &g, kind, &xi, &p, &p);
                        assert!(
                            (gv - h).abs() <= 1e-12 * (1.0 + h.abs()),
                            "{:?} {kind:?} residual {}",
                            spec.scheme,
                            (gv - h).abs()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn monotone_signs_exact_on_ball() {
        let g = Graph::complete(3).unwrap();
        for spec in [lf(1.5), os(1.5)] {
            let v = audit_monotonicity_grid(&spec, &g, MetricKind::Logarithmic, 20);
            assert!(v.is_empty(), "{:?}: {} violations", spec.scheme, v.len());
        }
    }

    #[test]
    fn audit_passes_for_valid_specs() {
        let g2 = two_node();
        let rep = audit_assumptions(&lf(2.0), &g2, MetricKind::Average, 1000, 42);
        assert!(rep.passed(), "{:?}", rep.violations.first());
        let g3 = Graph::complete(3).unwrap();
        let rep = audit_assumptions(&os(2.0), &g3, MetricKind::Harmonic, 1000, 42);
        assert!(rep.passed(), "{:?}", rep.violations.first());
    }

    #[test]
    fn audit_catches_undersized_viscosity() {
        let g = two_node();
        let spec = HamiltonianSpec::new(SchemeKind::LaxFriedrichs, 2.0, Some(1.0)).unwrap();
        let rep = audit_assumptions(&spec, &g, MetricKind::Average, 1000, 42);
        assert!(rep
            .violations
            .iter()
            .any(|v| v.check.contains("dG/dp")));
    }

    #[test]
    fn boundary_degeneracy() {
        let g = two_node();
        for kind in [
            MetricKind::Average,
            MetricKind::Logarithmic,
            MetricKind::Harmonic,
        ] {
            let mut prev = f64::INFINITY;
            for k in 1..=6 {
                let eps = 10f64.powi(-k);
                let xi = [eps, 1.0 - eps];
                let gv = numerical_g(&lf(1.0), &g, kind, &xi, &[1.0], &[-1.0]);
                assert!(gv.abs() < prev.max(1e-30), "{kind:?} not decaying");
                prev = gv.abs();
            }
            assert!(prev < 1e-8, "{kind:?} limit {prev}");
        }
    }

    #[test]
    fn os_dissipation_nonnegative() {
        let g = two_node();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let spec = os(2.0);
        for _ in 0..2000 {
            let xi = sample_interior(&mut rng, 2);
            let p = -rng.gen::<f64>() * 2.0; // p <= 0
            let q = rng.gen::<f64>() * 2.0; // q >= 0
            let gv = numerical_g(&spec, &g, MetricKind::Average, &xi, &[p], &[q]);
            let mid = 0.5 * (p + q);
            let pt = SimplexPoint::new(xi.clone()).unwrap();
            let h_mid = inv_sum_pow_neg2(&xi)
                * xi_norm_sq(&g, MetricKind::Average, &pt, &[mid]).unwrap();
            let diss = gv - h_mid;
            let floor = 0.25
                * (p - q)
                * (p - q)
                * inv_sum_pow_neg2(&xi)
                * crate::graph::metric_weight(MetricKind::Average, xi[0], xi[1]).unwrap();
            assert!(diss + 1e-14 >= floor.max(0.0), "dissipation {diss} < floor {floor}");
        }
    }
}
