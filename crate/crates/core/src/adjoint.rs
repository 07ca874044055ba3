//! The forward linearized dual equation, the backward weighted adjoint
//! equation, and the duality/IBP verification machinery.
//!
//! The linearized operator freezes the coefficients
//! `A_ij = dG/dp`, `B_ij = dG/dq` along a stored trajectory of the
//! nonlinear solve. The backward adjoint advances the conserved density
//! `rho = sigma w` in flux form
//! `d rho/ds + sum_e (sqrt(omega)/h) (D^-[rho A] + D^+[rho B]) = 0`,
//! which is the exact transpose of the Euler dual step: weighted mass is
//! conserved to rounding because the coefficients vanish identically at
//! boundary sites. The decomposed form with its geometric drift is
//! algebraically identical and is verified sitewise in tests, never
//! assembled separately.

use thiserror::Error;

use rayon::prelude::*;

use crate::hamiltonian::{dg_dp, dg_dq};
use crate::mesh::{pairwise_sum, Field};
use crate::scheme::{Solver, Trajectory};

#[derive(Debug, Error)]
pub enum AdjointError {
    #[error("Dirac terminal site {site} lies on the boundary (weight vanishes there)")]
    DiracOnBoundary { site: usize },
    #[error("maximum principle violated at step {step}: {kind} drifted by {drift}")]
    MaxPrincipleViolated {
        step: usize,
        kind: &'static str,
        drift: f64,
    },
    #[error("adjoint density went negative at t = {t}: min rho = {value}")]
    NegativeDensity { t: f64, value: f64 },
    #[error("terminal field lives on a different lattice")]
    LatticeMismatch,
}

/// Frozen linearization coefficients at one time level.
#[derive(Debug, Clone)]
pub struct LinearizedCoeffs {
    /// `dG/dp` per site and edge; nonpositive on the monotonicity ball.
    pub a: Vec<f64>,
    /// `dG/dq` per site and edge; nonnegative on the monotonicity ball.
    pub b: Vec<f64>,
    pub n_edges: usize,
}

impl LinearizedCoeffs {
    /// Evaluates `A = dG/dp`, `B = dG/dq` at `(xi, [D+u], [D-u])`.
    pub fn evaluate(solver: &Solver, u: &Field) -> Self {
        let pair = solver.diff_pair(u);
        let ne = pair.n_edges;
        let lat = &solver.lattice;
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..lat.num_sites())
            .into_par_iter()
            .map(|s| {
                let xi = lat.xi(s);
                let p = pair.forward_at(s);
                let q = pair.backward_at(s);
                let a: Vec<f64> = (0..ne)
                    .map(|e| dg_dp(&solver.spec, &solver.graph, solver.metric, xi, p[e], e))
                    .collect();
                let b: Vec<f64> = (0..ne)
                    .map(|e| dg_dq(&solver.spec, &solver.graph, solver.metric, xi, q[e], e))
                    .collect();
                (a, b)
            })
            .collect();
        let mut a = Vec::with_capacity(lat.num_sites() * ne);
        let mut b = Vec::with_capacity(lat.num_sites() * ne);
        for (ra, rb) in rows {
            a.extend(ra);
            b.extend(rb);
        }
        Self { a, b, n_edges: ne }
    }

    pub fn a_at(&self, site: usize) -> &[f64] {
        &self.a[site * self.n_edges..(site + 1) * self.n_edges]
    }

    pub fn b_at(&self, site: usize) -> &[f64] {
        &self.b[site * self.n_edges..(site + 1) * self.n_edges]
    }
}

/// Applies the linearized operator
/// `(L phi)(x) = sum_e (sqrt(omega)/h) (A D^+ phi + B D^- phi)`
/// with constant extrapolation on `phi`.
pub fn linearized_apply(solver: &Solver, coeffs: &LinearizedCoeffs, phi: &Field) -> Field {
    let lat = &solver.lattice;
    let h = solver.h();
    let vals = phi.values();
    let values: Vec<f64> = (0..lat.num_sites())
        .into_par_iter()
        .map(|s| {
            let a = coeffs.a_at(s);
            let b = coeffs.b_at(s);
            let mut acc = 0.0;
            for e in 0..coeffs.n_edges {
                let sw = solver.graph.sqrt_omega(e) / h;
                let p = solver.edge_rank(e);
                if let Some(up) = lat.shift_by_rank(s, p, 1) {
                    acc += sw * a[e] * (vals[up] - vals[s]);
                }
                if let Some(dn) = lat.shift_by_rank(s, p, -1) {
                    acc += sw * b[e] * (vals[s] - vals[dn]);
                }
            }
            acc
        })
        .collect();
    Field::from_values(lat.clone(), values)
}

/// Forward dual trajectory with its stepwise extrema.
#[derive(Debug)]
pub struct DualRun {
    pub times: Vec<f64>,
    pub phis: Vec<Field>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

/// Solves the forward linearized equation `d phi/dt + L phi = 0` by
/// Euler steps along the stored trajectory, starting from level
/// `t0_level`. The discrete maximum principle (min nondecreasing, max
/// nonincreasing) is enforced stepwise; a violation beyond rounding
/// indicates a broken CFL coupling and aborts.
pub fn forward_dual_solve(
    solver: &Solver,
    traj: &Trajectory,
    f: &Field,
    t0_level: usize,
) -> Result<DualRun, AdjointError> {
    let tol = 1e-12 * (1.0 + f.linf());
    let mut phis = vec![f.clone()];
    let mut mins = vec![f.min()];
    let mut maxs = vec![f.max()];
    let mut phi = f.clone();
    let mut err: Option<AdjointError> = None;
    traj.for_each_forward(solver, |n, u_n| {
        if n < t0_level || err.is_some() {
            return;
        }
        let coeffs = LinearizedCoeffs::evaluate(solver, u_n);
        let l_phi = linearized_apply(solver, &coeffs, &phi);
        let mut next = phi.clone();
        for (o, l) in next.values_mut().iter_mut().zip(l_phi.values()) {
            *o -= traj.dts[n] * l;
        }
        let (mn, mx) = (next.min(), next.max());
        if mn < mins.last().unwrap() - tol {
            err = Some(AdjointError::MaxPrincipleViolated {
                step: n,
                kind: "min",
                drift: mins.last().unwrap() - mn,
            });
            return;
        }
        if mx > maxs.last().unwrap() + tol {
            err = Some(AdjointError::MaxPrincipleViolated {
                step: n,
                kind: "max",
                drift: mx - maxs.last().unwrap(),
            });
            return;
        }
        mins.push(mn);
        maxs.push(mx);
        phis.push(next.clone());
        phi = next;
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(DualRun {
        times: traj.times[t0_level..].to_vec(),
        phis,
        mins,
        maxs,
    })
}

/// Terminal datum of the backward adjoint equation.
#[derive(Debug, Clone)]
pub enum TerminalData {
    /// `sigma(T) = 1_site / (h^{d-1} w(site))`, i.e. `rho(T) = 1_site / h^{d-1}`.
    DiracAtSite(usize),
    /// `sigma(T) = nu`, i.e. `rho(T) = nu w`.
    General(Field),
}

/// Adjoint pair at one time level. `sigma = rho / w` on interior sites;
/// boundary sites carry `sigma = 0` (the weight vanishes there and the
/// evolution never divides by it).
#[derive(Debug, Clone)]
pub struct AdjointState {
    pub sigma: Field,
    pub rho: Field,
}

/// Backward adjoint run: conservation data per level (forward order),
/// optionally with full states.
#[derive(Debug)]
pub struct AdjointRun {
    pub times: Vec<f64>,
    /// `sum rho h^{d-1}` per level
    pub mass: Vec<f64>,
    /// min of `sigma` over interior sites per level
    pub min_sigma: Vec<f64>,
    /// `max |w sigma| = max |rho|` per level
    pub max_wsigma: Vec<f64>,
    pub initial: AdjointState,
    pub terminal: AdjointState,
    /// all levels when requested (index = level)
    pub states: Option<Vec<AdjointState>>,
}

fn sigma_from_rho(solver: &Solver, rho: &Field) -> Field {
    let lat = &solver.lattice;
    let values = (0..lat.num_sites())
        .map(|s| {
            if lat.is_boundary(s) {
                0.0
            } else {
                rho.values()[s] / solver.weight.values()[s]
            }
        })
        .collect();
    Field::from_values(lat.clone(), values)
}

fn min_interior(solver: &Solver, sigma: &Field) -> f64 {
    let lat = &solver.lattice;
    (0..lat.num_sites())
        .filter(|&s| !lat.is_boundary(s))
        .map(|s| sigma.values()[s])
        .fold(f64::INFINITY, f64::min)
}

/// One backward flux-form step: `rho_n = rho_{n+1} + dt * div`, the
/// exact transpose of the Euler dual step with the level-`n`
/// coefficients (zero extension on the flux products).
fn backward_step(solver: &Solver, coeffs: &LinearizedCoeffs, rho: &Field, dt: f64) -> Field {
    let lat = &solver.lattice;
    let h = solver.h();
    let vals = rho.values();
    let values: Vec<f64> = (0..lat.num_sites())
        .into_par_iter()
        .map(|s| {
            let mut acc = 0.0;
            for e in 0..coeffs.n_edges {
                let sw = solver.graph.sqrt_omega(e) / h;
                let p = solver.edge_rank(e);
                // D^-[rho A](s) = (rho A)(s) - (rho A)(s - h e)
                let mut flux = vals[s] * coeffs.a_at(s)[e];
                if let Some(dn) = lat.shift_by_rank(s, p, -1) {
                    flux -= vals[dn] * coeffs.a_at(dn)[e];
                }
                // D^+[rho B](s) = (rho B)(s + h e) - (rho B)(s)
                let mut flux_b = -vals[s] * coeffs.b_at(s)[e];
                if let Some(up) = lat.shift_by_rank(s, p, 1) {
                    flux_b += vals[up] * coeffs.b_at(up)[e];
                }
                acc += sw * (flux + flux_b);
            }
            vals[s] + dt * acc
        })
        .collect();
    Field::from_values(lat.clone(), values)
}

/// Solves the backward weighted adjoint equation from `T` down to 0.
///
/// The density `rho = sigma w` is evolved in conservative flux form, so
/// the weighted mass `sum rho h^{d-1}` is conserved structurally; sigma
/// is recovered only on interior sites.
pub fn adjoint_backward_solve(
    solver: &Solver,
    traj: &Trajectory,
    terminal: &TerminalData,
    store_states: bool,
) -> Result<AdjointRun, AdjointError> {
    let lat = &solver.lattice;
    let vol = lat.cell_volume();
    let rho_terminal = match terminal {
        TerminalData::DiracAtSite(site) => {
            if lat.is_boundary(*site) {
                return Err(AdjointError::DiracOnBoundary { site: *site });
            }
            let mut rho = Field::zeros(lat.clone());
            rho.values_mut()[*site] = 1.0 / vol;
            rho
        }
        TerminalData::General(nu) => {
            if !nu.same_lattice(&solver.weight) {
                return Err(AdjointError::LatticeMismatch);
            }
            let values = nu
                .values()
                .iter()
                .zip(solver.weight.values())
                .map(|(n, w)| n * w)
                .collect();
            Field::from_values(lat.clone(), values)
        }
    };

    let steps = traj.steps();
    let mut states_rev: Vec<Field> = Vec::with_capacity(steps + 1);
    states_rev.push(rho_terminal.clone());
    let mut rho = rho_terminal.clone();
    traj.for_each_backward(solver, |n, u_n| {
        let coeffs = LinearizedCoeffs::evaluate(solver, u_n);
        rho = backward_step(solver, &coeffs, &rho, traj.dts[n]);
        states_rev.push(rho.clone());
    });
    states_rev.reverse(); // now index = level

    let neg_tol = 1e-10 * (1.0 + rho_terminal.linf());
    let mut mass = Vec::with_capacity(steps + 1);
    let mut min_sigma = Vec::with_capacity(steps + 1);
    let mut max_wsigma = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    for (level, rho_n) in states_rev.iter().enumerate() {
        let m = pairwise_sum(rho_n.values()) * vol;
        let sigma = sigma_from_rho(solver, rho_n);
        let mn = min_interior(solver, &sigma);
        if rho_n.values().iter().any(|&r| r < -neg_tol) {
            return Err(AdjointError::NegativeDensity {
                t: traj.times[level],
                value: rho_n.min(),
            });
        }
        mass.push(m);
        min_sigma.push(mn);
        max_wsigma.push(rho_n.linf());
        states.push(AdjointState {
            sigma,
            rho: rho_n.clone(),
        });
    }
    let initial = states.first().unwrap().clone();
    let terminal_state = states.last().unwrap().clone();
    Ok(AdjointRun {
        times: traj.times.clone(),
        mass,
        min_sigma,
        max_wsigma,
        initial,
        terminal: terminal_state,
        states: if store_states { Some(states) } else { None },
    })
}

/// Both sides of the weighted integration-by-parts identity for one edge
/// direction, as lattice sums.
#[derive(Debug, Clone, Copy)]
pub struct IbpResult {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// total absolute mass of all summands, for relative tolerances
    pub scale: f64,
}

/// Evaluates the weighted IBP identity with explicit flux fields:
/// fluxes are zero-extended, `phi` is constant-extrapolated, and
/// difference quotients of `w` vanish where a shift exits. The residual
/// is zero (to rounding) exactly when `w` vanishes on boundary sites.
pub fn ibp_check_fluxes(
    solver: &Solver,
    pair: (usize, usize),
    weight: &Field,
    a_flux: &Field,
    b_flux: &Field,
    phi: &Field,
) -> IbpResult {
    let lat = &solver.lattice;
    let p = crate::mesh::pair_rank(lat.dim(), pair.0, pair.1);
    let vol = lat.cell_volume();
    let w = weight.values();
    let a = a_flux.values();
    let b = b_flux.values();
    let f = phi.values();
    let mut lhs_terms = Vec::with_capacity(lat.num_sites());
    let mut rhs_terms = Vec::with_capacity(3 * lat.num_sites());
    let mut scale = 0.0;
    for s in 0..lat.num_sites() {
        let up = lat.shift_by_rank(s, p, 1);
        let dn = lat.shift_by_rank(s, p, -1);
        // LHS: phi w (D^- a + D^+ b), fluxes zero-extended
        let dminus_a = a[s] - dn.map_or(0.0, |t| a[t]);
        let dplus_b = up.map_or(0.0, |t| b[t]) - b[s];
        let t0 = f[s] * w[s] * (dminus_a + dplus_b);
        lhs_terms.push(t0);
        scale += t0.abs();
        // RHS: -(a D^+ phi + b D^- phi) w
        //      - a phi(up) D^+ w - b phi(dn) D^- w
        let dplus_phi = up.map_or(0.0, |t| f[t] - f[s]);
        let dminus_phi = dn.map_or(0.0, |t| f[s] - f[t]);
        let t1 = -(a[s] * dplus_phi + b[s] * dminus_phi) * w[s];
        let phi_up = up.map_or(f[s], |t| f[t]);
        let phi_dn = dn.map_or(f[s], |t| f[t]);
        let dplus_w = up.map_or(0.0, |t| w[t] - w[s]);
        let dminus_w = dn.map_or(0.0, |t| w[s] - w[t]);
        let t2 = -a[s] * phi_up * dplus_w;
        let t3 = -b[s] * phi_dn * dminus_w;
        rhs_terms.push(t1);
        rhs_terms.push(t2);
        rhs_terms.push(t3);
        scale += t1.abs() + t2.abs() + t3.abs();
    }
    let lhs = pairwise_sum(&lhs_terms) * vol;
    let rhs = pairwise_sum(&rhs_terms) * vol;
    IbpResult {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        scale: scale.max(1.0) * vol,
    }
}

/// IBP check with scheme coefficients: fluxes `A = sigma dG/dp`,
/// `B = sigma dG/dq` on the given graph edge.
pub fn ibp_check(
    solver: &Solver,
    coeffs: &LinearizedCoeffs,
    weight: &Field,
    phi: &Field,
    sigma: &Field,
    edge: usize,
) -> IbpResult {
    let lat = &solver.lattice;
    let a = Field::from_values(
        lat.clone(),
        (0..lat.num_sites())
            .map(|s| sigma.values()[s] * coeffs.a_at(s)[edge])
            .collect(),
    );
    let b = Field::from_values(
        lat.clone(),
        (0..lat.num_sites())
            .map(|s| sigma.values()[s] * coeffs.b_at(s)[edge])
            .collect(),
    );
    ibp_check_fluxes(
        solver,
        solver.graph.edges()[edge],
        weight,
        &a,
        &b,
        phi,
    )
}

/// Weighted duality identity residual for a Dirac adjoint:
/// `| int_0^T sum sigma (L phi) w h^{d-1} dt - phi(T, xi_0)
///    + sum phi(0) sigma(0) w h^{d-1} |`
/// with the trapezoid rule in time. `phi` and its time derivative are
/// supplied analytically.
pub fn duality_check(
    solver: &Solver,
    traj: &Trajectory,
    run: &AdjointRun,
    site: usize,
    phi: &dyn Fn(f64, &[f64]) -> f64,
    dphi_dt: &dyn Fn(f64, &[f64]) -> f64,
) -> f64 {
    let lat = &solver.lattice;
    let vol = lat.cell_volume();
    let states = run
        .states
        .as_ref()
        .expect("duality_check needs stored adjoint states");
    // integrand per level: sum_s sigma (dphi/dt + L phi) w h^{d-1}
    let mut integrand = Vec::with_capacity(traj.times.len());
    for (level, t) in traj.times.iter().enumerate() {
        let phi_field = Field::tabulate(lat, |xi| phi(*t, xi));
        let u_level = traj.state_at(solver, level);
        let coeffs = LinearizedCoeffs::evaluate(solver, &u_level);
        let l_phi = linearized_apply(solver, &coeffs, &phi_field);
        let terms: Vec<f64> = (0..lat.num_sites())
            .map(|s| {
                let total = dphi_dt(*t, lat.xi(s)) + l_phi.values()[s];
                states[level].rho.values()[s] * total
            })
            .collect();
        integrand.push(pairwise_sum(&terms) * vol);
    }
    let mut integral = 0.0;
    for n in 0..traj.dts.len() {
        integral += 0.5 * traj.dts[n] * (integrand[n] + integrand[n + 1]);
    }
    let phi_t = phi(*traj.times.last().unwrap(), lat.xi(site));
    let init_terms: Vec<f64> = (0..lat.num_sites())
        .map(|s| phi(0.0, lat.xi(s)) * states[0].rho.values()[s])
        .collect();
    let init = pairwise_sum(&init_terms) * vol;
    (integral - phi_t + init).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, MetricKind};
    use crate::hamiltonian::SchemeKind;
    use crate::mesh::Field;
    use crate::problem::{InitialData, Potential};
    use crate::scheme::{Integrator, SolverConfig};
    use crate::weight::{weight_field, WeightSpec};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn config(d: usize, n: u32, scheme: SchemeKind) -> SolverConfig {
        SolverConfig {
            graph: Graph::complete(d).unwrap(),
            metric: MetricKind::Average,
            n,
            scheme,
            r0: Some(2.5),
            gamma: None,
            cfl: 0.9,
            integrator: Integrator::Euler,
            weight: WeightSpec::Polynomial { alpha: 1.0 },
            u0: InitialData::Quadratic { coeffs: None },
            potential: Potential::Zero,
            t_final: 0.25,
            dt_max: None,
            site_budget: 1 << 22,
            max_snapshots: 4096,
        }
    }

    #[test]
    fn coefficients_vanish_at_boundary_sites() {
        let solver = Solver::new(&config(2, 16, SchemeKind::LaxFriedrichs)).unwrap();
        let coeffs = LinearizedCoeffs::evaluate(&solver, &solver.u0);
        for s in 0..solver.lattice.num_sites() {
            if solver.lattice.is_boundary(s) {
                assert!(coeffs.a_at(s).iter().all(|&x| x == 0.0));
                assert!(coeffs.b_at(s).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn linearized_apply_kills_constants() {
        let solver = Solver::new(&config(3, 8, SchemeKind::LaxFriedrichs)).unwrap();
        let coeffs = LinearizedCoeffs::evaluate(&solver, &solver.u0);
        let ones = Field::tabulate(&solver.lattice, |_| 1.0);
        let out = linearized_apply(&solver, &coeffs, &ones);
        assert!(out.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linearized_apply_zero_coeffs() {
        // zero field under OS: all upwind branches closed
        let mut cfg = config(2, 8, SchemeKind::OsherSethian);
        cfg.u0 = InitialData::Constant { value: 0.0 };
        let solver = Solver::new(&cfg).unwrap();
        let coeffs = LinearizedCoeffs::evaluate(&solver, &solver.u0);
        let phi = Field::tabulate(&solver.lattice, |xi| xi[0] * 3.0 - xi[1]);
        let out = linearized_apply(&solver, &coeffs, &phi);
        assert!(out.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linearized_apply_single_site_hand_assembly() {
        let solver = Solver::new(&config(2, 4, SchemeKind::LaxFriedrichs)).unwrap();
        let coeffs = LinearizedCoeffs::evaluate(&solver, &solver.u0);
        let phi = Field::tabulate(&solver.lattice, |xi| xi[0] * xi[0] * 2.0 + xi[1]);
        let out = linearized_apply(&solver, &coeffs, &phi);
        let lat = &solver.lattice;
        let s = lat.site_at(&[2]).unwrap();
        let up = lat.site_at(&[3]).unwrap();
        let dn = lat.site_at(&[1]).unwrap();
        let h = lat.h();
        let expect = (coeffs.a_at(s)[0] * (phi.values()[up] - phi.values()[s])
            + coeffs.b_at(s)[0] * (phi.values()[s] - phi.values()[dn]))
            / h;
        assert!((out.values()[s] - expect).abs() < 1e-14);
    }

    #[test]
    fn forward_dual_constant_is_fixed_point() {
        let solver = Solver::new(&config(2, 16, SchemeKind::LaxFriedrichs)).unwrap();
        let traj = solver.solve_trajectory().unwrap();
        let ones = Field::tabulate(&solver.lattice, |_| 1.0);
        let run = forward_dual_solve(&solver, &traj, &ones, 0).unwrap();
        for phi in &run.phis {
            assert!(phi.values().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn forward_dual_max_principle_random_data() {
        let solver = Solver::new(&config(3, 8, SchemeKind::OsherSethian)).unwrap();
        let traj = solver.solve_trajectory().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let coeff: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..2.0)).collect();
            let f = Field::tabulate(&solver.lattice, |xi| {
                xi.iter().zip(&coeff).map(|(x, c)| c * x * x).sum::<f64>() + 0.1
            });
            let run = forward_dual_solve(&solver, &traj, &f, 0).unwrap();
            let tol = 1e-12 * (1.0 + f.linf());
            assert!(run.phis.iter().all(|p| p.min() >= -tol), "nonnegativity");
            assert!(run
                .phis
                .iter()
                .all(|p| p.linf() <= f.linf() + tol));
        }
    }

    fn mass_drift(run: &AdjointRun) -> f64 {
        run.mass
            .iter()
            .map(|m| (m - run.mass.last().unwrap()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn adjoint_mass_conservation_dirac() {
        for scheme in [SchemeKind::LaxFriedrichs, SchemeKind::OsherSethian] {
            let solver = Solver::new(&config(2, 16, scheme)).unwrap();
            let traj = solver.solve_trajectory().unwrap();
            let site = solver.lattice.site_at(&[8]).unwrap();
            let run =
                adjoint_backward_solve(&solver, &traj, &TerminalData::DiracAtSite(site), false)
                    .unwrap();
            assert!((run.mass.last().unwrap() - 1.0).abs() < 1e-14);
            assert!(mass_drift(&run) <= 1e-10, "drift {}", mass_drift(&run));
            // nonnegativity of sigma for nonnegative terminal
            assert!(run.min_sigma.iter().all(|&m| m >= -1e-12));
        }
    }

    #[test]
    fn adjoint_rejects_boundary_dirac() {
        let solver = Solver::new(&config(2, 8, SchemeKind::LaxFriedrichs)).unwrap();
        let boundary = solver.lattice.site_at(&[0]).unwrap();
        assert!(matches!(
            adjoint_backward_solve(
                &solver,
                &solver.solve_trajectory().unwrap(),
                &TerminalData::DiracAtSite(boundary),
                false
            ),
            Err(AdjointError::DiracOnBoundary { .. })
        ));
    }

    #[test]
    fn drift_decomposition_identity_sitewise() {
        // conservative form == decomposed form + geometric drift, exactly:
        // D^-[rho A](s) = w(s) D^-[sigma A](s) + (sigma A)(s-he) D^- w(s)
        // with zero extension on products and on w
        let solver = Solver::new(&config(2, 8, SchemeKind::LaxFriedrichs)).unwrap();
        let lat = &solver.lattice;
        let coeffs = LinearizedCoeffs::evaluate(&solver, &solver.u0);
        let w = weight_field(&WeightSpec::Polynomial { alpha: 1.0 }, lat);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = Field::from_values(
            lat.clone(),
            (0..lat.num_sites()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let p = 0usize; // edge (0,1)
        for s in 0..lat.num_sites() {
            let a_of = |t: usize| sigma.values()[t] * coeffs.a_at(t)[0];
            let dn = lat.shift_by_rank(s, p, -1);
            let conservative = a_of(s) * w.values()[s] - dn.map_or(0.0, |t| a_of(t) * w.values()[t]);
            let decomposed = w.values()[s] * (a_of(s) - dn.map_or(0.0, |t| a_of(t)))
                + dn.map_or(0.0, |t| a_of(t)) * (w.values()[s] - dn.map_or(0.0, |t| w.values()[t]));
            assert!(
                (conservative - decomposed).abs() <= 1e-14 * (1.0 + conservative.abs()),
                "site {s}: {conservative} vs {decomposed}"
            );
        }
    }

    #[test]
    fn ibp_residual_zero_for_admissible_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in [2usize, 3] {
            let solver = Solver::new(&config(d, 8, SchemeKind::LaxFriedrichs)).unwrap();
            let lat = &solver.lattice;
            for spec in [
                WeightSpec::Polynomial { alpha: 1.0 },
                WeightSpec::Exponential { lambda: 0.5 },
            ] {
                let w = weight_field(&spec, lat);
                for _ in 0..20 {
                    let phi = Field::from_values(
                        lat.clone(),
                        (0..lat.num_sites()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    );
                    // random fluxes, nonzero even at boundary sites
                    let a = Field::from_values(
                        lat.clone(),
                        (0..lat.num_sites()).map(|_| rng.gen_range(-1.0..0.0)).collect(),
                    );
                    let b = Field::from_values(
                        lat.clone(),
                        (0..lat.num_sites()).map(|_| rng.gen_range(0.0..1.0)).collect(),
                    );
                    let res = ibp_check_fluxes(&solver, (0, 1), &w, &a, &b, &phi);
                    assert!(
                        res.residual <= 1e-12 * res.scale,
                        "d = {d}: residual {} scale {}",
                        res.residual,
                        res.scale
                    );
                }
            }
        }
    }

    #[test]
    fn ibp_zero_phi_and_inadmissible_weight() {
        let solver = Solver::new(&config(2, 8, SchemeKind::LaxFriedrichs)).unwrap();
        let lat = &solver.lattice;
        let w = weight_field(&WeightSpec::Polynomial { alpha: 1.0 }, lat);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = Field::from_values(
            lat.clone(),
            (0..lat.num_sites()).map(|_| rng.gen_range(-1.0..0.0)).collect(),
        );
        let b = Field::from_values(
            lat.clone(),
            (0..lat.num_sites()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        );
        let zero = Field::zeros(lat.clone());
        let res = ibp_check_fluxes(&solver, (0, 1), &w, &a, &b, &zero);
        assert_eq!(res.residual, 0.0);

        // weight = 1 everywhere, including boundary sites: inadmissible,
        // boundary terms no longer cancel
        let ones = Field::tabulate(lat, |_| 1.0);
        let phi = Field::tabulate(lat, |xi| xi[0] + 0.5);
        let res = ibp_check_fluxes(&solver, (0, 1), &ones, &a, &b, &phi);
        assert!(res.residual > 1e-6, "residual {}", res.residual);
    }

    #[test]
    fn duality_identity_examples() {
        let solver = Solver::new(&config(2, 16, SchemeKind::LaxFriedrichs)).unwrap();
        let traj = solver.solve_trajectory().unwrap();
        let site = solver.lattice.site_at(&[8]).unwrap();
        let run =
            adjoint_backward_solve(&solver, &traj, &TerminalData::DiracAtSite(site), true)
                .unwrap();
        // phi = 1: reduces to mass conservation
        let res = duality_check(&solver, &traj, &run, site, &|_, _| 1.0, &|_, _| 0.0);
        assert!(res <= 1e-8, "phi = 1 residual {res}");
        // phi = t: L phi = 1, integral reads T
        let res = duality_check(&solver, &traj, &run, site, &|t, _| t, &|_, _| 1.0);
        assert!(res <= 1e-6, "phi = t residual {res}");
        // generic smooth phi: refinement shrinks the residual
        let smooth = |t: f64, xi: &[f64]| (1.0 + t) * xi[0] * xi[0] + 0.3 * xi[1];
        let dsmooth = |_t: f64, xi: &[f64]| xi[0] * xi[0];
        let res16 = duality_check(&solver, &traj, &run, site, &smooth, &dsmooth);
        let solver32 = Solver::new(&config(2, 32, SchemeKind::LaxFriedrichs)).unwrap();
        let traj32 = solver32.solve_trajectory().unwrap();
        let site32 = solver32.lattice.site_at(&[16]).unwrap();
        let run32 =
            adjoint_backward_solve(&solver32, &traj32, &TerminalData::DiracAtSite(site32), true)
                .unwrap();
        let res32 = duality_check(&solver32, &traj32, &run32, site32, &smooth, &dsmooth);
        assert!(
            res32 < res16,
            "duality residual should decrease: {res16} -> {res32}"
        );
    }

    #[test]
    fn adjoint_linf_stability_general_terminal() {
        let mut ratios = Vec::new();
        for n in [8u32, 16, 32] {
            let solver = Solver::new(&config(2, n, SchemeKind::LaxFriedrichs)).unwrap();
            let traj = solver.solve_trajectory().unwrap();
            let nu = Field::tabulate(&solver.lattice, |xi| 1.0 + xi[0]);
            let run = adjoint_backward_solve(&solver, &traj, &TerminalData::General(nu.clone()), false)
                .unwrap();
            let max_rho = run.max_wsigma.iter().fold(0.0f64, |a, &b| a.max(b));
            ratios.push(max_rho / nu.linf());
        }
        let lo = ratios.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = ratios.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(hi / lo < 2.0, "h-dependence in ||w sigma||: {ratios:?}");
    }
}
