//! Assembly and time integration of the semi-discrete scheme
//! `du/dt + G(xi, [D+u], [D-u]) + F(xi) = 0` on the simplex lattice.
//!
//! Difference quotients use constant extrapolation: a quotient is exactly
//! zero wherever the shifted stencil point leaves the simplex. Explicit
//! Euler and Heun steps are available; the time step obeys a CFL bound
//! built from the analytic partials of `G`.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{Graph, MetricKind};
use crate::hamiltonian::{dg_dp, dg_dq, numerical_g, HamiltonianError, HamiltonianSpec, SchemeKind};
use crate::mesh::{pair_rank, pairwise_sum, Field, Lattice, MeshError};
use crate::problem::{InitialData, Potential, ProblemError};
use crate::weight::{weight_field, WeightError, WeightSpec};

/// Floor for the CFL speed, so a fully-closed upwind scheme still yields
/// a finite (capped) step.
const SPEED_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("field became non-finite at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("final time must be positive, got {0}")]
    BadFinalTime(f64),
    #[error("Courant factor must lie in (0, 1], got {0}")]
    BadCfl(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    Heun,
}

/// Everything needed to run one solve.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub graph: Graph,
    pub metric: MetricKind,
    pub n: u32,
    pub scheme: SchemeKind,
    /// Gradient-bound parameter; `None` auto-calibrates from a
    /// preliminary run (observed max gradient x 1.5).
    pub r0: Option<f64>,
    /// LF viscosity override; `None` means `2 * r0`.
    pub gamma: Option<f64>,
    pub cfl: f64,
    pub integrator: Integrator,
    pub weight: WeightSpec,
    pub u0: InitialData,
    pub potential: Potential,
    pub t_final: f64,
    /// Step cap; `None` means `h`.
    pub dt_max: Option<f64>,
    pub site_budget: usize,
    pub max_snapshots: usize,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.t_final > 0.0) {
            return Err(SolveError::BadFinalTime(self.t_final));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SolveError::BadCfl(self.cfl));
        }
        self.weight.validate()?;
        Ok(())
    }
}

/// Per-site, per-edge forward/backward difference quotients
/// `sqrt(omega_ij) D^{+-} u / h`, zero where a shift exits the simplex.
#[derive(Debug, Clone)]
pub struct DiffPair {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub n_edges: usize,
}

impl DiffPair {
    pub fn forward_at(&self, site: usize) -> &[f64] {
        &self.forward[site * self.n_edges..(site + 1) * self.n_edges]
    }

    pub fn backward_at(&self, site: usize) -> &[f64] {
        &self.backward[site * self.n_edges..(site + 1) * self.n_edges]
    }
}

/// Per-step diagnostics along a trajectory.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticsTimeline {
    pub times: Vec<f64>,
    /// sup of the raw difference quotients `|D^{+-}u| / h`
    pub m1: Vec<f64>,
    /// largest edgewise second difference (signed, unit-tangent scaled)
    pub m2: Vec<f64>,
    pub linf: Vec<f64>,
    /// step used to reach each time (0 for the initial row)
    pub dt: Vec<f64>,
}

impl DiagnosticsTimeline {
    pub fn max_m1(&self) -> f64 {
        self.m1.iter().fold(0.0, |a, &b| a.max(b))
    }

    pub fn max_m2(&self) -> f64 {
        self.m2.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    pub fn max_linf(&self) -> f64 {
        self.linf.iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// Result of a forward solve.
#[derive(Debug)]
pub struct SolveResult {
    pub final_field: Field,
    pub timeline: DiagnosticsTimeline,
    /// Field snapshots at the requested record times.
    pub recorded: Vec<(f64, Field)>,
}

/// Consistency remainders between the central-difference gradient proxy
/// and the one-sided quotients, per site and edge.
#[derive(Debug)]
pub struct Remainders {
    pub r_plus: Vec<f64>,
    pub r_minus: Vec<f64>,
    pub n_edges: usize,
    /// `sum_sites sum_edges (|R+| + |R-|) h^{d-1}`
    pub l1: f64,
    /// same, weighted by `w`
    pub l1_weighted: f64,
}

/// Stored forward trajectory: times, steps, and enough state to replay
/// any level exactly. Memory is bounded by `max_snapshots`; longer runs
/// keep checkpoints and re-solve segments on demand.
#[derive(Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub dts: Vec<f64>,
    storage: Storage,
}

#[derive(Debug)]
enum Storage {
    Full(Vec<Field>),
    Checkpointed { every: usize, checkpoints: Vec<Field> },
}

impl Trajectory {
    /// Number of steps (levels run `0..=steps`).
    pub fn steps(&self) -> usize {
        self.dts.len()
    }

    /// Replays (if needed) and visits levels `0..steps` in order.
    pub fn for_each_forward(
        &self,
        solver: &Solver,
        mut visit: impl FnMut(usize, &Field),
    ) {
        match &self.storage {
            Storage::Full(states) => {
                for (n, u) in states[..self.steps()].iter().enumerate() {
                    visit(n, u);
                }
            }
            Storage::Checkpointed { every, checkpoints } => {
                let mut u = checkpoints[0].clone();
                for n in 0..self.steps() {
                    if n % every == 0 {
                        u = checkpoints[n / every].clone();
                    }
                    visit(n, &u);
                    u = solver.step(&u, self.dts[n]);
                }
            }
        }
    }

    /// Visits levels `steps-1, ..., 0`, replaying one checkpointed
    /// segment at a time.
    pub fn for_each_backward(
        &self,
        solver: &Solver,
        mut visit: impl FnMut(usize, &Field),
    ) {
        match &self.storage {
            Storage::Full(states) => {
                for n in (0..self.steps()).rev() {
                    visit(n, &states[n]);
                }
            }
            Storage::Checkpointed { every, checkpoints } => {
                let mut segment: Vec<Field> = Vec::with_capacity(*every);
                let mut n = self.steps();
                while n > 0 {
                    let seg_start = (n - 1) / every * every;
                    segment.clear();
                    let mut u = checkpoints[seg_start / every].clone();
                    for m in seg_start..n {
                        segment.push(u.clone());
                        u = solver.step(&u, self.dts[m]);
                    }
                    for m in (seg_start..n).rev() {
                        visit(m, &segment[m - seg_start]);
                    }
                    n = seg_start;
                }
            }
        }
    }

    /// State at one level; prefer the iteration helpers in loops.
    pub fn state_at(&self, solver: &Solver, level: usize) -> Field {
        match &self.storage {
            Storage::Full(states) => states[level].clone(),
            Storage::Checkpointed { every, checkpoints } => {
                let base = level / every;
                let mut u = checkpoints[base].clone();
                for m in (base * every)..level {
                    u = solver.step(&u, self.dts[m]);
                }
                u
            }
        }
    }
}

/// Assembled solver: lattice, tabulated data, and resolved Hamiltonian
/// parameters.
#[derive(Debug)]
pub struct Solver {
    pub graph: Graph,
    pub metric: MetricKind,
    pub lattice: Arc<Lattice>,
    pub spec: HamiltonianSpec,
    pub weight_spec: WeightSpec,
    pub weight: Field,
    pub u0: Field,
    pub potential: Field,
    pub t_final: f64,
    pub cfl: f64,
    pub integrator: Integrator,
    pub dt_max: f64,
    pub max_snapshots: usize,
    /// lattice pair rank of each graph edge
    edge_ranks: Vec<usize>,
}

impl Solver {
    /// Builds the lattice, tabulates data, and resolves `r0`/`gamma`.
    ///
    /// Auto-calibration runs the solve twice: once with a provisional
    /// bound seeded from the initial gradient, then again with
    /// `r0 = 1.5 x` the observed max gradient.
    pub fn new(cfg: &SolverConfig) -> Result<Self, SolveError> {
        cfg.validate()?;
        let lattice = Lattice::build(cfg.graph.vertex_count(), cfg.n, cfg.site_budget)?;
        let weight = weight_field(&cfg.weight, &lattice);
        let u0 = cfg.u0.tabulate(&lattice)?;
        let potential = cfg.potential.tabulate(&lattice)?;
        let edge_ranks = cfg
            .graph
            .edges()
            .iter()
            .map(|&(i, j)| pair_rank(cfg.graph.vertex_count(), i, j))
            .collect();
        let h = lattice.h();
        let mut solver = Self {
            graph: cfg.graph.clone(),
            metric: cfg.metric,
            lattice,
            spec: HamiltonianSpec::new(cfg.scheme, cfg.r0.unwrap_or(1.0), cfg.gamma)?,
            weight_spec: cfg.weight,
            weight,
            u0,
            potential,
            t_final: cfg.t_final,
            cfl: cfg.cfl,
            integrator: cfg.integrator,
            dt_max: cfg.dt_max.unwrap_or(h),
            max_snapshots: cfg.max_snapshots.max(2),
            edge_ranks,
        };
        if cfg.r0.is_none() {
            let (m1_init, _) = solver.diagnostics(&solver.u0);
            let provisional = (1.5 * m1_init).max(1.0);
            solver.spec = HamiltonianSpec::new(cfg.scheme, provisional, cfg.gamma)?;
            let prelim = solver.solve()?;
            let observed = prelim.timeline.max_m1();
            let r0 = (1.5 * observed).max(1.0);
            solver.spec = HamiltonianSpec::new(cfg.scheme, r0, cfg.gamma)?;
        }
        Ok(solver)
    }

    pub fn h(&self) -> f64 {
        self.lattice.h()
    }

    /// Lattice pair rank of the k-th graph edge.
    pub fn edge_rank(&self, edge: usize) -> usize {
        self.edge_ranks[edge]
    }

    fn n_edges(&self) -> usize {
        self.graph.edge_count()
    }

    /// Forward/backward difference matrices of `u` with constant
    /// extrapolation.
    pub fn diff_pair(&self, u: &Field) -> DiffPair {
        let ne = self.n_edges();
        let h = self.h();
        let lat = &self.lattice;
        let vals = u.values();
        let per_site = |s: usize| {
            let mut rows = vec![0.0; 2 * ne];
            for e in 0..ne {
                let sw = self.graph.sqrt_omega(e);
                if let Some(up) = lat.shift_by_rank(s, self.edge_ranks[e], 1) {
                    rows[e] = sw * (vals[up] - vals[s]) / h;
                }
                if let Some(dn) = lat.shift_by_rank(s, self.edge_ranks[e], -1) {
                    rows[ne + e] = sw * (vals[s] - vals[dn]) / h;
                }
            }
            rows
        };
        let all: Vec<Vec<f64>> = (0..lat.num_sites()).into_par_iter().map(per_site).collect();
        let mut forward = vec![0.0; lat.num_sites() * ne];
        let mut backward = vec![0.0; lat.num_sites() * ne];
        for (s, rows) in all.iter().enumerate() {
            forward[s * ne..(s + 1) * ne].copy_from_slice(&rows[..ne]);
            backward[s * ne..(s + 1) * ne].copy_from_slice(&rows[ne..]);
        }
        DiffPair {
            forward,
            backward,
            n_edges: ne,
        }
    }

    /// Right-hand side `-G(xi, [D+u], [D-u]) - F(xi)` per site.
    pub fn rhs(&self, u: &Field) -> Field {
        let pair = self.diff_pair(u);
        let lat = &self.lattice;
        let values: Vec<f64> = (0..lat.num_sites())
            .into_par_iter()
            .map(|s| {
                let g = numerical_g(
                    &self.spec,
                    &self.graph,
                    self.metric,
                    lat.xi(s),
                    pair.forward_at(s),
                    pair.backward_at(s),
                );
                -g - self.potential.values()[s]
            })
            .collect();
        Field::from_values(lat.clone(), values)
    }

    /// CFL-limited step: `cfl * h / s_max` with
    /// `s_max = max_sites sum_edges sqrt(omega) (|dG/dp| + |dG/dq|)`,
    /// floored away from zero and capped at `dt_max`.
    pub fn cfl_dt(&self, u: &Field) -> f64 {
        let pair = self.diff_pair(u);
        let lat = &self.lattice;
        let s_max = (0..lat.num_sites())
            .into_par_iter()
            .map(|s| {
                let xi = lat.xi(s);
                let p = pair.forward_at(s);
                let q = pair.backward_at(s);
                let mut speed = 0.0;
                for e in 0..self.n_edges() {
                    let dp = dg_dp(&self.spec, &self.graph, self.metric, xi, p[e], e);
                    let dq = dg_dq(&self.spec, &self.graph, self.metric, xi, q[e], e);
                    speed += self.graph.sqrt_omega(e) * (dp.abs() + dq.abs());
                }
                speed
            })
            .reduce(|| 0.0, f64::max);
        (self.cfl * self.h() / s_max.max(SPEED_FLOOR)).min(self.dt_max)
    }

    /// One explicit step of the configured integrator.
    pub fn step(&self, u: &Field, dt: f64) -> Field {
        match self.integrator {
            Integrator::Euler => self.euler_step(u, dt),
            Integrator::Heun => {
                let k1 = self.rhs(u);
                let mut mid = u.clone();
                for (m, k) in mid.values_mut().iter_mut().zip(k1.values()) {
                    *m += dt * k;
                }
                let k2 = self.rhs(&mid);
                let mut out = u.clone();
                for ((o, a), b) in out.values_mut().iter_mut().zip(k1.values()).zip(k2.values())
                {
                    *o += 0.5 * dt * (a + b);
                }
                out
            }
        }
    }

    fn euler_step(&self, u: &Field, dt: f64) -> Field {
        let k = self.rhs(u);
        let mut out = u.clone();
        for (o, r) in out.values_mut().iter_mut().zip(k.values()) {
            *o += dt * r;
        }
        out
    }

    /// Advances from `U_0` to exactly `t_final`.
    pub fn solve(&self) -> Result<SolveResult, SolveError> {
        self.solve_recorded(&[])
    }

    /// Same as [`Solver::solve`], landing exactly on each requested
    /// record time and snapshotting the field there.
    pub fn solve_recorded(&self, record_times: &[f64]) -> Result<SolveResult, SolveError> {
        let mut record: Vec<f64> = record_times
            .iter()
            .copied()
            .filter(|&t| t > 0.0 && t <= self.t_final)
            .collect();
        record.sort_by(|a, b| a.partial_cmp(b).unwrap());
        record.dedup();

        let mut u = self.u0.clone();
        let mut t = 0.0;
        let mut timeline = DiagnosticsTimeline::default();
        self.record_diag(&mut timeline, t, 0.0, &u);
        let mut recorded = Vec::new();
        let mut next_record = 0usize;
        let mut step_idx = 0usize;
        while t < self.t_final {
            let mut dt = self.cfl_dt(&u).min(self.t_final - t);
            let mut landing: Option<f64> = None;
            if next_record < record.len() && t + dt >= record[next_record] - 1e-15 {
                dt = record[next_record] - t;
                landing = Some(record[next_record]);
            }
            u = self.step(&u, dt);
            step_idx += 1;
            t = match landing {
                Some(r) => r,
                None => {
                    if self.t_final - (t + dt) < 1e-15 * self.t_final {
                        self.t_final
                    } else {
                        t + dt
                    }
                }
            };
            if !u.is_finite() {
                return Err(SolveError::NonFinite { step: step_idx, t });
            }
            self.record_diag(&mut timeline, t, dt, &u);
            if let Some(r) = landing {
                recorded.push((r, u.clone()));
                next_record += 1;
            }
        }
        Ok(SolveResult {
            final_field: u,
            timeline,
            recorded,
        })
    }

    /// Forward solve that stores the trajectory for adjoint use. When
    /// the level count exceeds `max_snapshots`, stored states are thinned
    /// to checkpoints and intermediate levels are re-solved on demand.
    pub fn solve_trajectory(&self) -> Result<Trajectory, SolveError> {
        let mut u = self.u0.clone();
        let mut t = 0.0;
        let mut times = vec![0.0];
        let mut dts = Vec::new();
        // invariant: checkpoints holds the states at all multiples of
        // `every` up to the current level
        let mut every = 1usize;
        let mut checkpoints = vec![u.clone()];
        let mut level = 0usize;
        while t < self.t_final {
            let dt = self.cfl_dt(&u).min(self.t_final - t);
            u = self.step(&u, dt);
            level += 1;
            t = if self.t_final - (t + dt) < 1e-15 * self.t_final {
                self.t_final
            } else {
                t + dt
            };
            if !u.is_finite() {
                return Err(SolveError::NonFinite { step: level, t });
            }
            dts.push(dt);
            times.push(t);
            if level % every == 0 {
                checkpoints.push(u.clone());
            }
            if checkpoints.len() > self.max_snapshots {
                checkpoints = checkpoints.iter().step_by(2).cloned().collect();
                every *= 2;
            }
        }
        let storage = if every == 1 {
            Storage::Full(checkpoints)
        } else {
            Storage::Checkpointed { every, checkpoints }
        };
        Ok(Trajectory {
            times,
            dts,
            storage,
        })
    }

    fn record_diag(&self, timeline: &mut DiagnosticsTimeline, t: f64, dt: f64, u: &Field) {
        let (m1, m2) = self.diagnostics(u);
        timeline.times.push(t);
        timeline.m1.push(m1);
        timeline.m2.push(m2);
        timeline.linf.push(u.linf());
        timeline.dt.push(dt);
    }

    /// Gradient and semi-concavity proxies:
    /// `m1 = max |D^{+-}u| / h` over all sites and edges,
    /// `m2 = max` signed second difference
    /// `(u(x+hm) - 2u(x) + u(x-hm)) / (h^2 ||e||^2)` over interior
    /// sites/edges (`||e||^2 = 2` normalizes to a unit tangent).
    pub fn diagnostics(&self, u: &Field) -> (f64, f64) {
        let lat = &self.lattice;
        let vals = u.values();
        let h = self.h();
        let mut m1: f64 = 0.0;
        let mut m2 = f64::NEG_INFINITY;
        let mut any_interior = false;
        for s in 0..lat.num_sites() {
            for e in 0..self.n_edges() {
                let p = self.edge_ranks[e];
                let up = lat.shift_by_rank(s, p, 1);
                let dn = lat.shift_by_rank(s, p, -1);
                if let Some(up) = up {
                    m1 = m1.max(((vals[up] - vals[s]) / h).abs());
                }
                if let Some(dn) = dn {
                    m1 = m1.max(((vals[s] - vals[dn]) / h).abs());
                }
                if let (Some(up), Some(dn)) = (up, dn) {
                    any_interior = true;
                    let second = (vals[up] - 2.0 * vals[s] + vals[dn]) / (h * h) / 2.0;
                    m2 = m2.max(second);
                }
            }
        }
        (m1, if any_interior { m2 } else { 0.0 })
    }

    /// Consistency remainders `R+` and `R-`: the gap between the
    /// second-order central gradient proxy at the shifted point and the
    /// one-sided quotient. Boundary-layer sites fall back to one-sided
    /// proxies and are included in the L1 sums.
    pub fn remainders(&self, u: &Field) -> Remainders {
        let lat = &self.lattice;
        let vals = u.values();
        let h = self.h();
        let ne = self.n_edges();
        let sites = lat.num_sites();
        // gradient proxy per (site, edge): central where possible
        let ghat = |s: usize, p: usize| -> f64 {
            let up = lat.shift_by_rank(s, p, 1);
            let dn = lat.shift_by_rank(s, p, -1);
            match (up, dn) {
                (Some(a), Some(b)) => (vals[a] - vals[b]) / (2.0 * h),
                (Some(a), None) => (vals[a] - vals[s]) / h,
                (None, Some(b)) => (vals[s] - vals[b]) / h,
                (None, None) => 0.0,
            }
        };
        let mut r_plus = vec![0.0; sites * ne];
        let mut r_minus = vec![0.0; sites * ne];
        let mut abs_terms = Vec::with_capacity(sites * ne);
        let mut weighted_terms = Vec::with_capacity(sites * ne);
        for s in 0..sites {
            for e in 0..ne {
                let p = self.edge_ranks[e];
                let rp = match lat.shift_by_rank(s, p, 1) {
                    Some(up) => ghat(up, p) - (vals[up] - vals[s]) / h,
                    None => ghat(s, p),
                };
                let rm = match lat.shift_by_rank(s, p, -1) {
                    Some(dn) => ghat(dn, p) - (vals[s] - vals[dn]) / h,
                    None => ghat(s, p),
                };
                r_plus[s * ne + e] = rp;
                r_minus[s * ne + e] = rm;
                abs_terms.push(rp.abs() + rm.abs());
                weighted_terms.push((rp.abs() + rm.abs()) * self.weight.values()[s]);
            }
        }
        let vol = lat.cell_volume();
        Remainders {
            r_plus,
            r_minus,
            n_edges: ne,
            l1: pairwise_sum(&abs_terms) * vol,
            l1_weighted: pairwise_sum(&weighted_terms) * vol,
        }
    }
}
