//! Semi-discrete monotone finite-difference schemes for Hamilton-Jacobi
//! equations on the Wasserstein space over a finite graph.
//!
//! The state space is the probability simplex over the vertices of a
//! weighted connected graph, flattened to an ordered box by cumulative
//! coordinates and discretized on a lattice of spacing `h = 1/N`. The
//! crate provides:
//!
//! * the graph metric tensors and xi-weighted edge algebra ([`graph`]);
//! * the simplex lattice with shift stencils and region classification
//!   ([`mesh`]);
//! * boundary-vanishing weight functions ([`weight`]);
//! * the quadratic Hamiltonian with Lax-Friedrichs and Osher-Sethian
//!   numerical counterparts and structural audits ([`hamiltonian`]);
//! * explicit time integration with CFL control, diagnostics, and
//!   consistency remainders ([`scheme`]);
//! * the weighted adjoint machinery: linearized dual, backward density
//!   evolution, IBP and duality checks ([`adjoint`]);
//! * refinement studies with rate fitting ([`convergence`]);
//! * strict run configuration and deterministic artifact I/O
//!   ([`config`], [`io`]).

pub mod adjoint;
pub mod config;
pub mod convergence;
pub mod graph;
pub mod hamiltonian;
pub mod io;
pub mod mesh;
pub mod problem;
pub mod scheme;
pub mod weight;

pub use adjoint::{
    adjoint_backward_solve, duality_check, forward_dual_solve, ibp_check, ibp_check_fluxes,
    linearized_apply, AdjointRun, AdjointState, LinearizedCoeffs, TerminalData,
};
pub use config::{ConfigError, RunConfig};
pub use convergence::{fit_rate, refinement_study, restrict, ConvergenceReport};
pub use graph::{
    divergence, graph_gradient, inv_sum, inv_sum_pow_neg2, metric_weight, xi_inner, xi_norm_sq,
    Graph, MetricKind, SimplexPoint,
};
pub use hamiltonian::{
    audit_assumptions, audit_monotonicity_grid, continuous_h, dg_dp, dg_dq, numerical_g,
    AuditReport, HamiltonianSpec, SchemeKind,
};
pub use mesh::{pairwise_sum, pi_forward, pi_inverse, weighted_l1, Field, Lattice, Region};
pub use problem::{InitialData, Potential};
pub use scheme::{DiffPair, DiagnosticsTimeline, Integrator, SolveResult, Solver, SolverConfig};
pub use weight::{weight_eval, weight_field, WeightSpec};
