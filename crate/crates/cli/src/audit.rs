//! The `audit` subcommand: structural invariant suite over the
//! configured problem, one line per check, exit 3 on any violation.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use hjwass::adjoint::{
    adjoint_backward_solve, forward_dual_solve, ibp_check, LinearizedCoeffs, TerminalData,
};
use hjwass::config::RunConfig;
use hjwass::hamiltonian::{audit_assumptions, audit_monotonicity_grid};
use hjwass::mesh::Field;
use hjwass::scheme::Solver;
use hjwass::weight::weight_field;

use crate::CliError;

const MC_SAMPLES: usize = 2000;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

pub fn run_audit(config: &RunConfig, out: &Path) -> Result<u8, CliError> {
    let solver = Solver::new(&config.solver)?;
    crate::echo_config(config, Some(&solver), out)?;
    let mut checks = Vec::new();

    // Hamiltonian assumptions: Monte-Carlo and deterministic grid
    let rep = audit_assumptions(
        &solver.spec,
        &solver.graph,
        solver.metric,
        MC_SAMPLES,
        config.seed,
    );
    checks.push(Check {
        name: "hamiltonian assumptions (monotonicity, consistency, Lipschitz, Hessian)",
        pass: rep.passed(),
        detail: format!(
            "{} violations, consistency residual {:.3e}, Lipschitz ratio {:.3e}",
            rep.violations.len(),
            rep.max_consistency_residual,
            rep.max_lipschitz_ratio
        ),
    });
    let grid = audit_monotonicity_grid(&solver.spec, &solver.graph, solver.metric, 20);
    checks.push(Check {
        name: "monotone partial signs on a 20^3 grid",
        pass: grid.is_empty(),
        detail: format!("{} violations", grid.len()),
    });

    // weighted IBP identity with random test data
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let lat = &solver.lattice;
    let coeffs = LinearizedCoeffs::evaluate(&solver, &solver.u0);
    let w = weight_field(&solver.weight_spec, lat);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..25 {
        let phi = Field::from_values(
            lat.clone(),
            (0..lat.num_sites()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let sigma = Field::from_values(
            lat.clone(),
            (0..lat.num_sites()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        for e in 0..solver.graph.edge_count() {
            let res = ibp_check(&solver, &coeffs, &w, &phi, &sigma, e);
            worst_rel = worst_rel.max(res.residual / res.scale);
        }
    }
    checks.push(Check {
        name: "weighted IBP identity",
        pass: worst_rel <= 1e-12,
        detail: format!("max residual/scale {worst_rel:.3e}"),
    });

    // forward trajectory: L-infinity a-priori bound
    let traj = solver.solve_trajectory()?;
    let out_solve = solver.solve()?;
    let u0_max = solver.u0.linf();
    let f_max = solver.potential.linf();
    let mut excess = f64::NEG_INFINITY;
    for (t, linf) in out_solve.timeline.times.iter().zip(&out_solve.timeline.linf) {
        excess = excess.max(linf - (u0_max + t * f_max));
    }
    checks.push(Check {
        name: "L-infinity a-priori bound",
        pass: excess <= 1e-10,
        detail: format!("max excess {excess:.3e}"),
    });

    // adjoint mass conservation, Dirac at the deepest interior site
    let site = (0..lat.num_sites())
        .max_by(|&a, &b| {
            w.values()[a]
                .partial_cmp(&w.values()[b])
                .unwrap()
                .then(b.cmp(&a))
        })
        .unwrap();
    match adjoint_backward_solve(&solver, &traj, &TerminalData::DiracAtSite(site), false) {
        Ok(run) => {
            let drift = run
                .mass
                .iter()
                .map(|m| (m - 1.0).abs())
                .fold(0.0, f64::max);
            let min_sigma = run.min_sigma.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            checks.push(Check {
                name: "adjoint weighted mass conservation and nonnegativity",
                pass: drift <= 1e-8 && min_sigma >= -1e-12,
                detail: format!("max |mass - 1| = {drift:.3e}, min sigma {min_sigma:.3e}"),
            });
        }
        Err(e) => checks.push(Check {
            name: "adjoint weighted mass conservation and nonnegativity",
            pass: false,
            detail: e.to_string(),
        }),
    }

    // forward dual maximum principle on nonnegative data
    let mut principle_ok = true;
    let mut detail = String::new();
    for k in 0..3 {
        let shift = 0.2 * k as f64;
        let f = Field::tabulate(lat, |xi| xi[0] * xi[0] + shift);
        match forward_dual_solve(&solver, &traj, &f, 0) {
            Ok(run) => {
                let tol = 1e-12 * (1.0 + f.linf());
                let ok = run.phis.iter().all(|p| p.min() >= -tol);
                principle_ok &= ok;
            }
            Err(e) => {
                principle_ok = false;
                detail = e.to_string();
            }
        }
    }
    checks.push(Check {
        name: "discrete maximum principle (forward dual)",
        pass: principle_ok,
        detail: if detail.is_empty() {
            "min nondecreasing, max nonincreasing, nonnegativity preserved".into()
        } else {
            detail
        },
    });

    let mut failed = false;
    let mut json_entries = Vec::new();
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed |= !c.pass;
        json_entries.push(serde_json::json!({
            "check": c.name,
            "pass": c.pass,
            "detail": c.detail,
        }));
    }
    let doc = serde_json::json!({ "checks": json_entries, "passed": !failed });
    let mut text = serde_json::to_string_pretty(&doc).expect("audit report serializes");
    text.push('\n');
    crate::write(&out.join("audit.json"), &text)?;
    Ok(if failed { 3 } else { 0 })
}
