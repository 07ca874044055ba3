//! Deterministic artifact formatting: CSV with 17 significant digits,
//! `.` decimal separator, `\n` line endings.

use std::fmt::Write as _;

use crate::adjoint::AdjointRun;
use crate::convergence::ConvergenceReport;
use crate::mesh::{pi_forward, Field};
use crate::graph::SimplexPoint;
use crate::scheme::DiagnosticsTimeline;

/// 17 significant digits, lossless for f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Field snapshot: `site_id, s_1..s_{d-1}, xi_1..xi_d, value`.
pub fn field_csv(field: &Field) -> String {
    let lat = field.lattice();
    let d = lat.dim();
    let mut out = String::new();
    out.push_str("site_id");
    for k in 1..d {
        let _ = write!(out, ",s_{k}");
    }
    for k in 1..=d {
        let _ = write!(out, ",xi_{k}");
    }
    out.push_str(",value\n");
    for s in 0..lat.num_sites() {
        let _ = write!(out, "{s}");
        let xi = SimplexPoint::new(lat.xi(s).to_vec()).expect("lattice point");
        for v in pi_forward(&xi) {
            let _ = write!(out, ",{}", fmt_f64(v));
        }
        for &v in lat.xi(s) {
            let _ = write!(out, ",{}", fmt_f64(v));
        }
        let _ = writeln!(out, ",{}", fmt_f64(field.values()[s]));
    }
    out
}

/// Diagnostics timeline: `t, m1, m2, linf, dt`.
pub fn diagnostics_csv(timeline: &DiagnosticsTimeline) -> String {
    let mut out = String::from("t,m1,m2,linf,dt\n");
    for i in 0..timeline.times.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(timeline.times[i]),
            fmt_f64(timeline.m1[i]),
            fmt_f64(timeline.m2[i]),
            fmt_f64(timeline.linf[i]),
            fmt_f64(timeline.dt[i]),
        );
    }
    out
}

/// Adjoint conservation timeline: `t, mass, min_sigma, max_wsigma`.
pub fn conservation_csv(run: &AdjointRun) -> String {
    let mut out = String::from("t,mass,min_sigma,max_wsigma\n");
    for i in 0..run.times.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(run.times[i]),
            fmt_f64(run.mass[i]),
            fmt_f64(run.min_sigma[i]),
            fmt_f64(run.max_wsigma[i]),
        );
    }
    out
}

/// Refinement study table:
/// `N, h, l1w_error, linf_error, max_m1, max_m2, remainder_l1`.
pub fn rates_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("N,h,l1w_error,linf_error,max_m1,max_m2,remainder_l1\n");
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), fmt_f64);
    for level in &report.levels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            level.n,
            fmt_f64(level.h),
            opt(level.l1w_error),
            opt(level.linf_error),
            fmt_f64(level.max_m1),
            fmt_f64(level.max_m2),
            fmt_f64(level.remainder_l1),
        );
    }
    out
}

/// Fitted slopes and per-level data as pretty JSON.
pub fn rates_json(report: &ConvergenceReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Lattice;

    #[test]
    fn fmt_is_lossless() {
        for x in [0.1, 1.0 / 3.0, 2.5e-17, -1234.5678e9, 0.0] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(x, back, "{s}");
        }
    }

    #[test]
    fn field_csv_shape() {
        let lat = Lattice::build(3, 2, 1 << 20).unwrap();
        let f = Field::tabulate(&lat, |xi| xi[0]);
        let csv = field_csv(&f);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "site_id,s_1,s_2,xi_1,xi_2,xi_3,value");
        assert_eq!(csv.lines().count(), 1 + lat.num_sites());
        assert!(!csv.contains('\r'));
    }
}
