//! Run configuration: a strict JSON document with per-section schemas.
//!
//! Unknown keys anywhere are rejected with the offending key path;
//! defaults are filled explicitly so the resolved configuration can be
//! echoed verbatim into the output directory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, MetricKind};
use crate::hamiltonian::SchemeKind;
use crate::problem::{InitialData, Potential};
use crate::scheme::{Integrator, SolverConfig};
use crate::weight::WeightSpec;

pub const DEFAULT_SITE_BUDGET: usize = 2_000_000;
pub const DEFAULT_MAX_SNAPSHOTS: usize = 4096;
pub const DEFAULT_CFL: f64 = 0.9;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("config root must be a JSON object")]
    NotAnObject,
    #[error("unknown section `{0}`")]
    UnknownSection(String),
    #[error("missing required section `{0}`")]
    MissingSection(&'static str),
    #[error("{section}: {message}")]
    Section { section: &'static str, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn section_err(section: &'static str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Section {
        section,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphSection {
    d: usize,
    /// dense row-major d x d matrix
    omega: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricSection {
    kind: MetricKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeSection {
    #[serde(rename = "N")]
    n: u32,
}

/// `r0` is either a number or the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum R0Spec {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeSection {
    #[serde(default = "default_scheme_kind")]
    kind: SchemeKind,
    #[serde(default = "default_r0")]
    r0: R0Spec,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default = "default_cfl")]
    cfl: f64,
    #[serde(default = "default_integrator")]
    integrator: Integrator,
    /// filled by the echo after auto-calibration; accepted on input so
    /// a resolved config re-parses
    #[serde(default)]
    resolved_r0: Option<f64>,
    #[serde(default)]
    resolved_gamma: Option<f64>,
}

fn default_scheme_kind() -> SchemeKind {
    SchemeKind::LaxFriedrichs
}

fn default_r0() -> R0Spec {
    R0Spec::Auto(AutoTag::Auto)
}

fn default_cfl() -> f64 {
    DEFAULT_CFL
}

fn default_integrator() -> Integrator {
    Integrator::Heun
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self {
            kind: default_scheme_kind(),
            r0: default_r0(),
            gamma: None,
            cfl: default_cfl(),
            integrator: default_integrator(),
            resolved_r0: None,
            resolved_gamma: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightSection {
    kind: String,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    lambda: Option<f64>,
}

impl Default for WeightSection {
    fn default() -> Self {
        Self {
            kind: "polynomial".into(),
            alpha: Some(1.0),
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSection {
    u0: String,
    #[serde(default)]
    u0_coeffs: Option<Vec<f64>>,
    #[serde(default)]
    u0_value: Option<f64>,
    #[serde(default = "default_potential_id")]
    f: String,
    #[serde(default)]
    f_coeffs: Option<Vec<f64>>,
    #[serde(rename = "T")]
    t_final: f64,
}

fn default_potential_id() -> String {
    "zero".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(default)]
    n_list: Option<Vec<u32>>,
    /// integer cumulative coordinates of the Dirac terminal site
    #[serde(default)]
    dirac_site: Option<Vec<u32>>,
    #[serde(default)]
    out: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    site_budget: Option<usize>,
    #[serde(default)]
    max_snapshots: Option<usize>,
    #[serde(default)]
    dt_max: Option<f64>,
}

/// All sections with defaults filled, serializable back to a valid
/// config document.
#[derive(Debug, Clone, Serialize)]
struct Sections {
    graph: GraphSection,
    metric: MetricSection,
    lattice: LatticeSection,
    scheme: SchemeSection,
    weight: WeightSection,
    problem: ProblemSection,
    run: RunSection,
}

/// Fully resolved configuration: solver inputs plus run options.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub r0_spec: R0Spec,
    pub n_list: Option<Vec<u32>>,
    pub dirac_site: Option<Vec<u32>>,
    pub out: Option<String>,
    pub seed: u64,
    sections: Sections,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value.as_object().ok_or(ConfigError::NotAnObject)?;
        const SECTIONS: [&str; 7] = [
            "graph", "metric", "lattice", "scheme", "weight", "problem", "run",
        ];
        for key in obj.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownSection(key.clone()));
            }
        }
        let take = |name: &'static str| obj.get(name).cloned();
        let graph: GraphSection = serde_json::from_value(
            take("graph").ok_or(ConfigError::MissingSection("graph"))?,
        )
        .map_err(|e| section_err("graph", e))?;
        let metric: MetricSection = match take("metric") {
            Some(v) => serde_json::from_value(v).map_err(|e| section_err("metric", e))?,
            None => MetricSection {
                kind: MetricKind::Average,
            },
        };
        let lattice: LatticeSection = serde_json::from_value(
            take("lattice").ok_or(ConfigError::MissingSection("lattice"))?,
        )
        .map_err(|e| section_err("lattice", e))?;
        let scheme: SchemeSection = match take("scheme") {
            Some(v) => serde_json::from_value(v).map_err(|e| section_err("scheme", e))?,
            None => SchemeSection::default(),
        };
        let weight: WeightSection = match take("weight") {
            Some(v) => serde_json::from_value(v).map_err(|e| section_err("weight", e))?,
            None => WeightSection::default(),
        };
        let problem: ProblemSection = serde_json::from_value(
            take("problem").ok_or(ConfigError::MissingSection("problem"))?,
        )
        .map_err(|e| section_err("problem", e))?;
        let run: RunSection = match take("run") {
            Some(v) => serde_json::from_value(v).map_err(|e| section_err("run", e))?,
            None => RunSection::default(),
        };

        // semantic validation with key paths
        if lattice.n < 2 {
            return Err(section_err("lattice", format!("N must be >= 2, got {}", lattice.n)));
        }
        let graph_obj = Graph::new(graph.d, graph.omega.clone())?;
        let weight_spec = resolve_weight(&weight)?;
        weight_spec.validate().map_err(|e| section_err("weight", e))?;
        if let R0Spec::Value(r0) = scheme.r0 {
            if !(r0 > 0.0) {
                return Err(section_err("scheme", format!("r0 must be positive, got {r0}")));
            }
        }
        if !(scheme.cfl > 0.0 && scheme.cfl <= 1.0) {
            return Err(section_err(
                "scheme",
                format!("cfl must lie in (0, 1], got {}", scheme.cfl),
            ));
        }
        if !(problem.t_final > 0.0) {
            return Err(section_err(
                "problem",
                format!("T must be positive, got {}", problem.t_final),
            ));
        }
        let u0 = resolve_u0(&problem)?;
        let potential = resolve_potential(&problem)?;
        if let Some(site) = &run.dirac_site {
            if site.len() != graph.d - 1 {
                return Err(section_err(
                    "run",
                    format!(
                        "dirac_site must have d-1 = {} cumulative coordinates, got {}",
                        graph.d - 1,
                        site.len()
                    ),
                ));
            }
            if site.iter().any(|&k| k > lattice.n) {
                return Err(section_err(
                    "run",
                    "dirac_site coordinates must lie in 0..=N".to_string(),
                ));
            }
        }
        if let Some(ns) = &run.n_list {
            if ns.len() < 2 {
                return Err(section_err("run", "n_list needs at least 2 levels".to_string()));
            }
        }

        let solver = SolverConfig {
            graph: graph_obj,
            metric: metric.kind,
            n: lattice.n,
            scheme: scheme.kind,
            r0: match scheme.r0 {
                R0Spec::Value(v) => Some(v),
                R0Spec::Auto(_) => None,
            },
            gamma: scheme.gamma,
            cfl: scheme.cfl,
            integrator: scheme.integrator,
            weight: weight_spec,
            u0,
            potential,
            t_final: problem.t_final,
            dt_max: run.dt_max,
            site_budget: run.site_budget.unwrap_or(DEFAULT_SITE_BUDGET),
            max_snapshots: run.max_snapshots.unwrap_or(DEFAULT_MAX_SNAPSHOTS),
        };
        let r0_spec = scheme.r0;
        let sections = Sections {
            graph,
            metric,
            lattice,
            scheme,
            weight: WeightSection {
                kind: weight.kind,
                alpha: match weight_spec {
                    WeightSpec::Polynomial { alpha } => Some(alpha),
                    _ => None,
                },
                lambda: weight.lambda,
            },
            problem,
            run: RunSection {
                seed: Some(run.seed.unwrap_or(0)),
                site_budget: Some(solver.site_budget),
                max_snapshots: Some(solver.max_snapshots),
                ..run.clone()
            },
        };
        Ok(RunConfig {
            n_list: run.n_list,
            dirac_site: run.dirac_site,
            out: run.out,
            seed: run.seed.unwrap_or(0),
            solver,
            r0_spec,
            sections,
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    /// Defaults-filled configuration, echoed into the output directory.
    /// `resolved_r0`/`resolved_gamma` carry the values actually used
    /// after auto-calibration; the document re-parses as a config.
    pub fn resolved_json(&self, resolved_r0: Option<f64>, resolved_gamma: Option<f64>) -> String {
        let mut sections = self.sections.clone();
        sections.scheme.resolved_r0 = resolved_r0;
        sections.scheme.resolved_gamma = resolved_gamma;
        let mut out = serde_json::to_string_pretty(&sections).expect("config serializes");
        out.push('\n');
        out
    }
}

fn resolve_weight(w: &WeightSection) -> Result<WeightSpec, ConfigError> {
    match w.kind.as_str() {
        "polynomial" => Ok(WeightSpec::Polynomial {
            alpha: w.alpha.unwrap_or(1.0),
        }),
        "exponential" => Ok(WeightSpec::Exponential {
            lambda: w.lambda.ok_or_else(|| {
                section_err("weight", "exponential weight requires `lambda`".to_string())
            })?,
        }),
        "mollifier" => Ok(WeightSpec::Mollifier),
        other => Err(section_err(
            "weight",
            format!("unknown kind `{other}` (expected polynomial, exponential, mollifier)"),
        )),
    }
}

fn resolve_u0(p: &ProblemSection) -> Result<InitialData, ConfigError> {
    match p.u0.as_str() {
        "constant" => Ok(InitialData::Constant {
            value: p.u0_value.unwrap_or(0.0),
        }),
        "linear" => Ok(InitialData::Linear {
            coeffs: p.u0_coeffs.clone(),
        }),
        "quadratic" => Ok(InitialData::Quadratic {
            coeffs: p.u0_coeffs.clone(),
        }),
        "cosine_in_s" | "cosine-in-s" => Ok(InitialData::CosineInS),
        other => Err(section_err(
            "problem",
            format!("unknown u0 `{other}` (expected constant, linear, quadratic, cosine_in_s)"),
        )),
    }
}

fn resolve_potential(p: &ProblemSection) -> Result<Potential, ConfigError> {
    match p.f.as_str() {
        "zero" => Ok(Potential::Zero),
        "linear" => Ok(Potential::Linear {
            coeffs: p.f_coeffs.clone(),
        }),
        "quadratic" => Ok(Potential::Quadratic),
        other => Err(section_err(
            "problem",
            format!("unknown f `{other}` (expected zero, linear, quadratic)"),
        )),
    }
}
