//! TOML experiment configuration with strict key checking.
//!
//! ```toml
//! seed = 42
//! epochs = 500
//! repetitions = 10
//! methods = ["drr", "dsgd"]
//! output = "out/ring8"
//!
//! [problem]
//! kind = "quadratic"     # quadratic | logistic_l2 | logistic_sigmoidal
//! m = 8
//! dim = 5
//! mu = 1.0
//! l = 1.0
//!
//! [graph]
//! kind = "ring"          # complete | ring | grid | exponential | erdos_renyi
//! n = 8
//!
//! [schedule]
//! kind = "constant"      # constant | decaying | hyperbolic | cube_root
//! alpha = 0.005
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::optim::{Method, StepsizeSchedule};

/// Names accepted in `metrics`.
pub const METRIC_NAMES: [&str; 8] =
    ["dist_sq", "avg_dist_sq", "consensus_sq", "grad_norm_sq", "best_grad_norm_sq", "f_gap", "lyapunov_h", "lyapunov_q"];

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
struct RawConfig {
    seed: Option<u64>,
    epochs: Option<usize>,
    repetitions: Option<usize>,
    methods: Option<Vec<Method>>,
    method: Option<Method>,
    output: Option<PathBuf>,
    metrics: Option<Vec<String>>,
    parallel_agents: Option<bool>,
    inner_sampling: Option<bool>,
    distinct_init: Option<bool>,
    init_scale: Option<f64>,
    problem: Option<RawProblem>,
    graph: Option<RawGraph>,
    schedule: Option<RawSchedule>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
struct RawProblem {
    kind: Option<String>,
    m: Option<usize>,
    dim: Option<usize>,
    mu: Option<f64>,
    l: Option<f64>,
    heterogeneity: Option<f64>,
    spread: Option<f64>,
    seed: Option<u64>,
    data: Option<PathBuf>,
    samples: Option<usize>,
    separation: Option<f64>,
    rho: Option<f64>,
    eta: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
struct RawGraph {
    kind: Option<String>,
    n: Option<usize>,
    rows: Option<usize>,
    cols: Option<usize>,
    prob: Option<f64>,
    seed: Option<u64>,
    edges: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
struct RawSchedule {
    kind: Option<String>,
    alpha: Option<f64>,
    theta: Option<f64>,
    k: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
    eta: Option<f64>,
    horizon: Option<usize>,
}

/// Where samples come from for the logistic problems.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    Csv { path: PathBuf },
    Synthetic { samples: usize, dim: usize, separation: f64, seed: Option<u64> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic { m: usize, dim: usize, mu: f64, l: f64, heterogeneity: f64, spread: f64, seed: Option<u64> },
    LogisticL2 { m: usize, data: DataSpec, rho: f64 },
    LogisticSigmoidal { m: usize, data: DataSpec, eta: f64 },
}

impl ProblemSpec {
    pub fn m(&self) -> usize {
        match self {
            Self::Quadratic { m, .. } | Self::LogisticL2 { m, .. } | Self::LogisticSigmoidal { m, .. } => *m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphSpec {
    pub n: usize,
    pub topology: Topology,
    /// Edge-list file overriding `topology`.
    pub edges: Option<PathBuf>,
}

/// How the schedule was written; `decaying` may leave `k` to be derived.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Constant { alpha: f64 },
    Decaying { theta: f64, k: Option<f64> },
    Hyperbolic { a: f64, b: f64 },
    CubeRoot { eta: f64, horizon: Option<usize> },
}

impl ScheduleSpec {
    /// Concrete schedule given the problem constants; `k_min` is used when
    /// a decaying schedule leaves `k` unset.
    pub fn resolve(&self, m: usize, mu: f64, epochs: usize, k_min: impl FnOnce(f64) -> f64) -> StepsizeSchedule {
        match *self {
            Self::Constant { alpha } => StepsizeSchedule::Constant { alpha },
            Self::Decaying { theta, k } => StepsizeSchedule::Decaying { theta, k: k.unwrap_or_else(|| k_min(theta).ceil()), m, mu },
            Self::Hyperbolic { a, b } => StepsizeSchedule::Hyperbolic { a, b },
            Self::CubeRoot { eta, horizon } => StepsizeSchedule::CubeRoot { eta, m, horizon: horizon.unwrap_or(epochs) },
        }
    }
}

/// Fully resolved experiment description.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: usize,
    pub repetitions: usize,
    pub methods: Vec<Method>,
    pub output: Option<PathBuf>,
    pub metrics: Vec<String>,
    pub parallel_agents: bool,
    pub inner_sampling: bool,
    pub distinct_init: bool,
    pub init_scale: f64,
    pub problem: ProblemSpec,
    pub graph: GraphSpec,
    pub schedule: ScheduleSpec,
}

/// Defaults when `[graph] n` or `[problem] m` are omitted.
pub const DEFAULT_AGENTS: usize = 16;
pub const DEFAULT_COMPONENTS: usize = 10;
pub const DEFAULT_REPETITIONS: usize = 10;

fn cfg_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), msg: msg.into() }
}

fn need<T>(v: Option<T>, path: &str) -> Result<T> {
    v.ok_or_else(|| cfg_err(path, "missing required key"))
}

fn positive(v: f64, path: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(cfg_err(path, format!("must be positive, got {v}")))
    }
}

fn positive_int(v: usize, path: &str) -> Result<usize> {
    if v > 0 {
        Ok(v)
    } else {
        Err(cfg_err(path, "must be positive"))
    }
}

/// Keys that are set but mean nothing for the chosen `kind`.
fn reject_extra(section: &str, kind: &str, set: &[(&str, bool)]) -> Result<()> {
    match set.iter().find(|(_, present)| *present) {
        Some((key, _)) => Err(cfg_err(&format!("{section}.{key}"), format!("not a parameter of kind `{kind}`"))),
        None => Ok(()),
    }
}

/// Parses and validates a configuration from TOML text. Relative paths are
/// resolved against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| cfg_err("<root>", e.to_string().trim().to_string()))?;
    let mut unknown: BTreeSet<String> = BTreeSet::new();
    let mut track = |p: serde_ignored::Path<'_>| {
        unknown.insert(p.to_string().replace(".?", "").replace("?.", ""));
    };
    let ignored = serde_ignored::Deserializer::new(de, &mut track);
    let raw: RawConfig = serde_path_to_error::deserialize(ignored).map_err(|e| {
        let path = e.path().to_string();
        cfg_err(&path, e.into_inner().to_string().trim().to_string())
    })?;
    if let Some(first) = unknown.into_iter().next() {
        return Err(cfg_err(&first, "unknown key"));
    }
    resolve(raw, base)
}

/// Reads and validates a configuration file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err("<file>", format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base)
}

fn resolve(raw: RawConfig, base: &Path) -> Result<ExperimentConfig> {
    let epochs = positive_int(need(raw.epochs, "epochs")?, "epochs")?;
    let repetitions = positive_int(raw.repetitions.unwrap_or(DEFAULT_REPETITIONS), "repetitions")?;
    let methods = match (raw.methods, raw.method) {
        (Some(_), Some(_)) => return Err(cfg_err("method", "give either `method` or `methods`, not both")),
        (Some(ms), None) if ms.is_empty() => return Err(cfg_err("methods", "must list at least one method")),
        (Some(ms), None) => {
            let mut seen = BTreeSet::new();
            for m in &ms {
                if !seen.insert(m.name()) {
                    return Err(cfg_err("methods", format!("`{m}` listed twice")));
                }
            }
            ms
        }
        (None, Some(m)) => vec![m],
        (None, None) => return Err(cfg_err("methods", "missing required key")),
    };
    let metrics = match raw.metrics {
        Some(ms) => {
            for m in &ms {
                if !METRIC_NAMES.contains(&m.as_str()) {
                    return Err(cfg_err("metrics", format!("unknown metric `{m}`; known: {}", METRIC_NAMES.join(", "))));
                }
            }
            ms
        }
        None => Vec::new(),
    };
    let init_scale = raw.init_scale.unwrap_or(1.0);
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(cfg_err("init_scale", "must be nonnegative"));
    }
    let graph = resolve_graph(need(raw.graph, "graph")?, base)?;
    let problem = resolve_problem(need(raw.problem, "problem")?, base)?;
    let schedule = resolve_schedule(need(raw.schedule, "schedule")?)?;
    Ok(ExperimentConfig {
        seed: raw.seed.unwrap_or(0),
        epochs,
        repetitions,
        methods,
        output: raw.output.map(|p| if p.is_absolute() { p } else { base.join(p) }),
        metrics,
        parallel_agents: raw.parallel_agents.unwrap_or(false),
        inner_sampling: raw.inner_sampling.unwrap_or(false),
        distinct_init: raw.distinct_init.unwrap_or(false),
        init_scale,
        problem,
        graph,
        schedule,
    })
}

fn resolve_graph(g: RawGraph, base: &Path) -> Result<GraphSpec> {
    let n = positive_int(g.n.unwrap_or(DEFAULT_AGENTS), "graph.n")?;
    let edges = g.edges.map(|p| base.join(p));
    if let Some(p) = &edges {
        if !p.is_file() {
            return Err(cfg_err("graph.edges", format!("file {} does not exist", p.display())));
        }
    }
    let kind = match (g.kind.as_deref(), &edges) {
        (Some(k), _) => k.to_string(),
        (None, Some(_)) => "edge_list".to_string(),
        (None, None) => return Err(cfg_err("graph.kind", "missing required key")),
    };
    let topology = match kind.as_str() {
        "complete" | "ring" | "exponential" | "edge_list" => {
            reject_extra("graph", &kind, &[("rows", g.rows.is_some()), ("cols", g.cols.is_some()), ("prob", g.prob.is_some()), ("seed", g.seed.is_some())])?;
            match kind.as_str() {
                "complete" | "edge_list" => Topology::Complete,
                "ring" => Topology::Ring,
                _ => Topology::Exponential,
            }
        }
        "grid" => {
            reject_extra("graph", &kind, &[("prob", g.prob.is_some()), ("seed", g.seed.is_some())])?;
            let (rows, cols) = match (g.rows, g.cols) {
                (Some(r), Some(c)) => (r, c),
                (Some(r), None) if r > 0 && n % r == 0 => (r, n / r),
                (None, Some(c)) if c > 0 && n % c == 0 => (n / c, c),
                (None, None) => {
                    let r = (n as f64).sqrt().round() as usize;
                    if r * r != n {
                        return Err(cfg_err("graph.rows", format!("n = {n} is not a perfect square; give rows and cols with rows*cols = n")));
                    }
                    (r, r)
                }
                _ => return Err(cfg_err("graph.rows", format!("rows/cols do not factor n = {n}"))),
            };
            if rows * cols != n {
                return Err(cfg_err("graph.rows", format!("rows*cols = {} but n = {n}", rows * cols)));
            }
            Topology::Grid { rows, cols }
        }
        "erdos_renyi" => {
            reject_extra("graph", &kind, &[("rows", g.rows.is_some()), ("cols", g.cols.is_some())])?;
            let prob = need(g.prob, "graph.prob")?;
            if !(prob > 0.0 && prob <= 1.0) {
                return Err(cfg_err("graph.prob", format!("must lie in (0, 1], got {prob}")));
            }
            Topology::ErdosRenyi { prob, seed: g.seed.unwrap_or(0) }
        }
        other => return Err(cfg_err("graph.kind", format!("unknown topology `{other}`"))),
    };
    Ok(GraphSpec { n, topology, edges })
}

fn data_spec(p: &RawProblem, base: &Path) -> Result<DataSpec> {
    match &p.data {
        Some(path) => {
            reject_extra("problem", "csv data", &[("samples", p.samples.is_some()), ("separation", p.separation.is_some()), ("dim", p.dim.is_some())])?;
            let full = base.join(path);
            if !full.is_file() {
                return Err(cfg_err("problem.data", format!("file {} does not exist", full.display())));
            }
            Ok(DataSpec::Csv { path: full })
        }
        None => Ok(DataSpec::Synthetic {
            samples: positive_int(need(p.samples, "problem.samples")?, "problem.samples")?,
            dim: positive_int(p.dim.unwrap_or(5), "problem.dim")?,
            separation: p.separation.unwrap_or(1.0),
            seed: p.seed,
        }),
    }
}

fn resolve_problem(p: RawProblem, base: &Path) -> Result<ProblemSpec> {
    let kind = need(p.kind.clone(), "problem.kind")?;
    let m = positive_int(p.m.unwrap_or(DEFAULT_COMPONENTS), "problem.m")?;
    match kind.as_str() {
        "quadratic" => {
            reject_extra("problem", &kind, &[
                ("data", p.data.is_some()),
                ("samples", p.samples.is_some()),
                ("separation", p.separation.is_some()),
                ("rho", p.rho.is_some()),
                ("eta", p.eta.is_some()),
            ])?;
            let mu = positive(p.mu.unwrap_or(1.0), "problem.mu")?;
            let l = positive(p.l.unwrap_or(mu), "problem.l")?;
            if l < mu {
                return Err(cfg_err("problem.l", format!("must be at least mu = {mu}")));
            }
            Ok(ProblemSpec::Quadratic {
                m,
                dim: positive_int(p.dim.unwrap_or(5), "problem.dim")?,
                mu,
                l,
                heterogeneity: p.heterogeneity.unwrap_or(1.0),
                spread: p.spread.unwrap_or(1.0),
                seed: p.seed,
            })
        }
        "logistic_l2" | "logistic_sigmoidal" => {
            reject_extra("problem", &kind, &[
                ("mu", p.mu.is_some()),
                ("l", p.l.is_some()),
                ("heterogeneity", p.heterogeneity.is_some()),
                ("spread", p.spread.is_some()),
            ])?;
            let data = data_spec(&p, base)?;
            if kind == "logistic_l2" {
                reject_extra("problem", &kind, &[("eta", p.eta.is_some())])?;
                Ok(ProblemSpec::LogisticL2 { m, data, rho: positive(p.rho.unwrap_or(0.2), "problem.rho")? })
            } else {
                reject_extra("problem", &kind, &[("rho", p.rho.is_some())])?;
                Ok(ProblemSpec::LogisticSigmoidal { m, data, eta: positive(p.eta.unwrap_or(0.2), "problem.eta")? })
            }
        }
        other => Err(cfg_err("problem.kind", format!("unknown problem kind `{other}`"))),
    }
}

fn resolve_schedule(s: RawSchedule) -> Result<ScheduleSpec> {
    let kind = need(s.kind.clone(), "schedule.kind")?;
    let keys = |allowed: &[&str]| {
        let all = [
            ("alpha", s.alpha.is_some()),
            ("theta", s.theta.is_some()),
            ("k", s.k.is_some()),
            ("a", s.a.is_some()),
            ("b", s.b.is_some()),
            ("eta", s.eta.is_some()),
            ("horizon", s.horizon.is_some()),
        ];
        let extra: Vec<(&str, bool)> = all.into_iter().filter(|(k, _)| !allowed.contains(k)).collect();
        reject_extra("schedule", &kind, &extra)
    };
    match kind.as_str() {
        "constant" => {
            keys(&["alpha"])?;
            let alpha = need(s.alpha, "schedule.alpha")?;
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(cfg_err("schedule.alpha", "must be nonnegative"));
            }
            Ok(ScheduleSpec::Constant { alpha })
        }
        "decaying" => {
            keys(&["theta", "k"])?;
            let theta = positive(need(s.theta, "schedule.theta")?, "schedule.theta")?;
            let k = s.k.map(|k| positive(k, "schedule.k")).transpose()?;
            Ok(ScheduleSpec::Decaying { theta, k })
        }
        "hyperbolic" => {
            keys(&["a", "b"])?;
            let a = need(s.a, "schedule.a")?;
            if a < 0.0 {
                return Err(cfg_err("schedule.a", "must be nonnegative"));
            }
            Ok(ScheduleSpec::Hyperbolic { a, b: positive(need(s.b, "schedule.b")?, "schedule.b")? })
        }
        "cube_root" => {
            keys(&["eta", "horizon"])?;
            let eta = positive(need(s.eta, "schedule.eta")?, "schedule.eta")?;
            let horizon = s.horizon.map(|h| positive_int(h, "schedule.horizon")).transpose()?;
            Ok(ScheduleSpec::CubeRoot { eta, horizon })
        }
        other => Err(cfg_err("schedule.kind", format!("unknown schedule kind `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
epochs = 10
method = "drr"
[problem]
kind = "quadratic"
[graph]
kind = "complete"
n = 2
[schedule]
kind = "constant"
alpha = 0.01
"#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config(text, Path::new("."))
    }

    #[test]
    fn minimal_config_is_valid() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.graph.n, 2);
        assert_eq!(c.methods, vec![Method::Drr]);
        assert_eq!(c.repetitions, DEFAULT_REPETITIONS);
        assert_eq!(c.problem.m(), DEFAULT_COMPONENTS);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse(&MINIMAL.replace("alpha = 0.01", "alpha = 0.01\nalpah = 2")).unwrap_err();
        match err {
            Error::Config { path, msg } => {
                assert_eq!(path, "schedule.alpah");
                assert!(msg.contains("unknown"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn type_mismatch_is_named() {
        let err = parse(&MINIMAL.replace("n = 2", "n = \"two\"")).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "graph.n"), "{err}");
    }

    #[test]
    fn missing_key_is_named() {
        let err = parse(&MINIMAL.replace("epochs = 10", "")).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "epochs"), "{err}");
        let err = parse(&MINIMAL.replace("alpha = 0.01", "")).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "schedule.alpha"), "{err}");
    }

    #[test]
    fn grid_needs_factorization() {
        let text = MINIMAL.replace("kind = \"complete\"\nn = 2", "kind = \"grid\"\nn = 15");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("rows"), "{err}");
        let ok = parse(&MINIMAL.replace("kind = \"complete\"\nn = 2", "kind = \"grid\"\nn = 16")).unwrap();
        assert_eq!(ok.graph.topology, Topology::Grid { rows: 4, cols: 4 });
        let ok = parse(&MINIMAL.replace("kind = \"complete\"\nn = 2", "kind = \"grid\"\nn = 15\nrows = 3\ncols = 5")).unwrap();
        assert_eq!(ok.graph.topology, Topology::Grid { rows: 3, cols: 5 });
    }

    #[test]
    fn irrelevant_parameters_rejected() {
        let err = parse(&MINIMAL.replace("alpha = 0.01", "alpha = 0.01\ntheta = 3")).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "schedule.theta"), "{err}");
    }

    #[test]
    fn missing_data_file() {
        let text = MINIMAL.replace("kind = \"quadratic\"", "kind = \"logistic_l2\"\ndata = \"/nonexistent/x.csv\"");
        assert!(matches!(parse(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn negative_values_rejected() {
        assert!(parse(&MINIMAL.replace("alpha = 0.01", "alpha = -1.0")).is_err());
        assert!(parse(&MINIMAL.replace("epochs = 10", "epochs = 0")).is_err());
    }
}
