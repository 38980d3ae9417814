//! Configuration-driven runs: build the instance, fan out seeded
//! repetitions, average the epoch metrics and write CSV/JSON.

pub mod config;
pub mod suites;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{parse_config, validate_config, DataSpec, ExperimentConfig, GraphSpec, ProblemSpec, ScheduleSpec, METRIC_NAMES};
pub use suites::{run_suite, SuiteReport, SUITES};

use crate::data::{heterogeneous_partition, load_csv, synth_classification, Partition};
use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};
use crate::linalg::Matrix;
use crate::metrics::{lyapunov_h, lyapunov_q, omega, reference_solve, sigma_star, ReferenceSolution};
use crate::mixing::{metropolis_weights, MixingMatrix};
use crate::objectives::{FiniteSumProblem, ProblemConstants, QuadraticEnsemble};
use crate::optim::{
    check_admissible, min_decaying_offset, nonconvex_stepsize_terms, strongly_convex_stepsize_terms, AdmissibilityReport, AgentStateBlock, BoundTerm,
    Method, Optimizer, StepsizeSchedule,
};
use crate::scalar::{dist_sq, norm_sq};
use crate::seed::{derive_seed, rng_for, Domain};

/// Gradient-norm tolerance of the reference solve.
pub const REFERENCE_TOL: f64 = 1e-9;
pub const REFERENCE_MAX_ITER: usize = 2_000_000;

/// Problem, graph and mixing matrix described by a config.
pub struct Instance {
    pub problem: FiniteSumProblem<f64>,
    pub graph: Graph,
    pub mixing: MixingMatrix<f64>,
    pub rho_w: f64,
    pub partition: Option<Partition>,
}

/// Builds the graph and problem of `cfg` without solving anything.
pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    let n = cfg.graph.n;
    let graph = match &cfg.graph.edges {
        Some(path) => {
            let g = Graph::read_edge_list(path)?;
            if g.n() != n {
                return Err(Error::Config { path: "graph.n".into(), msg: format!("edge list has {} nodes, config says {n}", g.n()) });
            }
            g
        }
        None => build_graph(&cfg.graph.topology, n)?,
    };
    let mixing = metropolis_weights::<f64>(&graph)?;
    let rho_w = mixing.rho_w();
    let load = |data: &DataSpec| match data {
        DataSpec::Csv { path } => load_csv::<f64>(path),
        DataSpec::Synthetic { samples, dim, separation, seed } => {
            synth_classification(*samples, *dim, *separation, seed.unwrap_or_else(|| derive_seed(cfg.seed, Domain::Data, &[])))
        }
    };
    let (problem, partition) = match &cfg.problem {
        ProblemSpec::Quadratic { m, dim, mu, l, heterogeneity, spread, seed } => {
            let ens = QuadraticEnsemble {
                n,
                m: *m,
                p: *dim,
                mu: *mu,
                l: *l,
                heterogeneity: *heterogeneity,
                spread: *spread,
                seed: seed.unwrap_or_else(|| derive_seed(cfg.seed, Domain::Problem, &[])),
            };
            (ens.build::<f64>()?, None)
        }
        ProblemSpec::LogisticL2 { m, data, rho } => {
            let ds = load(data)?;
            let part = heterogeneous_partition(&ds, n, *m)?;
            (FiniteSumProblem::logistic_l2(&ds, &part, *rho)?, Some(part))
        }
        ProblemSpec::LogisticSigmoidal { m, data, eta } => {
            let ds = load(data)?;
            let part = heterogeneous_partition(&ds, n, *m)?;
            (FiniteSumProblem::logistic_sigmoidal(&ds, &part, *eta)?, Some(part))
        }
    };
    Ok(Instance { problem, graph, mixing, rho_w, partition })
}

/// Instance plus reference solution and the resolved schedule.
pub struct Prepared {
    pub instance: Instance,
    pub reference: ReferenceSolution<f64>,
    pub constants: ProblemConstants<f64>,
    pub sigma_star_sq: f64,
    pub schedule: StepsizeSchedule,
    pub admissibility: AdmissibilityReport,
}

/// Concrete schedule for `cfg` on an instance with constants `(rho, l, mu)`.
pub fn resolve_schedule(cfg: &ExperimentConfig, rho: f64, l: f64, mu: f64) -> Result<StepsizeSchedule> {
    let m = cfg.problem.m();
    if matches!(cfg.schedule, ScheduleSpec::Decaying { .. }) && mu <= 0.0 {
        return Err(Error::Config { path: "schedule.kind".into(), msg: "the decaying schedule needs a strongly convex problem".into() });
    }
    Ok(cfg.schedule.resolve(m, mu, cfg.epochs, |theta| min_decaying_offset(theta, rho, l, mu, m)))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let instance = build_instance(cfg)?;
    let prob = &instance.problem;
    let reference = reference_solve(prob, REFERENCE_TOL, REFERENCE_MAX_ITER)?;
    let constants = prob.constants(reference.f_star);
    let sigma_star_sq = sigma_star(prob, &reference.x_star);
    let schedule = resolve_schedule(cfg, instance.rho_w, prob.smoothness(), prob.mu())?;
    let admissibility = check_admissible(&schedule, instance.rho_w, prob.smoothness(), prob.mu(), prob.m());
    for w in &admissibility.warnings {
        log::warn!("{w}");
    }
    if !admissibility.admissible {
        log::warn!(
            "stepsize not admissible: {} = {} exceeds the `{}` bound {}",
            if schedule.name() == "decaying" { "K" } else { "alpha" },
            admissibility.value,
            admissibility.binding,
            admissibility.threshold
        );
    }
    Ok(Prepared { instance, reference, constants, sigma_star_sq, schedule, admissibility })
}

/// Summary printed by `graph-info`.
#[derive(Clone, Debug, Serialize)]
pub struct GraphInfo {
    pub n: usize,
    pub edges: usize,
    pub rho_w: f64,
    pub l: f64,
    pub mu: f64,
    pub m: usize,
    /// Constant-stepsize bounds for this graph and problem.
    pub alpha_terms: Vec<BoundTerm>,
    pub alpha_max: f64,
}

pub fn graph_info(cfg: &ExperimentConfig) -> Result<GraphInfo> {
    let inst = build_instance(cfg)?;
    let prob = &inst.problem;
    let (l, mu, m) = (prob.smoothness(), prob.mu(), prob.m());
    let alpha_terms = if mu > 0.0 {
        strongly_convex_stepsize_terms(inst.rho_w, l, mu)
    } else {
        nonconvex_stepsize_terms(inst.rho_w, l, 2.0 * l, m, Some(cfg.epochs))
    };
    let alpha_max = alpha_terms.iter().map(|t| t.value).fold(f64::INFINITY, f64::min);
    Ok(GraphInfo { n: inst.graph.n(), edges: inst.graph.edge_count(), rho_w: inst.rho_w, l, mu, m, alpha_terms, alpha_max })
}

/// One metric across repetitions on the shared epoch grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSeries {
    /// `reps[r][t]`
    pub reps: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl MetricSeries {
    fn from_reps(reps: Vec<Vec<f64>>) -> Self {
        let r = reps.len();
        let len = reps.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; len];
        let mut stderr = vec![0.0; len];
        for t in 0..len {
            let mu = reps.iter().map(|v| v[t]).sum::<f64>() / r as f64;
            mean[t] = mu;
            if r > 1 {
                let var = reps.iter().map(|v| (v[t] - mu).powi(2)).sum::<f64>() / (r - 1) as f64;
                stderr[t] = (var / r as f64).sqrt();
            }
        }
        Self { reps, mean, stderr }
    }

    pub fn last_mean(&self) -> f64 {
        *self.mean.last().expect("non-empty series")
    }
}

/// Epoch-boundary metrics of one method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub method: Method,
    /// `0..=T`
    pub epochs: Vec<usize>,
    pub metrics: BTreeMap<String, MetricSeries>,
    /// Inner-step consensus error, `inner[r][t*m + l]`, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_consensus: Option<MetricSeries>,
    /// Component gradients spent per repetition.
    pub grad_evals: u64,
}

impl TrajectoryRecord {
    pub fn metric(&self, name: &str) -> Result<&MetricSeries> {
        self.metrics.get(name).ok_or_else(|| Error::Invalid(format!("metric `{name}` was not recorded for {}", self.method)))
    }
}

/// Records of every configured method plus the JSON sidecar.
pub struct ExperimentOutput {
    pub records: Vec<TrajectoryRecord>,
    pub summary: Value,
}

impl ExperimentOutput {
    pub fn record(&self, method: Method) -> Option<&TrajectoryRecord> {
        self.records.iter().find(|r| r.method == method)
    }
}

fn metric_list(cfg: &ExperimentConfig, strongly_convex: bool) -> Result<Vec<String>> {
    if cfg.metrics.is_empty() {
        let skip = if strongly_convex { "lyapunov_q" } else { "lyapunov_h" };
        return Ok(METRIC_NAMES.iter().filter(|m| **m != skip).map(|m| m.to_string()).collect());
    }
    if !strongly_convex && cfg.metrics.iter().any(|m| m == "lyapunov_h") {
        return Err(Error::Config { path: "metrics".into(), msg: "lyapunov_h needs a strongly convex problem".into() });
    }
    Ok(cfg.metrics.clone())
}

/// Shared initial iterate: one point drawn from the master seed and copied to
/// every agent, or one point per agent with `distinct_init`.
pub fn initial_state(cfg: &ExperimentConfig, n: usize, p: usize) -> Matrix<f64> {
    let draw = |tags: &[u64]| {
        let mut rng = rng_for(cfg.seed, Domain::Init, tags);
        (0..p).map(|_| cfg.init_scale * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect::<Vec<f64>>()
    };
    if cfg.distinct_init {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| draw(&[i as u64])).collect();
        Matrix::from_rows(&rows).expect("equal row lengths")
    } else {
        let x0 = draw(&[]);
        Matrix::from_fn(n, p, |_, j| x0[j])
    }
}

struct RepOutput {
    /// `values[metric][t]`
    values: Vec<Vec<f64>>,
    inner: Option<Vec<f64>>,
    grad_evals: u64,
}

fn measure(name: &str, x: &Matrix<f64>, prep: &Prepared, alpha: f64, best_grad: f64) -> f64 {
    let prob = &prep.instance.problem;
    let x_star = &prep.reference.x_star;
    let rho = prep.instance.rho_w;
    match name {
        "dist_sq" => x.row_iter().map(|r| dist_sq(r, x_star)).sum::<f64>() / x.rows() as f64,
        "avg_dist_sq" => dist_sq(&x.column_means(), x_star),
        "consensus_sq" => x.deviation_from_mean_sq(),
        "grad_norm_sq" => norm_sq(&prob.full_gradient(&x.column_means())),
        "best_grad_norm_sq" => best_grad,
        "f_gap" => prob.objective(&x.column_means()) - prep.reference.f_star,
        "lyapunov_h" => lyapunov_h(x, x_star, omega(alpha, prob.smoothness(), prob.mu(), prob.n(), rho)),
        "lyapunov_q" => lyapunov_q(prob, x, alpha, prep.reference.f_star, rho),
        other => unreachable!("metric `{other}` passed validation"),
    }
}

fn run_repetition(cfg: &ExperimentConfig, prep: &Prepared, method: Method, metrics: &[String], x0: &Matrix<f64>, rep: usize) -> Result<RepOutput> {
    let prob = &prep.instance.problem;
    let opt = Optimizer::new(method, derive_seed(cfg.seed, Domain::Repetition, &[rep as u64])).with_parallel(cfg.parallel_agents);
    let mut state: AgentStateBlock<f64> = opt.init_state(x0);
    let mut values = vec![Vec::with_capacity(cfg.epochs + 1); metrics.len()];
    let mut inner = cfg.inner_sampling.then(|| Vec::with_capacity(cfg.epochs * prob.m() + 1));
    let mut best_grad = f64::INFINITY;
    let mut record = |state: &AgentStateBlock<f64>, best_grad: &mut f64| {
        let alpha = prep.schedule.alpha(state.epoch);
        *best_grad = best_grad.min(norm_sq(&prob.full_gradient(&state.mean())));
        for (k, name) in metrics.iter().enumerate() {
            values[k].push(measure(name, &state.x, prep, alpha, *best_grad));
        }
    };
    record(&state, &mut best_grad);
    for _ in 0..cfg.epochs {
        match inner.as_mut() {
            Some(buf) => {
                buf.push(state.consensus_sq());
                let mut hook = |s: &AgentStateBlock<f64>| {
                    if s.inner < prob.m() {
                        buf.push(s.consensus_sq());
                    }
                };
                opt.epoch(&mut state, &prep.instance.mixing, prob, &prep.schedule, Some(&mut hook))?;
            }
            None => opt.epoch(&mut state, &prep.instance.mixing, prob, &prep.schedule, None)?,
        }
        record(&state, &mut best_grad);
    }
    if let Some(buf) = inner.as_mut() {
        buf.push(state.consensus_sq());
    }
    Ok(RepOutput { values, inner, grad_evals: state.grad_evals })
}

/// Runs every configured method on an already prepared instance.
pub fn run_prepared(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<TrajectoryRecord>> {
    let prob = &prep.instance.problem;
    let metrics = metric_list(cfg, prob.is_strongly_convex())?;
    let x0 = initial_state(cfg, prob.n(), prob.dim());
    let mut records = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let reps: Vec<RepOutput> =
            (0..cfg.repetitions).into_par_iter().map(|r| run_repetition(cfg, prep, method, &metrics, &x0, r)).collect::<Result<_>>()?;
        let grad_evals = reps[0].grad_evals;
        let inner_consensus = cfg.inner_sampling.then(|| MetricSeries::from_reps(reps.iter().map(|r| r.inner.clone().unwrap_or_default()).collect()));
        let mut by_metric: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(reps.len()); metrics.len()];
        for rep in reps {
            for (k, v) in rep.values.into_iter().enumerate() {
                by_metric[k].push(v);
            }
        }
        let series = metrics.iter().cloned().zip(by_metric.into_iter().map(MetricSeries::from_reps)).collect();
        records.push(TrajectoryRecord { method, epochs: (0..=cfg.epochs).collect(), metrics: series, grad_evals, inner_consensus });
    }
    Ok(records)
}

/// Builds, solves and runs `cfg`; writes outputs when `cfg.output` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let prep = prepare(cfg)?;
    let records = run_prepared(cfg, &prep)?;
    let wall = start.elapsed().as_secs_f64();
    let finals: BTreeMap<&str, BTreeMap<&str, f64>> =
        records.iter().map(|r| (r.method.name(), r.metrics.iter().map(|(k, s)| (k.as_str(), s.last_mean())).collect())).collect();
    let prob = &prep.instance.problem;
    let summary = json!({
        "config": cfg,
        "rho_w": prep.instance.rho_w,
        "mu": prob.mu(),
        "L": prob.smoothness(),
        "A": prep.constants.a,
        "B_sq": prep.constants.b_sq,
        "sigma_star_sq": prep.sigma_star_sq,
        "f_star": prep.reference.f_star,
        "reference": {
            "grad_norm": prep.reference.grad_norm,
            "iterations": prep.reference.iterations,
            "approximate": prep.reference.approximate,
            "closed_form_gap": prep.reference.closed_form_gap,
        },
        "schedule": prep.schedule,
        "admissibility": prep.admissibility,
        "grad_evals": records.iter().map(|r| (r.method.name(), r.grad_evals)).collect::<BTreeMap<_, _>>(),
        "final_means": finals,
        "wall_time_s": wall,
    });
    if let Some(dir) = &cfg.output {
        write_outputs(dir, &prep, &records, &summary)?;
    }
    Ok(ExperimentOutput { records, summary })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Writes `epoch,metric,mean,stderr,rep0,...` rows, metric-major.
pub fn write_trajectory_csv<W: std::io::Write>(out: W, record: &TrajectoryRecord) -> Result<()> {
    let reps = record.metrics.values().next().map_or(0, |s| s.reps.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["epoch".to_string(), "metric".into(), "mean".into(), "stderr".into()];
    header.extend((0..reps).map(|r| format!("rep{r}")));
    w.write_record(&header)?;
    for (name, s) in &record.metrics {
        for (t, &epoch) in record.epochs.iter().enumerate() {
            let mut row = vec![epoch.to_string(), name.clone(), fmt(s.mean[t]), fmt(s.stderr[t])];
            row.extend(s.reps.iter().map(|r| fmt(r[t])));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_inner_csv(path: &Path, series: &MetricSeries, m: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch".to_string(), "inner".into(), "metric".into(), "mean".into(), "stderr".into()];
    header.extend((0..series.reps.len()).map(|r| format!("rep{r}")));
    w.write_record(&header)?;
    for k in 0..series.mean.len() {
        let mut row = vec![(k / m).to_string(), (k % m).to_string(), "consensus_sq".into(), fmt(series.mean[k]), fmt(series.stderr[k])];
        row.extend(series.reps.iter().map(|r| fmt(r[k])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(dir: &Path, prep: &Prepared, records: &[TrajectoryRecord], summary: &Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in records {
        write_trajectory_csv(std::fs::File::create(dir.join(format!("{}.csv", r.method.name())))?, r)?;
        if let Some(inner) = &r.inner_consensus {
            write_inner_csv(&dir.join(format!("{}_inner.csv", r.method.name())), inner, prep.instance.problem.m())?;
        }
    }
    std::fs::write(dir.join("graph.edges"), prep.instance.graph.to_edge_list())?;
    if let Some(p) = &prep.instance.partition {
        std::fs::write(dir.join("partition.json"), p.to_json()?)?;
    }
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    Ok(())
}
