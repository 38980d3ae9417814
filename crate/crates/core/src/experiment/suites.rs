//! Named check suites on fixed desk-scale instances.

use serde::Serialize;
use serde_json::json;

use super::config::{DataSpec, ExperimentConfig, GraphSpec, ProblemSpec, ScheduleSpec};
use super::{prepare, run_prepared, Prepared};
use crate::checks::{
    check_bounded_variance, check_consensus_scaling, check_contraction, check_floor_scaling, check_h_recursion, check_variance_sandwich, fit_rate, HStep,
    Verdict,
};
use crate::error::{Error, Result};
use crate::graph::{build_graph, Topology};
use crate::metrics::{omega, sigma_shuffle_estimate};
use crate::mixing::metropolis_weights;
use crate::optim::{strongly_convex_stepsize_terms, Method};

/// Registered suite names.
pub const SUITES: [&str; 8] = ["contraction", "sandwich", "rates_scvx", "rates_ncvx", "floors", "consensus", "lyapunov", "ordering"];

/// Master seed shared by every suite.
pub const SUITE_SEED: u64 = 7;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub pass: bool,
    pub verdicts: Vec<Verdict>,
}

pub fn run_suite(name: &str) -> Result<SuiteReport> {
    let verdicts = match name {
        "contraction" => contraction()?,
        "sandwich" => sandwich()?,
        "rates_scvx" => rates_scvx()?,
        "rates_ncvx" => rates_ncvx()?,
        "floors" => floors()?,
        "consensus" => consensus()?,
        "lyapunov" => lyapunov()?,
        "ordering" => ordering()?,
        _ => return Err(Error::UnknownSuite { name: name.to_string(), registered: SUITES.iter().map(|s| s.to_string()).collect() }),
    };
    Ok(SuiteReport { suite: name.to_string(), pass: verdicts.iter().all(|v| v.pass), verdicts })
}

fn base_config(problem: ProblemSpec, n: usize, topology: Topology, schedule: ScheduleSpec, epochs: usize, repetitions: usize, methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        seed: SUITE_SEED,
        epochs,
        repetitions,
        methods,
        output: None,
        metrics: Vec::new(),
        parallel_agents: false,
        inner_sampling: false,
        distinct_init: false,
        init_scale: 3.0,
        problem,
        graph: GraphSpec { n, topology, edges: None },
        schedule,
    }
}

/// The quadratic used by the rate, floor, consensus and Lyapunov suites:
/// ring of 8 agents, 8 components each, `p = 5`, `μ = L = 1`.
pub fn canonical_quadratic(schedule: ScheduleSpec, epochs: usize, repetitions: usize, methods: Vec<Method>) -> ExperimentConfig {
    let problem = ProblemSpec::Quadratic { m: 8, dim: 5, mu: 1.0, l: 1.0, heterogeneity: 1.0, spread: 1.0, seed: Some(SUITE_SEED) };
    base_config(problem, 8, Topology::Ring, schedule, epochs, repetitions, methods)
}

/// 99% of the constant-stepsize bound of the canonical instance, rounded
/// down to four decimals.
pub fn canonical_alpha() -> Result<f64> {
    let w = metropolis_weights::<f64>(&build_graph(&Topology::Ring, 8)?)?;
    let amax = strongly_convex_stepsize_terms(w.rho_w(), 1.0, 1.0).iter().map(|t| t.value).fold(f64::INFINITY, f64::min);
    Ok((0.99 * amax * 1e4).floor() / 1e4)
}

fn contraction() -> Result<Vec<Verdict>> {
    let topologies = [Topology::Complete, Topology::Ring, Topology::Grid { rows: 0, cols: 0 }, Topology::Exponential, Topology::ErdosRenyi { prob: 0.8, seed: SUITE_SEED }];
    let mut out = Vec::new();
    for n in [4usize, 16] {
        for t in &topologies {
            let t = match t {
                Topology::Grid { .. } => {
                    let r = (n as f64).sqrt() as usize;
                    Topology::Grid { rows: r, cols: n / r }
                }
                other => other.clone(),
            };
            let w = metropolis_weights::<f64>(&build_graph(&t, n)?)?;
            let mut v = check_contraction(&w, 1000, 3, SUITE_SEED);
            v.params["topology"] = json!(t);
            out.push(v);
        }
    }
    Ok(out)
}

/// Quadratic of the sandwich check: `n = m = 4`, `p = 5`, spectrum in `[1, 10]`.
pub fn sandwich_problem() -> ProblemSpec {
    ProblemSpec::Quadratic { m: 4, dim: 5, mu: 1.0, l: 10.0, heterogeneity: 0.0, spread: 1.0, seed: Some(SUITE_SEED) }
}

fn sandwich() -> Result<Vec<Verdict>> {
    let cfg = base_config(sandwich_problem(), 4, Topology::Ring, ScheduleSpec::Constant { alpha: 0.0 }, 1, 1, vec![Method::Drr]);
    let prep = prepare(&cfg)?;
    let mut out = vec![check_variance_sandwich(&prep.instance.problem, &prep.reference.x_star, &[1e-2, 1e-3], 2000, SUITE_SEED)?];
    out.extend(bounded_variance_verdicts()?);
    Ok(out)
}

fn synth(samples: usize) -> DataSpec {
    DataSpec::Synthetic { samples, dim: 5, separation: 1.0, seed: Some(SUITE_SEED) }
}

/// The bounded-variance inequality on every built-in problem kind.
pub fn bounded_variance_verdicts() -> Result<Vec<Verdict>> {
    let problems = [
        ProblemSpec::Quadratic { m: 6, dim: 4, mu: 0.5, l: 4.0, heterogeneity: 1.0, spread: 1.0, seed: Some(SUITE_SEED) },
        ProblemSpec::LogisticL2 { m: 6, data: synth(240), rho: 0.1 },
        ProblemSpec::LogisticSigmoidal { m: 6, data: synth(240), eta: 0.2 },
    ];
    problems
        .into_iter()
        .map(|p| {
            let cfg = base_config(p, 4, Topology::Ring, ScheduleSpec::Constant { alpha: 0.0 }, 1, 1, vec![Method::Drr]);
            let prep = prepare(&cfg)?;
            Ok(check_bounded_variance(&prep.instance.problem, &prep.reference.x_star, prep.reference.f_star, 100, 2.0, SUITE_SEED))
        })
        .collect()
}

/// Slope verdict of `series` against `t + offset` over epochs `[T/2, T]`.
fn slope_verdict(check: &str, method: Method, series: &[f64], offset: f64, range: (f64, f64)) -> Result<Verdict> {
    let t_max = series.len() - 1;
    let pts: Vec<(f64, f64)> = series.iter().enumerate().skip(t_max / 2).map(|(t, &v)| (t as f64 + offset, v)).collect();
    let fit = fit_rate(&pts, None)?;
    Ok(Verdict::new(
        check,
        json!({"method": method.name(), "epochs": t_max, "offset": offset, "window": [t_max / 2, t_max]}),
        json!({"slope": fit.slope, "half_width": fit.half_width}),
        json!({"slope_min": range.0, "slope_max": range.1}),
        (range.0..=range.1).contains(&fit.slope),
    ))
}

pub const RATES_SCVX_EPOCHS: usize = 2000;

fn rates_scvx() -> Result<Vec<Verdict>> {
    let cfg = canonical_quadratic(ScheduleSpec::Decaying { theta: 16.0, k: None }, RATES_SCVX_EPOCHS, 10, vec![Method::Drr, Method::Dsgd]);
    let prep = prepare(&cfg)?;
    let offset = match prep.schedule {
        crate::optim::StepsizeSchedule::Decaying { k, .. } => k,
        _ => unreachable!("decaying schedule"),
    };
    let records = run_prepared(&cfg, &prep)?;
    records
        .iter()
        .map(|r| {
            let range = if r.method == Method::Drr { (-2.3, -1.7) } else { (-1.3, -0.7) };
            let mut v = slope_verdict("rate_scvx", r.method, &r.metric("dist_sq")?.mean, offset, range)?;
            v.params["admissible"] = json!(prep.admissibility.admissible);
            Ok(v)
        })
        .collect()
}

pub const NCVX_HORIZONS: [usize; 4] = [200, 400, 800, 1600];
/// `η` of the cube-root schedule in the nonconvex suite. The measured slope
/// depends on it; smaller values sit where the floor shrinks faster than `α²`.
pub const NCVX_ETA: f64 = 128.0;

fn rates_ncvx() -> Result<Vec<Verdict>> {
    let problem = ProblemSpec::LogisticSigmoidal { m: 8, data: synth(256), eta: 0.2 };
    let mut finals = Vec::new();
    let mut per_rep = Vec::new();
    for &t in &NCVX_HORIZONS {
        let mut cfg = base_config(problem.clone(), 8, Topology::Grid { rows: 2, cols: 4 }, ScheduleSpec::CubeRoot { eta: NCVX_ETA, horizon: None }, t, 10, vec![Method::Drr]);
        cfg.init_scale = 1.0;
        cfg.metrics = vec!["grad_norm_sq".into(), "best_grad_norm_sq".into()];
        let prep = prepare(&cfg)?;
        let rec = &run_prepared(&cfg, &prep)?[0];
        // best-so-far of the repetition mean, an estimate of min_t E‖∇f(x̄_t)‖²
        finals.push(rec.metric("grad_norm_sq")?.mean.iter().copied().fold(f64::INFINITY, f64::min));
        per_rep.push(rec.metric("best_grad_norm_sq")?.last_mean());
    }
    // four horizons: plain least squares on the log-log points
    let xs: Vec<f64> = NCVX_HORIZONS.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = finals.iter().map(|v| v.ln()).collect();
    let slope = log_slope(&xs, &ys);
    Ok(vec![Verdict::new(
        "rate_ncvx",
        json!({"method": "drr", "horizons": NCVX_HORIZONS, "eta": NCVX_ETA, "topology": "grid 2x4", "repetitions": 10}),
        json!({"best_grad_norm_sq": finals, "slope": slope, "mean_of_per_rep_best": per_rep}),
        json!({"slope_min": -0.9, "slope_max": -0.45, "target": -2.0 / 3.0}),
        (-0.9..=-0.45).contains(&slope),
    )])
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub const FLOOR_EPOCHS: usize = 3000;

fn constant_runs(alphas: &[f64], metric: &str) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut out = Vec::new();
    let mut rho = 0.0;
    for &a in alphas {
        let cfg = canonical_quadratic(ScheduleSpec::Constant { alpha: a }, FLOOR_EPOCHS, 10, vec![Method::Drr]);
        let prep = prepare(&cfg)?;
        rho = prep.instance.rho_w;
        out.push(run_prepared(&cfg, &prep)?[0].metric(metric)?.mean.clone());
    }
    Ok((out, rho))
}

fn floors() -> Result<Vec<Verdict>> {
    let a = canonical_alpha()?;
    let (runs, _) = constant_runs(&[a, a / 2.0], "dist_sq")?;
    Ok(vec![check_floor_scaling(a, &runs[0], a / 2.0, &runs[1])?])
}

fn consensus() -> Result<Vec<Verdict>> {
    let a = canonical_alpha()?;
    let alphas = [a, a / 2.0, a / 4.0];
    let (runs, rho) = constant_runs(&alphas, "consensus_sq")?;
    let paired: Vec<(f64, Vec<f64>)> = alphas.iter().copied().zip(runs).collect();
    Ok(vec![check_consensus_scaling(&paired, rho)?])
}

pub const LYAPUNOV_EPOCHS: usize = 300;

/// Averaged `H_t` steps of the canonical instance with `R = 20`.
pub fn lyapunov_steps() -> Result<(Vec<HStep>, Prepared, ExperimentConfig)> {
    let a = canonical_alpha()?;
    let mut cfg = canonical_quadratic(ScheduleSpec::Constant { alpha: a }, LYAPUNOV_EPOCHS, 20, vec![Method::Drr]);
    cfg.metrics = vec!["avg_dist_sq".into(), "consensus_sq".into()];
    let prep = prepare(&cfg)?;
    let rec = &run_prepared(&cfg, &prep)?[0];
    let prob = &prep.instance.problem;
    let w = omega(a, prob.smoothness(), prob.mu(), prob.n(), prep.instance.rho_w);
    let sigma = sigma_shuffle_estimate(prob, &prep.reference.x_star, a, 2000, SUITE_SEED).estimate;
    let (d, c) = (&rec.metric("avg_dist_sq")?.reps, &rec.metric("consensus_sq")?.reps);
    let r = d.len() as f64;
    let h: Vec<Vec<f64>> = d.iter().zip(c).map(|(dr, cr)| dr.iter().zip(cr).map(|(x, y)| x + w * y).collect()).collect();
    let stat = |t: usize| {
        let mean = h.iter().map(|v| v[t]).sum::<f64>() / r;
        let var = h.iter().map(|v| (v[t] - mean).powi(2)).sum::<f64>() / (r - 1.0);
        (mean, (var / r).sqrt())
    };
    let steps = (0..LYAPUNOV_EPOCHS)
        .map(|t| {
            let (h0, s0) = stat(t);
            let (h1, s1) = stat(t + 1);
            HStep { epoch: t, alpha: a, h: h0, h_se: s0, h_next: h1, h_next_se: s1, sigma_shuffle: sigma }
        })
        .collect();
    Ok((steps, prep, cfg))
}

fn lyapunov() -> Result<Vec<Verdict>> {
    let (steps, prep, _) = lyapunov_steps()?;
    let prob = &prep.instance.problem;
    Ok(vec![check_h_recursion(&steps, &prep.schedule, prob.n(), prob.m(), prob.mu(), prob.smoothness(), prep.instance.rho_w, prep.sigma_star_sq)?])
}

pub const ORDERING_EPOCHS: usize = 1000;
/// Shared constant stepsize of the topology comparison.
pub const ORDERING_ALPHA: f64 = 0.02;

/// Logistic comparison set over one topology with 16 agents.
pub fn ordering_config(topology: Topology) -> ExperimentConfig {
    let problem = ProblemSpec::LogisticL2 { m: 10, data: synth(640), rho: 0.1 };
    let mut cfg = base_config(problem, 16, topology, ScheduleSpec::Constant { alpha: ORDERING_ALPHA }, ORDERING_EPOCHS, 10, vec![Method::Crr, Method::Drr, Method::Dsgd]);
    cfg.init_scale = 1.0;
    cfg.metrics = vec!["dist_sq".into()];
    cfg
}

pub fn ordering_topologies() -> [(&'static str, Topology); 4] {
    [("ring", Topology::Ring), ("grid", Topology::Grid { rows: 4, cols: 4 }), ("exponential", Topology::Exponential), ("complete", Topology::Complete)]
}

fn ordering() -> Result<Vec<Verdict>> {
    let mut gaps = Vec::new();
    let mut ring_finals = None;
    for (name, t) in ordering_topologies() {
        let cfg = ordering_config(t);
        let prep = prepare(&cfg)?;
        let recs = run_prepared(&cfg, &prep)?;
        let fin = |m: Method| -> Result<f64> { Ok(recs.iter().find(|r| r.method == m).expect("configured").metric("dist_sq")?.last_mean()) };
        let (crr, drr, dsgd) = (fin(Method::Crr)?, fin(Method::Drr)?, fin(Method::Dsgd)?);
        if ring_finals.is_none() {
            ring_finals = Some((crr, drr, dsgd));
        }
        gaps.push((name, prep.instance.rho_w, drr - crr));
    }
    let (crr, drr, dsgd) = ring_finals.expect("ring is first");
    let monotone = gaps.windows(2).all(|w| w[1].2 < w[0].2);
    let params = json!({"n": 16, "m": 10, "alpha": ORDERING_ALPHA, "epochs": ORDERING_EPOCHS, "repetitions": 10});
    Ok(vec![
        Verdict::new(
            "ordering_ring",
            params.clone(),
            json!({"crr": crr, "drr": drr, "dsgd": dsgd}),
            json!("crr <= drr < dsgd"),
            crr <= drr && drr < dsgd,
        ),
        Verdict::new(
            "ordering_topology_gap",
            params,
            json!(gaps.iter().map(|(n, r, g)| json!({"topology": n, "rho_w": r, "gap": g})).collect::<Vec<_>>()),
            json!("gap strictly decreasing ring > grid > exponential > complete"),
            monotone,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_lists_names() {
        let err = run_suite("foo").unwrap_err();
        let msg = err.to_string();
        for s in SUITES {
            assert!(msg.contains(s), "{msg}");
        }
    }

    #[test]
    fn contraction_suite_passes() {
        let r = run_suite("contraction").unwrap();
        assert_eq!(r.verdicts.len(), 10);
        assert!(r.pass);
    }

    #[test]
    fn canonical_alpha_is_admissible() {
        let a = canonical_alpha().unwrap();
        let cfg = canonical_quadratic(ScheduleSpec::Constant { alpha: a }, 1, 1, vec![Method::Drr]);
        let prep = prepare(&cfg).unwrap();
        assert!(prep.admissibility.admissible);
        assert!(a > 0.0);
    }
}
