//! Pass/fail verdicts for the quantitative claims: contraction of the
//! mixing step, the shuffling-variance sandwich, rate slopes, error floors,
//! consensus scaling and the Lyapunov recursion.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{sigma_shuffle_estimate, sigma_star};
use crate::mixing::MixingMatrix;
use crate::objectives::{FiniteSumProblem, ProblemKind};
use crate::optim::{check_admissible, StepsizeSchedule};
use crate::seed::{rng_for, Domain};

/// Machine-readable outcome of one check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub params: Value,
    pub measured: Value,
    pub threshold: Value,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    pub fn new(check: &str, params: Value, measured: Value, threshold: Value, pass: bool) -> Self {
        Self { check: check.to_string(), params, measured, threshold, pass, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!("[{}] {} measured={} threshold={}", if self.pass { "PASS" } else { "FAIL" }, self.check, self.measured, self.threshold)
    }
}

/// Least-squares line through `log x`, `log y`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub half_width: f64,
    pub window: (f64, f64),
}

/// Minimum number of points accepted by [`fit_rate`].
pub const MIN_FIT_POINTS: usize = 5;

struct Line {
    slope: f64,
    intercept: f64,
    slope_se: f64,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Line {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if xs.len() > 2 {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Line { slope, intercept, slope_se }
}

/// Fits `log value = a + slope · log t` over points with `t` in `window`
/// (inclusive). Requires at least [`MIN_FIT_POINTS`] points, all positive.
pub fn fit_rate(series: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<RateFit> {
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let points: Vec<(f64, f64)> = series.iter().copied().filter(|&(t, _)| t >= lo && t <= hi).collect();
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::TooFewSamples { need: MIN_FIT_POINTS, have: points.len() });
    }
    if let Some(&(t, v)) = points.iter().find(|&&(t, v)| !(t > 0.0 && v > 0.0 && v.is_finite())) {
        return Err(Error::Invalid(format!("rate fit needs positive values, got {v} at {t}")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let line = least_squares(&xs, &ys);
    let t = StudentsT::new(0.0, 1.0, (points.len() - 2) as f64).expect("positive degrees of freedom");
    let half_width = t.inverse_cdf(0.975) * line.slope_se;
    let window = (points[0].0, points[points.len() - 1].0);
    Ok(RateFit { points, slope: line.slope, intercept: line.intercept, half_width, window })
}

/// Checks `‖Wω − 1ω̄ᵀ‖_F ≤ ρ_w ‖ω − 1ω̄ᵀ‖_F + 1e-9` on random `n×p` states.
pub fn check_contraction(w: &MixingMatrix<f64>, trials: usize, p: usize, seed: u64) -> Verdict {
    let n = w.n();
    let rho = w.rho_w();
    let mut worst_ratio: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    for k in 0..trials {
        let mut rng = rng_for(seed, Domain::Check, &[n as u64, k as u64]);
        let omega: Matrix<f64> = Matrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let before = omega.deviation_from_mean_sq().sqrt();
        let after = w.mix(&omega).deviation_from_mean_sq().sqrt();
        worst_excess = worst_excess.max(after - rho * before);
        if before > 0.0 {
            worst_ratio = worst_ratio.max(after / before);
        }
    }
    Verdict::new(
        "contraction",
        json!({"n": n, "p": p, "trials": trials, "seed": seed}),
        json!({"worst_ratio": worst_ratio, "worst_excess": worst_excess}),
        json!({"rho_w": rho, "slack": 1e-9}),
        worst_excess <= 1e-9,
    )
}

/// Checks `α²μm σ²_*/8 − 3se ≤ σ²_shuffle ≤ α²Lm σ²_*/4 + 3se` for every `α`.
pub fn check_variance_sandwich(prob: &FiniteSumProblem<f64>, x_star: &[f64], alphas: &[f64], n_mc: usize, seed: u64) -> Result<Verdict> {
    if prob.kind() != ProblemKind::Quadratic || !prob.is_strongly_convex() {
        return Err(Error::Invalid("the variance sandwich needs a strongly convex quadratic (exact mu, L)".into()));
    }
    let (mu, l, m) = (prob.mu(), prob.smoothness(), prob.m() as f64);
    let s2 = sigma_star(prob, x_star);
    let mut rows = Vec::new();
    let mut pass = true;
    for &a in alphas {
        let est = sigma_shuffle_estimate(prob, x_star, a, n_mc, seed);
        let lower = a * a * mu * m * s2 / 8.0;
        let upper = a * a * l * m * s2 / 4.0;
        let slack = 3.0 * est.mc_stderr;
        let ok = est.estimate >= lower - slack && est.estimate <= upper + slack;
        pass &= ok;
        rows.push(json!({
            "alpha": a, "estimate": est.estimate, "stderr": est.mc_stderr, "exact": est.exact,
            "lower": lower, "upper": upper, "pass": ok,
        }));
    }
    Ok(Verdict::new(
        "variance_sandwich",
        json!({"n": prob.n(), "m": prob.m(), "mu": mu, "L": l, "n_mc": n_mc, "seed": seed}),
        json!({"sigma_star_sq": s2, "per_alpha": rows}),
        json!({"slack_se": 3.0}),
        pass,
    ))
}

/// Checks `(1/mn) ΣΣ ‖∇f_{i,l}(x) − ∇f(x)‖² ≤ 2A (f(x) − f̄) + B²` with
/// `A = 2L` at `points` random points `x* + scale·z`, `z` standard normal.
pub fn check_bounded_variance(prob: &FiniteSumProblem<f64>, x_star: &[f64], f_bar: f64, points: usize, scale: f64, seed: u64) -> Verdict {
    let c = prob.constants(f_bar);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_ratio: f64 = 0.0;
    for k in 0..points {
        let mut rng = rng_for(seed, Domain::Check, &[k as u64]);
        let x: Vec<f64> = x_star.iter().map(|&v| v + scale * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
        let lhs = prob.gradient_dissimilarity(&x);
        let rhs = 2.0 * c.a * (prob.objective(&x) - f_bar) + c.b_sq;
        worst_excess = worst_excess.max(lhs - rhs - 1e-9 * rhs.abs().max(1.0));
        if rhs > 0.0 {
            worst_ratio = worst_ratio.max(lhs / rhs);
        }
    }
    Verdict::new(
        "bounded_variance",
        json!({"kind": format!("{:?}", prob.kind()), "n": prob.n(), "m": prob.m(), "points": points, "scale": scale, "seed": seed}),
        json!({"worst_ratio": worst_ratio, "worst_excess": worst_excess}),
        json!({"A": c.a, "B_sq": c.b_sq, "f_bar": f_bar}),
        worst_excess <= 0.0,
    )
}

/// Plateau level of a converging series: the mean of its last quarter.
///
/// A plateau requires the drift between the third- and fourth-quarter means
/// to be at most `rel_tol` of the level and at most `rel_tol` of the total
/// change since the first entry. A series that is still moving (for instance
/// a stepsize too small to make progress) fails the second test.
pub fn plateau_level(series: &[f64], rel_tol: f64) -> Result<f64> {
    if series.len() < 8 {
        return Err(Error::TooFewSamples { need: 8, have: series.len() });
    }
    let q = series.len() / 4;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let q4 = mean(&series[series.len() - q..]);
    let q3 = mean(&series[series.len() - 2 * q..series.len() - q]);
    let drift = (q3 - q4).abs();
    let span = (series[0] - q4).abs();
    if !q4.is_finite() || drift > rel_tol * q4.abs() || drift > rel_tol * span || span == 0.0 {
        return Err(Error::PlateauNotReached(format!(
            "last-quarter mean {q4:e}, drift from previous quarter {drift:e}, change since start {span:e}"
        )));
    }
    Ok(q4)
}

/// Default relative tolerance of [`plateau_level`].
pub const PLATEAU_TOL: f64 = 0.05;

/// `floor(α) / floor(α/2)` must lie in `[3, 6]`.
pub fn check_floor_scaling(alpha: f64, series_alpha: &[f64], alpha_half: f64, series_half: &[f64]) -> Result<Verdict> {
    let fa = plateau_level(series_alpha, PLATEAU_TOL)?;
    let fh = plateau_level(series_half, PLATEAU_TOL)?;
    let ratio = fa / fh;
    Ok(Verdict::new(
        "floor_scaling",
        json!({"alpha": alpha, "alpha_small": alpha_half}),
        json!({"floor": fa, "floor_small": fh, "ratio": ratio}),
        json!({"ratio_min": 3.0, "ratio_max": 6.0}),
        (3.0..=6.0).contains(&ratio),
    ))
}

/// Log-log slope of plateau consensus error against `α` must lie in
/// `[1.6, 2.4]`. With `rho_w = 0` the check is skipped (exact consensus).
pub fn check_consensus_scaling(runs: &[(f64, Vec<f64>)], rho_w: f64) -> Result<Verdict> {
    let params = json!({"alphas": runs.iter().map(|r| r.0).collect::<Vec<_>>(), "rho_w": rho_w});
    if rho_w == 0.0 {
        return Ok(Verdict::new("consensus_scaling", params, json!("exact-consensus"), json!({"slope_min": 1.6, "slope_max": 2.4}), true)
            .with_note("exact-consensus: rho_w = 0, consensus error is zero after every mixing round"));
    }
    if runs.len() < 3 {
        return Err(Error::TooFewSamples { need: 3, have: runs.len() });
    }
    let levels = runs.iter().map(|(_, s)| plateau_level(s, PLATEAU_TOL)).collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = runs.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = levels.iter().map(|v| v.ln()).collect();
    let line = least_squares(&xs, &ys);
    Ok(Verdict::new(
        "consensus_scaling",
        params,
        json!({"plateaus": levels, "slope": line.slope}),
        json!({"slope_min": 1.6, "slope_max": 2.4}),
        (1.6..=2.4).contains(&line.slope),
    ))
}

/// Averaged Lyapunov values across one epoch transition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HStep {
    pub epoch: usize,
    pub alpha: f64,
    /// `H_t` with weight `ω_t`, and its standard error.
    pub h: f64,
    pub h_se: f64,
    /// `H_{t+1}` with the same weight `ω_t`.
    pub h_next: f64,
    pub h_next_se: f64,
    pub sigma_shuffle: f64,
}

/// Right-hand side of the one-epoch recursion of `H`.
#[allow(clippy::too_many_arguments)]
pub fn h_recursion_bound(h: f64, alpha: f64, mu: f64, l: f64, rho: f64, m: usize, sigma_shuffle: f64, sigma_star_sq: f64) -> (f64, f64) {
    let c = 1.0 - alpha * mu / 4.0;
    let gap2 = (1.0 - rho * rho).powi(2);
    let r2 = rho * rho;
    let geo: f64 = (0..m).map(|k| c.powi(k as i32)).sum();
    let additive = 2.0
        * (alpha * sigma_shuffle * (1.0 + 240.0 * alpha * alpha * r2 * l.powi(3) / (mu * gap2))
            + 120.0 * alpha.powi(3) * r2 * l * l * sigma_star_sq / (mu * gap2))
        * geo;
    let contraction = c.powi(m as i32);
    (contraction * h + additive, contraction)
}

/// Checks the one-epoch recursion of `H` on averaged runs.
///
/// Each transition passes when `H_{t+1} ≤ bound(H_t) + 3 se`, with `se`
/// combining the standard errors of both sides. At least 95% must pass.
#[allow(clippy::too_many_arguments)]
pub fn check_h_recursion(
    steps: &[HStep],
    schedule: &StepsizeSchedule,
    n: usize,
    m: usize,
    mu: f64,
    l: f64,
    rho: f64,
    sigma_star_sq: f64,
) -> Result<Verdict> {
    let adm = check_admissible(schedule, rho, l, mu, m);
    if !adm.admissible {
        return Err(Error::Inadmissible(format!("{} bound {:e} violated by {:e}", adm.binding, adm.threshold, adm.value)));
    }
    let mut passed = 0usize;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut contraction_ok = true;
    for s in steps {
        let (rhs, c) = h_recursion_bound(s.h, s.alpha, mu, l, rho, m, s.sigma_shuffle, sigma_star_sq);
        contraction_ok &= c > 0.0 && c < 1.0 || s.alpha == 0.0;
        let se = (s.h_next_se.powi(2) + (c * s.h_se).powi(2)).sqrt();
        let excess = s.h_next - rhs - 3.0 * se;
        worst_excess = worst_excess.max(excess);
        if excess <= 0.0 {
            passed += 1;
        }
    }
    let frac = if steps.is_empty() { 0.0 } else { passed as f64 / steps.len() as f64 };
    Ok(Verdict::new(
        "h_recursion",
        json!({"n": n, "m": m, "mu": mu, "L": l, "rho_w": rho, "epochs": steps.len(), "schedule": schedule}),
        json!({"fraction_passing": frac, "worst_excess": worst_excess, "sigma_star_sq": sigma_star_sq}),
        json!({"min_fraction": 0.95, "slack_se": 3.0}),
        frac >= 0.95 && contraction_ok,
    )
    .with_note("uses the max-over-l shuffling variance estimate, which can only loosen the bound"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Topology};
    use crate::mixing::metropolis_weights;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_power_law_slope() {
        let s: Vec<(f64, f64)> = (1..=20).map(|t| (t as f64, 3.0 / (t as f64).powi(2))).collect();
        let f = fit_rate(&s, None).unwrap();
        assert_abs_diff_eq!(f.slope, -2.0, epsilon = 1e-6);
        assert!(f.half_width < 1e-6);
    }

    #[test]
    fn flat_series_zero_slope() {
        let s: Vec<(f64, f64)> = (1..=10).map(|t| (t as f64, 0.7)).collect();
        assert_abs_diff_eq!(fit_rate(&s, None).unwrap().slope, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_window_and_errors() {
        let s: Vec<(f64, f64)> = (1..=10).map(|t| (t as f64, 1.0 / t as f64)).collect();
        let f = fit_rate(&s, Some((5.0, 10.0))).unwrap();
        assert_eq!(f.points.len(), 6);
        assert_eq!(f.window, (5.0, 10.0));
        assert!(matches!(fit_rate(&s, Some((8.0, 10.0))), Err(Error::TooFewSamples { .. })));
        let mut bad = s.clone();
        bad[3].1 = 0.0;
        assert!(fit_rate(&bad, None).is_err());
    }

    #[test]
    fn contraction_on_small_graphs() {
        let complete = metropolis_weights(&build_graph(&Topology::Complete, 4).unwrap()).unwrap();
        let v = check_contraction(&complete, 50, 3, 1);
        assert!(v.pass);
        assert!(v.measured["worst_ratio"].as_f64().unwrap() < 1e-12);
        let ring = metropolis_weights(&build_graph(&Topology::Ring, 4).unwrap()).unwrap();
        let v = check_contraction(&ring, 200, 3, 1);
        assert!(v.pass);
        assert!(v.measured["worst_ratio"].as_f64().unwrap() <= 1.0 / 3.0 + 1e-9);
    }

    #[test]
    fn consensual_state_contracts_trivially() {
        let ring = metropolis_weights::<f64>(&build_graph(&Topology::Ring, 5).unwrap()).unwrap();
        let flat = Matrix::from_fn(5, 2, |_, j| j as f64 + 1.0);
        assert_abs_diff_eq!(ring.mix(&flat).deviation_from_mean_sq(), 0.0, epsilon = 1e-24);
    }

    fn decaying(len: usize, floor: f64) -> Vec<f64> {
        (0..len).map(|t| floor + 10.0 * (-(t as f64) / 8.0).exp()).collect()
    }

    #[test]
    fn floor_ratio_and_guards() {
        let v = check_floor_scaling(0.1, &decaying(400, 4e-3), 0.05, &decaying(400, 1e-3)).unwrap();
        assert!(v.pass);
        assert_abs_diff_eq!(v.measured["ratio"].as_f64().unwrap(), 4.0, epsilon = 1e-6);
        let same = check_floor_scaling(0.1, &decaying(400, 4e-3), 0.1, &decaying(400, 4e-3)).unwrap();
        assert!(!same.pass);
        // a run with a negligible stepsize is still moving linearly
        let crawling: Vec<f64> = (0..400).map(|t| 10.0 - 1e-9 * t as f64).collect();
        assert!(matches!(plateau_level(&crawling, PLATEAU_TOL), Err(Error::PlateauNotReached(_))));
    }

    #[test]
    fn consensus_slope() {
        let runs: Vec<(f64, Vec<f64>)> = [1e-2, 5e-3, 2.5e-3].iter().map(|&a| (a, decaying(300, 7.0 * a * a))).collect();
        let v = check_consensus_scaling(&runs, 0.6).unwrap();
        assert!(v.pass, "{v:?}");
        assert_abs_diff_eq!(v.measured["slope"].as_f64().unwrap(), 2.0, epsilon = 1e-6);
        assert!(check_consensus_scaling(&runs[..1], 0.6).is_err());
        assert_eq!(check_consensus_scaling(&runs[..1], 0.0).unwrap().measured, json!("exact-consensus"));
    }

    #[test]
    fn h_bound_zero_stepsize_is_identity() {
        let (rhs, c) = h_recursion_bound(2.5, 0.0, 1.0, 3.0, 0.5, 4, 0.0, 1.0);
        assert_eq!((rhs, c), (2.5, 1.0));
        let (_, c) = h_recursion_bound(1.0, 1e-3, 1.0, 3.0, 0.5, 4, 0.0, 1.0);
        assert!(c > 0.0 && c < 1.0);
    }

    #[test]
    fn h_check_rejects_inadmissible() {
        let sched = StepsizeSchedule::Constant { alpha: 1.0 };
        assert!(matches!(check_h_recursion(&[], &sched, 4, 4, 1.0, 2.0, 0.5, 1.0), Err(Error::Inadmissible(_))));
    }

    #[test]
    fn verdict_json_shape() {
        let v = Verdict::new("x", json!({}), json!(1.0), json!(2.0), true);
        let s = serde_json::to_value(&v).unwrap();
        for k in ["check", "params", "measured", "threshold", "pass"] {
            assert!(s.get(k).is_some());
        }
        assert!(s.get("note").is_none());
    }
}
