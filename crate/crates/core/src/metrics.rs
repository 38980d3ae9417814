//! Reference solutions and the quantities measured along trajectories.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objectives::{quadratic_minimizer, FiniteSumProblem, ProblemKind};
use crate::optim::limit_points;
use crate::scalar::{dist_sq, norm_sq, Scalar};
use crate::seed::{rng_for, Domain};

/// Starts used for the nonconvex multi-start search.
pub const MULTI_START: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReferenceSolution<S> {
    pub x_star: Vec<S>,
    pub f_star: S,
    pub grad_norm: S,
    pub iterations: usize,
    pub tol: S,
    /// Set for nonconvex problems: `x_star` is the best stationary point
    /// found, and `f_star` only an estimate of `inf f`.
    pub approximate: bool,
    /// `‖x_gd − x_closed_form‖` for quadratics.
    pub closed_form_gap: Option<S>,
}

fn gradient_descent<S: Scalar>(prob: &FiniteSumProblem<S>, mut x: Vec<S>, tol: S, max_iter: usize) -> (Vec<S>, S, usize) {
    let step = S::one() / prob.smoothness();
    for it in 0..max_iter {
        let g = prob.full_gradient(&x);
        let gn = norm_sq(&g).sqrt();
        if gn <= tol {
            return (x, gn, it);
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= step * *gi;
        }
    }
    let gn = norm_sq(&prob.full_gradient(&x)).sqrt();
    (x, gn, max_iter)
}

/// Full-gradient descent with step `1/L` until `‖∇f‖ ≤ tol`.
///
/// Quadratics are also solved in closed form; the two answers must agree to
/// 1e-9 and the closed-form point is returned. Nonconvex problems run from
/// [`MULTI_START`] deterministic starts and keep the lowest objective.
pub fn reference_solve<S: Scalar>(prob: &FiniteSumProblem<S>, tol: S, max_iter: usize) -> Result<ReferenceSolution<S>> {
    let p = prob.dim();
    let fail = |gn: S, it| Error::SolveFailed { grad_norm: gn.to_f64_lossy(), iterations: it, tol: tol.to_f64_lossy() };
    if !prob.is_strongly_convex() {
        let mut best: Option<(Vec<S>, S, S, usize)> = None;
        let mut total = 0;
        for k in 0..MULTI_START {
            let x0 = if k == 0 {
                vec![S::zero(); p]
            } else {
                let mut rng = rng_for(0, Domain::Check, &[k as u64]);
                (0..p).map(|_| S::lit(StandardNormal.sample(&mut rng))).collect()
            };
            let (x, gn, it) = gradient_descent(prob, x0, tol, max_iter);
            total += it;
            if gn > tol {
                continue;
            }
            let f = prob.objective(&x);
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((x, f, gn, it));
            }
        }
        let (x_star, f_star, grad_norm, _) = best.ok_or_else(|| fail(S::infinity(), total))?;
        return Ok(ReferenceSolution { x_star, f_star, grad_norm, iterations: total, tol, approximate: true, closed_form_gap: None });
    }

    let (x, gn, it) = gradient_descent(prob, vec![S::zero(); p], tol, max_iter);
    if gn > tol {
        return Err(fail(gn, it));
    }
    let mut sol = ReferenceSolution { f_star: prob.objective(&x), x_star: x, grad_norm: gn, iterations: it, tol, approximate: false, closed_form_gap: None };
    if prob.kind() == ProblemKind::Quadratic {
        let cf = quadratic_minimizer(prob)?;
        let gap = dist_sq(&cf, &sol.x_star).sqrt();
        if gap.to_f64_lossy() > 1e-9 {
            return Err(Error::Invalid(format!("gradient descent and closed form disagree by {:e}", gap.to_f64_lossy())));
        }
        sol.grad_norm = norm_sq(&prob.full_gradient(&cf)).sqrt();
        sol.f_star = prob.objective(&cf);
        sol.x_star = cf;
        sol.closed_form_gap = Some(gap);
    }
    Ok(sol)
}

/// `σ²_* = (1/mn) Σ_i Σ_l ‖∇f_{i,l}(x*)‖²`
pub fn sigma_star<S: Scalar>(prob: &FiniteSumProblem<S>, x_star: &[S]) -> S {
    let mut g = vec![S::zero(); x_star.len()];
    let mut total = S::zero();
    for i in 0..prob.n() {
        for l in 0..prob.m() {
            prob.component_unchecked(i, l).gradient_into(x_star, &mut g);
            total += norm_sq(&g);
        }
    }
    total / S::from_usize_lossy(prob.n() * prob.m())
}

/// `D_{s̄}(y, x)` for `s̄ = (1/n) Σ_i f_{i, idx_i}`.
pub fn averaged_bregman<S: Scalar>(prob: &FiniteSumProblem<S>, idx: &[usize], y: &[S], x: &[S]) -> S {
    let total: S = idx.iter().enumerate().map(|(i, &l)| prob.component_unchecked(i, l).bregman(y, x)).sum();
    total / S::from_usize_lossy(prob.n())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShuffleVarianceEstimate {
    pub estimate: f64,
    pub mc_stderr: f64,
    /// Inner index attaining the maximum.
    pub argmax: usize,
    /// All permutation profiles were enumerated.
    pub exact: bool,
    pub samples: usize,
}

/// Bregman gaps `D_{s̄_ℓ}(x̄_*^ℓ, x*)` for `ℓ = 0..m` under one profile.
fn profile_gaps<S: Scalar>(prob: &FiniteSumProblem<S>, x_star: &[S], profile: &[Vec<usize>], alpha: S) -> Vec<f64> {
    let pts = limit_points(prob, x_star, profile, alpha);
    (0..prob.m())
        .map(|l| {
            let idx: Vec<usize> = profile.iter().map(|p| p[l]).collect();
            averaged_bregman(prob, &idx, &pts[l], x_star).to_f64_lossy()
        })
        .collect()
}

fn all_permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                cur.push(k);
                rec(cur, used, out);
                cur.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(m), &mut vec![false; m], &mut out);
    out
}

fn factorial_power(m: usize, n: usize) -> Option<usize> {
    let f = (1..=m).try_fold(1usize, |a, k| a.checked_mul(k))?;
    (0..n).try_fold(1usize, |a, _| a.checked_mul(f))
}

/// Shuffling variance: the max over `ℓ < m` of `E D_{s̄_ℓ}(x̄_*^ℓ, x*)`,
/// averaged over independent per-agent permutations.
///
/// When the number of permutation profiles `(m!)^n` is at most `n_mc` the
/// expectation is computed exactly by enumeration; otherwise `n_mc` profiles
/// are drawn and the standard error of the maximizing index is reported.
pub fn sigma_shuffle_estimate<S: Scalar>(prob: &FiniteSumProblem<S>, x_star: &[S], alpha: S, n_mc: usize, seed: u64) -> ShuffleVarianceEstimate {
    let exact = factorial_power(prob.m(), prob.n()).is_some_and(|c| c <= n_mc);
    shuffle_variance(prob, x_star, alpha, n_mc, seed, exact)
}

/// Like [`sigma_shuffle_estimate`] but always samples.
pub fn sigma_shuffle_monte_carlo<S: Scalar>(prob: &FiniteSumProblem<S>, x_star: &[S], alpha: S, n_mc: usize, seed: u64) -> ShuffleVarianceEstimate {
    shuffle_variance(prob, x_star, alpha, n_mc, seed, false)
}

fn shuffle_variance<S: Scalar>(prob: &FiniteSumProblem<S>, x_star: &[S], alpha: S, n_mc: usize, seed: u64, exact: bool) -> ShuffleVarianceEstimate {
    let (n, m) = (prob.n(), prob.m());
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    let mut count = 0usize;
    let mut add = |gaps: Vec<f64>| {
        for (l, g) in gaps.into_iter().enumerate() {
            sum[l] += g;
            sum_sq[l] += g * g;
        }
        count += 1;
    };
    if exact {
        let perms = all_permutations(m);
        let total = factorial_power(m, n).expect("checked above");
        for code in 0..total {
            let mut c = code;
            let profile: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    let p = perms[c % perms.len()].clone();
                    c /= perms.len();
                    p
                })
                .collect();
            add(profile_gaps(prob, x_star, &profile, alpha));
        }
    } else {
        let stream = crate::optim::PermutationStream::new(crate::seed::derive_seed(seed, Domain::MonteCarlo, &[]), m);
        for r in 0..n_mc {
            add(profile_gaps(prob, x_star, &stream.profile(n, r), alpha));
        }
    }
    let c = count.max(1) as f64;
    let means: Vec<f64> = sum.iter().map(|s| s / c).collect();
    let argmax = (0..m).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap_or(0);
    let mc_stderr = if exact || count < 2 {
        0.0
    } else {
        let var = (sum_sq[argmax] - c * means[argmax] * means[argmax]).max(0.0) / (c - 1.0);
        (var / c).sqrt()
    };
    ShuffleVarianceEstimate { estimate: means[argmax], mc_stderr, argmax, exact, samples: count }
}

/// `ω = 16 α L² / (n μ (1 − ρ²))`
pub fn omega(alpha: f64, l: f64, mu: f64, n: usize, rho: f64) -> f64 {
    16.0 * alpha * l * l / (n as f64 * mu * (1.0 - rho * rho))
}

/// `H = ‖x̄ − x̄_*‖² + ω ‖x − 1 x̄ᵀ‖²`
pub fn lyapunov_h<S: Scalar>(x: &Matrix<S>, xbar_star: &[S], omega: S) -> S {
    dist_sq(&x.column_means(), xbar_star) + omega * x.deviation_from_mean_sq()
}

/// `Q = f(x̄) − f̄ + 16 α L² / (n (1 − ρ²)²) · ‖x − 1 x̄ᵀ‖²`
pub fn lyapunov_q<S: Scalar>(prob: &FiniteSumProblem<S>, x: &Matrix<S>, alpha: S, f_bar: S, rho: S) -> S {
    let gap = S::one() - rho * rho;
    let l = prob.smoothness();
    let weight = S::lit(16.0) * alpha * l * l / (S::from_usize_lossy(x.rows()) * gap * gap);
    prob.objective(&x.column_means()) - f_bar + weight * x.deviation_from_mean_sq()
}

/// Quantities recorded at an epoch boundary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSample {
    pub epoch: usize,
    /// `(1/n) Σ_i ‖x_i − x*‖²`
    pub dist_sq: f64,
    /// `‖x − 1 x̄ᵀ‖_F²`
    pub consensus_sq: f64,
    /// `‖∇f(x̄)‖²`
    pub grad_norm_sq: f64,
    /// `f(x̄) − f̄`
    pub f_gap: f64,
    pub lyapunov_h: Option<f64>,
    pub lyapunov_q: Option<f64>,
    pub sigma_shuffle: Option<f64>,
    pub sigma_star: Option<f64>,
}

impl MetricSample {
    pub fn measure<S: Scalar>(epoch: usize, prob: &FiniteSumProblem<S>, x: &Matrix<S>, x_star: &[S], f_bar: S) -> Self {
        let n = S::from_usize_lossy(x.rows());
        let dist: S = x.row_iter().map(|r| dist_sq(r, x_star)).sum::<S>() / n;
        let mean = x.column_means();
        Self {
            epoch,
            dist_sq: dist.to_f64_lossy(),
            consensus_sq: x.deviation_from_mean_sq().to_f64_lossy(),
            grad_norm_sq: norm_sq(&prob.full_gradient(&mean)).to_f64_lossy(),
            f_gap: (prob.objective(&mean) - f_bar).to_f64_lossy(),
            lyapunov_h: None,
            lyapunov_q: None,
            sigma_shuffle: None,
            sigma_star: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{heterogeneous_partition, synth_classification};
    use crate::objectives::{Component, QuadraticEnsemble};
    use approx::assert_abs_diff_eq;

    fn quad(q: f64, b: f64) -> Component<f64> {
        Component::Quadratic { q: Matrix::from_vec(1, 1, vec![q]).unwrap(), b: vec![b] }
    }

    #[test]
    fn identity_quadratic_solution_is_b() {
        let q = Matrix::identity(3);
        let b = vec![1.0, -2.0, 0.5];
        let prob = FiniteSumProblem::new(1, 1, ProblemKind::Quadratic, vec![Component::Quadratic { q, b: b.clone() }]).unwrap();
        let sol = reference_solve(&prob, 1e-12, 1000).unwrap();
        assert_eq!(sol.x_star, b);
        assert!(!sol.approximate);
    }

    #[test]
    fn two_quadratic_weighted_average() {
        // (2 + 6) x = 2·1 + 6·3 → x = 20/8
        let prob = FiniteSumProblem::new(2, 1, ProblemKind::Quadratic, vec![quad(2.0, 2.0), quad(6.0, 18.0)]).unwrap();
        let sol = reference_solve(&prob, 1e-12, 10_000).unwrap();
        assert_abs_diff_eq!(sol.x_star[0], 2.5, epsilon = 1e-14);
        assert!(sol.grad_norm <= 1e-11);
    }

    #[test]
    fn logistic_tolerance_self_consistency() {
        let ds = synth_classification::<f64>(160, 4, 1.0, 5).unwrap();
        let part = heterogeneous_partition(&ds, 4, 4).unwrap();
        let prob = FiniteSumProblem::logistic_l2(&ds, &part, 0.2).unwrap();
        let a = reference_solve(&prob, 1e-10, 200_000).unwrap();
        let b = reference_solve(&prob, 1e-11, 200_000).unwrap();
        assert!(dist_sq(&a.x_star, &b.x_star).sqrt() < 1e-8);
        assert!(b.grad_norm <= 1e-11);
    }

    #[test]
    fn nonconvex_multistart_flagged() {
        let ds = synth_classification::<f64>(64, 3, 1.0, 1).unwrap();
        let part = heterogeneous_partition(&ds, 2, 4).unwrap();
        let prob = FiniteSumProblem::logistic_sigmoidal(&ds, &part, 0.2).unwrap();
        let sol = reference_solve(&prob, 1e-8, 100_000).unwrap();
        assert!(sol.approximate);
        assert!(sol.grad_norm <= 1e-8);
    }

    #[test]
    fn solve_failure_reported() {
        let prob = FiniteSumProblem::new(2, 1, ProblemKind::Quadratic, vec![quad(1.0, 1e6), quad(1e3, 0.0)]).unwrap();
        assert!(matches!(reference_solve(&prob, 1e-14, 3), Err(Error::SolveFailed { .. })));
    }

    #[test]
    fn sigma_star_values() {
        let single = FiniteSumProblem::new(1, 1, ProblemKind::Quadratic, vec![quad(2.0, 3.0)]).unwrap();
        let xs = reference_solve(&single, 1e-12, 1000).unwrap().x_star;
        assert_abs_diff_eq!(sigma_star(&single, &xs), 0.0, epsilon = 1e-24);
        // f_0 = ½x² − x, f_1 = ½x² + x: x* = 0, gradients ∓1 → σ² = 1
        let two = FiniteSumProblem::new(1, 2, ProblemKind::Quadratic, vec![quad(1.0, 1.0), quad(1.0, -1.0)]).unwrap();
        assert_abs_diff_eq!(sigma_star(&two, &[0.0]), 1.0);
        let same = FiniteSumProblem::new(2, 2, ProblemKind::Quadratic, vec![quad(1.0, 1.0); 4]).unwrap();
        assert_abs_diff_eq!(sigma_star(&same, &[1.0]), 0.0);
    }

    #[test]
    fn bregman_matches_generic_formula() {
        let prob = QuadraticEnsemble { n: 2, m: 2, p: 3, mu: 1.0, l: 5.0, heterogeneity: 1.0, spread: 1.0, seed: 4 }
            .build::<f64>()
            .unwrap();
        let c = prob.component(1, 0).unwrap();
        let (y, x) = ([0.3, -1.0, 2.0], [1.0, 0.5, -0.2]);
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let generic = c.value(&y) - c.value(&x) - crate::scalar::dot(&c.gradient(&x), &d);
        assert_abs_diff_eq!(c.bregman(&y, &x), generic, epsilon = 1e-12);
        // μ/2 ‖y−x‖² ≤ D ≤ L/2 ‖y−x‖²
        let nd = norm_sq(&d);
        assert!(c.bregman(&y, &x) >= 0.5 * nd - 1e-12 && c.bregman(&y, &x) <= 2.5 * nd + 1e-12);
    }

    #[test]
    fn shuffle_variance_trivial_cases() {
        let prob = QuadraticEnsemble { n: 2, m: 3, p: 2, mu: 1.0, l: 3.0, heterogeneity: 1.0, spread: 1.0, seed: 1 }
            .build::<f64>()
            .unwrap();
        let xs = quadratic_minimizer(&prob).unwrap();
        assert_eq!(sigma_shuffle_estimate(&prob, &xs, 0.0, 100, 1).estimate, 0.0);
        let m1 = QuadraticEnsemble { n: 3, m: 1, p: 2, mu: 1.0, l: 3.0, heterogeneity: 1.0, spread: 1.0, seed: 1 }
            .build::<f64>()
            .unwrap();
        let xs1 = quadratic_minimizer(&m1).unwrap();
        assert_eq!(sigma_shuffle_estimate(&m1, &xs1, 0.1, 100, 1).estimate, 0.0);
    }

    #[test]
    fn shuffle_variance_hand_enumeration() {
        // n=1, m=2: f_0 = ½x² − x, f_1 = ½x² + x, x* = 0.
        // perm [0,1]: x̄^1 = α, s̄_1 = f_1 → D = ½α²; perm [1,0]: x̄^1 = −α, same.
        // ℓ = 0 gives 0, so σ² = ½α².
        let prob = FiniteSumProblem::new(1, 2, ProblemKind::Quadratic, vec![quad(1.0, 1.0), quad(1.0, -1.0)]).unwrap();
        let est = sigma_shuffle_estimate(&prob, &[0.0], 0.1, 10, 0);
        assert!(est.exact);
        assert_eq!(est.samples, 2);
        assert_abs_diff_eq!(est.estimate, 0.005, epsilon = 1e-15);
        assert_eq!(est.mc_stderr, 0.0);
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let prob = QuadraticEnsemble { n: 2, m: 3, p: 2, mu: 1.0, l: 4.0, heterogeneity: 0.5, spread: 1.0, seed: 8 }
            .build::<f64>()
            .unwrap();
        let xs = quadratic_minimizer(&prob).unwrap();
        let exact = sigma_shuffle_estimate(&prob, &xs, 0.05, 36, 0);
        assert!(exact.exact);
        let mc = sigma_shuffle_monte_carlo(&prob, &xs, 0.05, 4000, 7);
        assert!(!mc.exact);
        assert!((mc.estimate - exact.estimate).abs() <= 3.0 * mc.mc_stderr + 1e-15, "{mc:?} vs {exact:?}");
    }

    #[test]
    fn lyapunov_values() {
        let x = Matrix::from_vec(2, 1, vec![1.0, 3.0]).unwrap();
        // x̄ = 2, consensus = 2
        assert_abs_diff_eq!(lyapunov_h(&x, &[0.5], 0.25), 2.25 + 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(lyapunov_h(&x, &[0.5], 0.0), 2.25, epsilon = 1e-14);
        let flat = Matrix::from_vec(2, 1, vec![2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(lyapunov_h(&flat, &[0.5], 7.0), 2.25, epsilon = 1e-14);

        let prob = FiniteSumProblem::new(2, 1, ProblemKind::Quadratic, vec![quad(1.0, 1.0), quad(1.0, 1.0)]).unwrap();
        // f(x) = ½x² − x, minimum −½ at 1
        let at_min = Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(lyapunov_q(&prob, &at_min, 0.1, -0.5, 0.5), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lyapunov_q(&prob, &x, 0.0, -0.5, 0.5), 0.5, epsilon = 1e-15);
        // weight 16·0.1·1/(2·0.75²) = 1.6/1.125
        assert_abs_diff_eq!(lyapunov_q(&prob, &x, 0.1, -0.5, 0.5), 0.5 + 2.0 * 1.6 / 1.125, epsilon = 1e-14);
        assert_abs_diff_eq!(omega(0.1, 2.0, 1.0, 4, 0.5), 16.0 * 0.1 * 4.0 / (4.0 * 0.75), epsilon = 1e-14);
    }

    #[test]
    fn metric_decomposition() {
        let prob = QuadraticEnsemble { n: 4, m: 2, p: 3, mu: 1.0, l: 2.0, heterogeneity: 1.0, spread: 1.0, seed: 2 }
            .build::<f64>()
            .unwrap();
        let xs = quadratic_minimizer(&prob).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.4);
        let s = MetricSample::measure(0, &prob, &x, &xs, 0.0);
        let mean = x.column_means();
        let rhs = dist_sq(&mean, &xs) + s.consensus_sq / 4.0;
        assert!((s.dist_sq - rhs).abs() <= 1e-9 * s.dist_sq);
    }
}
