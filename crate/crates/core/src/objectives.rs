//! Finite-sum objectives `f(x) = (1/n) Σ_i f_i(x)`, `f_i = (1/m) Σ_l f_{i,l}`,
//! with analytic per-component gradients and problem constants.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Partition};
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, symmetric_eigenvalues, Matrix};
use crate::scalar::{axpy, dot, norm_sq, Scalar};
use crate::seed::{rng_for, Domain};

/// One summand `f_{i,l}`.
#[derive(Clone, Debug)]
pub enum Component<S> {
    /// `½ xᵀQx − bᵀx`
    Quadratic { q: Matrix<S>, b: Vec<S> },
    /// Mini-batch logistic loss plus `(rho/2)‖x‖²`.
    LogisticL2 { features: Matrix<S>, labels: Vec<S>, rho: S },
    /// Mini-batch logistic loss plus `(eta/2) Σ_q x_q²/(1 + x_q²)`.
    LogisticSigmoidal { features: Matrix<S>, labels: Vec<S>, eta: S },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    LogisticL2,
    LogisticSigmoidal,
}

/// `log(1 + e^z)` without overflow.
fn softplus<S: Scalar>(z: S) -> S {
    z.max(S::zero()) + (-z.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{-z})` without overflow.
fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Largest |h''| of `h(x) = x²/(1 + x²)`, found by grid maximization of the
/// closed-form second derivative `(2 − 6x²)/(1 + x²)³` over `[-10, 10]`.
pub fn regularizer_curvature_bound() -> f64 {
    static BOUND: OnceLock<f64> = OnceLock::new();
    *BOUND.get_or_init(|| {
        let steps = 200_000;
        (0..=steps)
            .map(|k| {
                let x = -10.0 + 20.0 * k as f64 / steps as f64;
                let d = 1.0 + x * x;
                ((2.0 - 6.0 * x * x) / (d * d * d)).abs()
            })
            .fold(0.0, f64::max)
    })
}

fn logistic_value<S: Scalar>(features: &Matrix<S>, labels: &[S], x: &[S]) -> S {
    let total: S = features.row_iter().zip(labels).map(|(u, &v)| softplus(-v * dot(u, x))).sum();
    total / S::from_usize_lossy(labels.len())
}

fn logistic_gradient_into<S: Scalar>(features: &Matrix<S>, labels: &[S], x: &[S], out: &mut [S]) {
    let inv = S::one() / S::from_usize_lossy(labels.len());
    for (u, &v) in features.row_iter().zip(labels) {
        let coef = -sigmoid(-v * dot(u, x)) * v * inv;
        axpy(coef, u, out);
    }
}

fn max_row_norm_sq<S: Scalar>(features: &Matrix<S>) -> S {
    features.row_iter().map(norm_sq).fold(S::zero(), S::max)
}

impl<S: Scalar> Component<S> {
    pub fn dim(&self) -> usize {
        match self {
            Component::Quadratic { b, .. } => b.len(),
            Component::LogisticL2 { features, .. } | Component::LogisticSigmoidal { features, .. } => features.cols(),
        }
    }

    pub fn value(&self, x: &[S]) -> S {
        let half = S::lit(0.5);
        match self {
            Component::Quadratic { q, b } => half * dot(&q.matvec(x), x) - dot(b, x),
            Component::LogisticL2 { features, labels, rho } => logistic_value(features, labels, x) + half * *rho * norm_sq(x),
            Component::LogisticSigmoidal { features, labels, eta } => {
                let reg: S = x.iter().map(|&t| t * t / (S::one() + t * t)).sum();
                logistic_value(features, labels, x) + half * *eta * reg
            }
        }
    }

    /// Writes `∇f_{i,l}(x)` into `out`.
    pub fn gradient_into(&self, x: &[S], out: &mut [S]) {
        match self {
            Component::Quadratic { q, b } => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = dot(q.row(k), x) - b[k];
                }
            }
            Component::LogisticL2 { features, labels, rho } => {
                for (o, &t) in out.iter_mut().zip(x) {
                    *o = *rho * t;
                }
                logistic_gradient_into(features, labels, x, out);
            }
            Component::LogisticSigmoidal { features, labels, eta } => {
                for (o, &t) in out.iter_mut().zip(x) {
                    let d = S::one() + t * t;
                    *o = *eta * t / (d * d);
                }
                logistic_gradient_into(features, labels, x, out);
            }
        }
    }

    /// Bregman gap `D(y, x) = f(y) − f(x) − ⟨∇f(x), y − x⟩`. Quadratics use
    /// `½ (y−x)ᵀQ(y−x)`, which avoids cancellation when `y ≈ x`.
    pub fn bregman(&self, y: &[S], x: &[S]) -> S {
        let d: Vec<S> = y.iter().zip(x).map(|(&a, &b)| a - b).collect();
        match self {
            Component::Quadratic { q, .. } => S::lit(0.5) * dot(&q.matvec(&d), &d),
            _ => self.value(y) - self.value(x) - dot(&self.gradient(x), &d),
        }
    }

    pub fn gradient(&self, x: &[S]) -> Vec<S> {
        let mut g = vec![S::zero(); x.len()];
        self.gradient_into(x, &mut g);
        g
    }

    /// Infimum of the component: `−½ bᵀQ⁻¹b` for quadratics, `0` for the
    /// logistic variants (both terms are nonnegative).
    pub fn lower_bound(&self) -> Result<S> {
        match self {
            Component::Quadratic { q, b } => {
                if b.iter().all(|v| *v == S::zero()) {
                    // x = 0 is a minimizer of any positive semidefinite form
                    return Ok(S::zero());
                }
                let z = spd_solve(q, b)?;
                Ok(-S::lit(0.5) * dot(b, &z))
            }
            _ => Ok(S::zero()),
        }
    }

    /// `(L, mu)` for this component.
    pub fn smoothness(&self) -> Result<(S, S)> {
        let quarter = S::lit(0.25);
        match self {
            Component::Quadratic { q, .. } => {
                let eig = symmetric_eigenvalues(q)?;
                Ok((*eig.last().expect("nonempty"), eig[0]))
            }
            Component::LogisticL2 { features, rho, .. } => Ok((*rho + quarter * max_row_norm_sq(features), *rho)),
            Component::LogisticSigmoidal { features, eta, .. } => {
                let c_reg = S::lit(regularizer_curvature_bound());
                Ok((quarter * max_row_norm_sq(features) + S::lit(0.5) * *eta * c_reg, S::zero()))
            }
        }
    }
}

/// `n` agents, each holding `m` components over `R^p`.
#[derive(Clone, Debug)]
pub struct FiniteSumProblem<S> {
    n: usize,
    m: usize,
    p: usize,
    kind: ProblemKind,
    components: Vec<Component<S>>,
    mu: S,
    l: S,
    lower_bounds: Vec<S>,
}

/// Constants of the bounded-variance inequality
/// `(1/mn) ΣΣ ‖∇f_{i,l}(x) − ∇f(x)‖² ≤ 2A (f(x) − f̄) + B²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProblemConstants<S> {
    pub mu: S,
    pub l: S,
    pub a: S,
    pub b_sq: S,
    pub f_bar: S,
}

impl<S: Scalar> FiniteSumProblem<S> {
    /// `components[i * m + l]` is `f_{i,l}`.
    pub fn new(n: usize, m: usize, kind: ProblemKind, components: Vec<Component<S>>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Invalid("agents and components per agent must be positive".into()));
        }
        if components.len() != n * m {
            return Err(Error::Dimension(format!("expected {} components, got {}", n * m, components.len())));
        }
        let p = components[0].dim();
        if let Some(k) = components.iter().position(|c| c.dim() != p) {
            return Err(Error::Dimension(format!("component {k} has dimension {}, expected {p}", components[k].dim())));
        }
        let mut mu = S::infinity();
        let mut l = S::zero();
        let mut lower_bounds = Vec::with_capacity(components.len());
        for c in &components {
            let (cl, cmu) = c.smoothness()?;
            l = l.max(cl);
            mu = mu.min(cmu);
            lower_bounds.push(c.lower_bound()?);
        }
        Ok(Self { n, m, p, kind, components, mu: mu.max(S::zero()), l, lower_bounds })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn mu(&self) -> S {
        self.mu
    }

    pub fn smoothness(&self) -> S {
        self.l
    }

    pub fn is_strongly_convex(&self) -> bool {
        self.mu > S::zero()
    }

    pub fn lower_bounds(&self) -> &[S] {
        &self.lower_bounds
    }

    pub fn component(&self, i: usize, l: usize) -> Result<&Component<S>> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { what: "agent", index: i, limit: self.n });
        }
        if l >= self.m {
            return Err(Error::IndexOutOfRange { what: "component", index: l, limit: self.m });
        }
        Ok(&self.components[i * self.m + l])
    }

    pub(crate) fn component_unchecked(&self, i: usize, l: usize) -> &Component<S> {
        &self.components[i * self.m + l]
    }

    pub fn component_gradient(&self, i: usize, l: usize, x: &[S]) -> Result<Vec<S>> {
        self.check_dim(x)?;
        Ok(self.component(i, l)?.gradient(x))
    }

    pub fn component_value(&self, i: usize, l: usize, x: &[S]) -> Result<S> {
        self.check_dim(x)?;
        Ok(self.component(i, l)?.value(x))
    }

    fn check_dim(&self, x: &[S]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::Dimension(format!("point has dimension {}, problem has {}", x.len(), self.p)));
        }
        Ok(())
    }

    fn scale(&self) -> S {
        S::one() / S::from_usize_lossy(self.n * self.m)
    }

    /// `f(x)`
    pub fn objective(&self, x: &[S]) -> S {
        let total: S = self.components.iter().map(|c| c.value(x)).sum();
        total * self.scale()
    }

    /// `∇f(x) = (1/nm) Σ_{i,l} ∇f_{i,l}(x)`
    pub fn full_gradient(&self, x: &[S]) -> Vec<S> {
        let mut acc = vec![S::zero(); self.p];
        let mut g = vec![S::zero(); self.p];
        for c in &self.components {
            c.gradient_into(x, &mut g);
            for (a, &v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        let s = self.scale();
        acc.iter_mut().for_each(|a| *a *= s);
        acc
    }

    /// `(L, mu)`; mu is zero for problems only assumed smooth.
    pub fn estimate_l_mu(&self) -> (S, S) {
        (self.l, self.mu)
    }

    /// `A = 2L`, `B² = 2L (f̄ − mean lower bound)` given the optimal value `f_bar`.
    pub fn constants(&self, f_bar: S) -> ProblemConstants<S> {
        let mean_lb = self.lower_bounds.iter().copied().sum::<S>() * self.scale();
        let two_l = S::lit(2.0) * self.l;
        ProblemConstants { mu: self.mu, l: self.l, a: two_l, b_sq: (two_l * (f_bar - mean_lb)).max(S::zero()), f_bar }
    }

    /// `(1/mn) ΣΣ ‖∇f_{i,l}(x) − ∇f(x)‖²`
    pub fn gradient_dissimilarity(&self, x: &[S]) -> S {
        let full = self.full_gradient(x);
        let mut g = vec![S::zero(); self.p];
        let total: S = self
            .components
            .iter()
            .map(|c| {
                c.gradient_into(x, &mut g);
                crate::scalar::dist_sq(&g, &full)
            })
            .sum();
        total * self.scale()
    }

    /// Mini-batch logistic regression with `(rho/2)‖x‖²` per component.
    pub fn logistic_l2(ds: &LabeledDataset<S>, partition: &Partition, rho: S) -> Result<Self> {
        Self::logistic(ds, partition, ProblemKind::LogisticL2, |features, labels| Component::LogisticL2 { features, labels, rho })
    }

    /// Mini-batch logistic regression with the smooth nonconvex regularizer.
    pub fn logistic_sigmoidal(ds: &LabeledDataset<S>, partition: &Partition, eta: S) -> Result<Self> {
        Self::logistic(ds, partition, ProblemKind::LogisticSigmoidal, |features, labels| Component::LogisticSigmoidal {
            features,
            labels,
            eta,
        })
    }

    fn logistic(
        ds: &LabeledDataset<S>,
        partition: &Partition,
        kind: ProblemKind,
        make: impl Fn(Matrix<S>, Vec<S>) -> Component<S>,
    ) -> Result<Self> {
        let comps = partition
            .batches
            .iter()
            .flatten()
            .map(|batch| {
                if batch.is_empty() {
                    return Err(Error::Invalid("empty mini-batch".into()));
                }
                let (f, l) = ds.select(batch);
                Ok(make(f, l))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(partition.agents(), partition.m, kind, comps)
    }
}

/// Random heterogeneous quadratic ensemble.
///
/// Every component is `½ xᵀQx − bᵀx` with `Q = R diag(λ) Rᵀ`, `R` a random
/// rotation and spectrum spanning exactly `[mu, l]`. Its minimizer is
/// `heterogeneity · c_i + spread · g_{i,l}` with an agent-specific centre
/// `c_i` and per-component offset `g_{i,l}`, both standard normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticEnsemble {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub mu: f64,
    pub l: f64,
    pub heterogeneity: f64,
    pub spread: f64,
    pub seed: u64,
}

fn random_rotation<R: Rng>(p: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
    while basis.len() < p {
        let mut v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

impl QuadraticEnsemble {
    pub fn build<S: Scalar>(&self) -> Result<FiniteSumProblem<S>> {
        if !(self.mu > 0.0 && self.l >= self.mu) {
            return Err(Error::Invalid(format!("need 0 < mu ≤ L, got mu={} L={}", self.mu, self.l)));
        }
        if self.p == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        let mut rng = rng_for(self.seed, Domain::Problem, &[]);
        let mut comps = Vec::with_capacity(self.n * self.m);
        for _ in 0..self.n {
            let centre: Vec<f64> = (0..self.p).map(|_| self.heterogeneity * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
            for _ in 0..self.m {
                let mut spectrum: Vec<f64> = (0..self.p).map(|_| rng.random_range(self.mu..=self.l)).collect();
                spectrum[0] = self.mu;
                if self.p > 1 {
                    spectrum[self.p - 1] = self.l;
                }
                let rot = random_rotation(self.p, &mut rng);
                let q = Matrix::from_fn(self.p, self.p, |r, c| {
                    if self.mu == self.l {
                        return if r == c { S::lit(self.mu) } else { S::zero() };
                    }
                    S::lit((0..self.p).map(|k| rot[k][r] * spectrum[k] * rot[k][c]).sum::<f64>())
                });
                // enforce exact symmetry
                let q = Matrix::from_fn(self.p, self.p, |r, c| if r <= c { q[(r, c)] } else { q[(c, r)] });
                let z: Vec<S> = centre
                    .iter()
                    .map(|&c| S::lit(c + self.spread * { let z: f64 = StandardNormal.sample(&mut rng); z }))
                    .collect();
                let b = q.matvec(&z);
                comps.push(Component::Quadratic { q, b });
            }
        }
        FiniteSumProblem::new(self.n, self.m, ProblemKind::Quadratic, comps)
    }
}

/// Closed-form minimizer of a quadratic problem: `(Σ Q) x = Σ b`.
pub fn quadratic_minimizer<S: Scalar>(prob: &FiniteSumProblem<S>) -> Result<Vec<S>> {
    let p = prob.dim();
    let mut qs = Matrix::zeros(p, p);
    let mut bs = vec![S::zero(); p];
    for c in &prob.components {
        match c {
            Component::Quadratic { q, b } => {
                for (a, &v) in qs.as_mut_slice().iter_mut().zip(q.as_slice()) {
                    *a += v;
                }
                for (a, &v) in bs.iter_mut().zip(b) {
                    *a += v;
                }
            }
            _ => return Err(Error::Invalid("closed-form minimizer needs a quadratic problem".into())),
        }
    }
    spd_solve(&qs, &bs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quad(q: Vec<f64>, b: Vec<f64>) -> Component<f64> {
        let p = b.len();
        Component::Quadratic { q: Matrix::from_vec(p, p, q).unwrap(), b }
    }

    fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[k] += h;
                b[k] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_gradient_at_origin_is_minus_b() {
        let c = quad(vec![2.0, 0.5, 0.5, 1.0], vec![1.0, -3.0]);
        assert_eq!(c.gradient(&[0.0, 0.0]), vec![-1.0, 3.0]);
    }

    #[test]
    fn logistic_single_sample_at_origin() {
        // sigmoid(0) = 1/2, so the gradient is -v u / 2 + rho * 0
        let u = vec![0.4, -1.2];
        let c = Component::LogisticL2 { features: Matrix::from_rows(std::slice::from_ref(&u)).unwrap(), labels: vec![-1.0], rho: 0.2 };
        let g = c.gradient(&[0.0, 0.0]);
        assert_abs_diff_eq!(g[0], 0.5 * 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.5 * -1.2, epsilon = 1e-15);
    }

    #[test]
    fn sigmoidal_regularizer_vanishes_at_origin() {
        let f = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]]).unwrap();
        let a = Component::LogisticSigmoidal { features: f.clone(), labels: vec![1.0, -1.0], eta: 0.2 };
        let b = Component::LogisticL2 { features: f, labels: vec![1.0, -1.0], rho: 0.0 };
        assert_eq!(a.gradient(&[0.0, 0.0]), b.gradient(&[0.0, 0.0]));
    }

    #[test]
    fn smoothness_constants() {
        let c = quad(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]);
        assert_eq!(c.smoothness().unwrap(), (1.0, 1.0));
        // ‖u‖ = 2 → ‖u‖²/4 = 1, plus rho
        let l2 = Component::LogisticL2 { features: Matrix::from_rows(&[vec![0.0, 2.0]]).unwrap(), labels: vec![1.0], rho: 0.2 };
        let (l, mu) = l2.smoothness().unwrap();
        assert_abs_diff_eq!(l, 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(mu, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn regularizer_bound_matches_finite_difference_grid() {
        // independent oracle: second differences of h on a grid
        let h = |x: f64| x * x / (1.0 + x * x);
        let step = 1e-4;
        let fd_max = (-50_000..=50_000)
            .map(|k| {
                let x = k as f64 * 1e-4;
                ((h(x + step) - 2.0 * h(x) + h(x - step)) / (step * step)).abs()
            })
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(regularizer_curvature_bound(), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fd_max, regularizer_curvature_bound(), epsilon = 1e-4);
    }

    #[test]
    fn full_gradient_cancels_for_symmetric_ensemble() {
        let comps = vec![quad(vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 2.0]), quad(vec![1.0, 0.0, 0.0, 1.0], vec![-1.0, -2.0])];
        let p = FiniteSumProblem::new(2, 1, ProblemKind::Quadratic, comps).unwrap();
        assert_eq!(p.full_gradient(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn single_component_full_gradient() {
        let c = quad(vec![3.0, 1.0, 1.0, 2.0], vec![1.0, 1.0]);
        let p = FiniteSumProblem::new(1, 1, ProblemKind::Quadratic, vec![c.clone()]).unwrap();
        let x = [0.3, -0.7];
        assert_eq!(p.full_gradient(&x), c.gradient(&x));
    }

    #[test]
    fn index_errors() {
        let p = QuadraticEnsemble { n: 2, m: 3, p: 2, mu: 1.0, l: 2.0, heterogeneity: 1.0, spread: 1.0, seed: 1 }
            .build::<f64>()
            .unwrap();
        assert!(matches!(p.component_gradient(2, 0, &[0.0, 0.0]), Err(Error::IndexOutOfRange { what: "agent", .. })));
        assert!(matches!(p.component_gradient(0, 3, &[0.0, 0.0]), Err(Error::IndexOutOfRange { what: "component", .. })));
        assert!(matches!(p.component_gradient(0, 0, &[0.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn ensemble_has_exact_constants() {
        let p = QuadraticEnsemble { n: 3, m: 4, p: 5, mu: 0.5, l: 4.0, heterogeneity: 1.0, spread: 1.0, seed: 2 }
            .build::<f64>()
            .unwrap();
        assert_abs_diff_eq!(p.mu(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.smoothness(), 4.0, epsilon = 1e-12);
        let iso = QuadraticEnsemble { n: 2, m: 2, p: 3, mu: 1.0, l: 1.0, heterogeneity: 1.0, spread: 1.0, seed: 2 }
            .build::<f64>()
            .unwrap();
        assert_eq!(iso.estimate_l_mu(), (1.0, 1.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::data::{heterogeneous_partition, synth_classification};
        let ds = synth_classification::<f64>(60, 3, 1.0, 3).unwrap();
        let part = heterogeneous_partition(&ds, 2, 3).unwrap();
        let probs = vec![
            QuadraticEnsemble { n: 2, m: 3, p: 3, mu: 0.5, l: 3.0, heterogeneity: 1.0, spread: 1.0, seed: 5 }.build::<f64>().unwrap(),
            FiniteSumProblem::logistic_l2(&ds, &part, 0.2).unwrap(),
            FiniteSumProblem::logistic_sigmoidal(&ds, &part, 0.2).unwrap(),
        ];
        let mut rng = rng_for(1, Domain::Check, &[]);
        for p in &probs {
            for _ in 0..30 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let fd = central_diff(|y| p.objective(y), &x, 1e-6);
                let g = p.full_gradient(&x);
                let scale = crate::scalar::norm_sq(&g).sqrt().max(1.0);
                for (a, b) in g.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn closed_form_minimizer_zeroes_gradient() {
        let p = QuadraticEnsemble { n: 4, m: 3, p: 4, mu: 1.0, l: 5.0, heterogeneity: 2.0, spread: 1.0, seed: 8 }
            .build::<f64>()
            .unwrap();
        let x = quadratic_minimizer(&p).unwrap();
        assert!(crate::scalar::norm_sq(&p.full_gradient(&x)).sqrt() < 1e-12);
    }

    #[test]
    fn lower_bounds_are_minima() {
        let c = quad(vec![2.0, 0.0, 0.0, 4.0], vec![2.0, 4.0]);
        // minimizer (1, 1): value ½(2 + 4) − 6 = −3
        assert_abs_diff_eq!(c.lower_bound().unwrap(), -3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.value(&[1.0, 1.0]), -3.0, epsilon = 1e-14);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }
}
