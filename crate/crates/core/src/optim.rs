//! D-RR and its baselines as synchronous rounds over a stacked state.
//!
//! Every distributed method uses the adapt-then-combine pattern
//! `x⁺ = W (x − α ∇F_idx(x))`; they differ in how the component index of each
//! agent is chosen and in how often `W` is applied. All methods spend exactly
//! `n·m` component gradients per epoch.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mixing::MixingMatrix;
use crate::objectives::FiniteSumProblem;
use crate::scalar::Scalar;
use crate::seed::{rng_for, Domain};

/// Any entry above this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Stacked iterates, one row per agent, at inner step `inner` of `epoch`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStateBlock<S> {
    pub x: Matrix<S>,
    pub epoch: usize,
    pub inner: usize,
    /// Component gradients evaluated so far.
    pub grad_evals: u64,
}

impl<S: Scalar> AgentStateBlock<S> {
    pub fn new(x: Matrix<S>) -> Self {
        Self { x, epoch: 0, inner: 0, grad_evals: 0 }
    }

    /// Every one of `n` agents starts at `x0`.
    pub fn replicated(n: usize, x0: &[S]) -> Self {
        Self::new(Matrix::from_fn(n, x0.len(), |_, j| x0[j]))
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn mean(&self) -> Vec<S> {
        self.x.column_means()
    }

    /// `‖x − 1 x̄ᵀ‖_F²`
    pub fn consensus_sq(&self) -> S {
        self.x.deviation_from_mean_sq()
    }

    fn guard(&self, method: Method) -> Result<()> {
        let mut worst = S::zero();
        for &v in self.x.as_slice() {
            if !v.is_finite() {
                return Err(Error::divergence(method.name(), self.epoch, self.inner, "non-finite iterate (stepsize too large?)"));
            }
            worst = worst.max(v.abs());
        }
        if worst.to_f64_lossy() > DIVERGENCE_LIMIT {
            return Err(Error::divergence(
                method.name(),
                self.epoch,
                self.inner,
                format!("iterate magnitude {:e} exceeds {DIVERGENCE_LIMIT:e}", worst.to_f64_lossy()),
            ));
        }
        Ok(())
    }
}

/// Per-(agent, epoch) uniform permutations of `0..m`.
#[derive(Clone, Copy, Debug)]
pub struct PermutationStream {
    seed: u64,
    m: usize,
}

impl PermutationStream {
    pub fn new(seed: u64, m: usize) -> Self {
        Self { seed, m }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn permutation(&self, agent: usize, epoch: usize) -> Vec<usize> {
        let mut rng = rng_for(self.seed, Domain::Permutation, &[agent as u64, epoch as u64]);
        let mut perm: Vec<usize> = (0..self.m).collect();
        perm.shuffle(&mut rng);
        perm
    }

    /// One permutation per agent for `epoch`.
    pub fn profile(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        (0..n).map(|i| self.permutation(i, epoch)).collect()
    }
}

/// Per-(agent, epoch) with-replacement index draws.
#[derive(Clone, Copy, Debug)]
pub struct SamplingStream {
    seed: u64,
    m: usize,
}

impl SamplingStream {
    pub fn new(seed: u64, m: usize) -> Self {
        Self { seed, m }
    }

    /// `m` uniform indices in `0..m` for one agent and epoch.
    pub fn indices(&self, agent: usize, epoch: usize) -> Vec<usize> {
        let mut rng = rng_for(self.seed, Domain::Sampling, &[agent as u64, epoch as u64]);
        (0..self.m).map(|_| rng.random_range(0..self.m)).collect()
    }

    pub fn profile(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        (0..n).map(|i| self.indices(i, epoch)).collect()
    }
}

/// Stepsize as a function of the epoch counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepsizeSchedule {
    Constant { alpha: f64 },
    /// `θ / (m μ (t + K))`
    Decaying { theta: f64, k: f64, m: usize, mu: f64 },
    /// `1 / (a t + b)`
    Hyperbolic { a: f64, b: f64 },
    /// `η / (m T^{1/3})`, constant over a horizon of `T` epochs.
    CubeRoot { eta: f64, m: usize, horizon: usize },
}

impl StepsizeSchedule {
    pub fn alpha(&self, t: usize) -> f64 {
        let t = t as f64;
        match *self {
            Self::Constant { alpha } => alpha,
            Self::Decaying { theta, k, m, mu } => theta / (m as f64 * mu * (t + k)),
            Self::Hyperbolic { a, b } => 1.0 / (a * t + b),
            Self::CubeRoot { eta, m, horizon } => eta / (m as f64 * (horizon as f64).cbrt()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::Decaying { .. } => "decaying",
            Self::Hyperbolic { .. } => "hyperbolic",
            Self::CubeRoot { .. } => "cube_root",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { alpha } => alpha >= 0.0 && alpha.is_finite(),
            Self::Decaying { theta, k, m, mu } => theta > 0.0 && k > 0.0 && m > 0 && mu > 0.0,
            Self::Hyperbolic { a, b } => a >= 0.0 && b > 0.0,
            Self::CubeRoot { eta, m, horizon } => eta > 0.0 && m > 0 && horizon > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("schedule {self:?} has a non-positive parameter")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundTerm {
    pub name: &'static str,
    pub value: f64,
}

/// Outcome of [`check_admissible`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// Name of the tightest constraint.
    pub binding: String,
    /// Numeric bound of the binding constraint: a stepsize, or an offset `K`
    /// for the decaying schedule.
    pub threshold: f64,
    /// The value compared against `threshold`.
    pub value: f64,
    pub terms: Vec<BoundTerm>,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
}

/// The three stepsize ceilings of the strongly convex analysis.
/// The first is `+∞` when `rho = 0`.
pub fn strongly_convex_stepsize_terms(rho: f64, l: f64, mu: f64) -> Vec<BoundTerm> {
    let r2 = rho * rho;
    let gap = 1.0 - r2;
    let consensus = if rho == 0.0 {
        f64::INFINITY
    } else {
        ((2.0 - r2) / (24.0 * r2 * (5.0 - r2))).sqrt() * gap / l
    };
    vec![
        BoundTerm { name: "consensus", value: consensus },
        BoundTerm { name: "strong_convexity", value: gap / (2.0 * mu) },
        BoundTerm { name: "coupling", value: gap * mu / (8.0 * 30f64.sqrt() * l * l) },
    ]
}

/// Stepsize ceilings of the smooth nonconvex analysis; the horizon term is
/// present only when `horizon` is given.
pub fn nonconvex_stepsize_terms(rho: f64, l: f64, a: f64, m: usize, horizon: Option<usize>) -> Vec<BoundTerm> {
    let gap = 1.0 - rho * rho;
    let mf = m as f64;
    let mut terms = vec![
        BoundTerm { name: "inner_drift", value: gap / (4.0 * 3f64.sqrt() * l * (mf + 2.0)) },
        BoundTerm { name: "consensus", value: gap.powf(1.5) / (16.0 * 6f64.sqrt() * l) },
    ];
    if let Some(t) = horizon {
        let c = 12.0 * mf * mf * l * l * a * (4.0 + mf) / gap + 384.0 * l * l * a * mf / gap.powi(3);
        terms.push(BoundTerm { name: "horizon", value: c.powf(-1.0 / 3.0) / (t as f64).cbrt() });
    }
    terms
}

/// Lower bounds on the offset `K` of the decaying schedule.
pub fn decaying_offset_terms(theta: f64, rho: f64, l: f64, mu: f64, m: usize) -> Vec<BoundTerm> {
    let r2 = rho * rho;
    let gap = 1.0 - r2;
    let mf = m as f64;
    vec![
        BoundTerm { name: "half_theta", value: theta / 2.0 },
        BoundTerm {
            name: "consensus",
            value: (24.0 * r2 * (5.0 - r2) * l * l * theta * theta / ((2.0 - r2) * gap * gap * mf * mf * mu * mu)).sqrt(),
        },
        BoundTerm { name: "strong_convexity", value: 2.0 * theta / (mf * gap) },
        BoundTerm { name: "coupling", value: 8.0 * 30f64.sqrt() * l * l * theta / (gap * mf * mu * mu) },
    ]
}

/// Smallest admissible offset `K` for the decaying schedule.
pub fn min_decaying_offset(theta: f64, rho: f64, l: f64, mu: f64, m: usize) -> f64 {
    decaying_offset_terms(theta, rho, l, mu, m).iter().map(|t| t.value).fold(0.0, f64::max)
}

fn tightest(terms: &[BoundTerm]) -> &BoundTerm {
    terms.iter().min_by(|a, b| a.value.total_cmp(&b.value)).expect("nonempty bound list")
}

/// Checks a schedule against the stepsize conditions of the analysis.
///
/// With `mu > 0` the strongly convex ceilings apply (and the offset condition
/// for the decaying schedule); with `mu == 0` the nonconvex ceilings with
/// `A = 2L` apply.
pub fn check_admissible(schedule: &StepsizeSchedule, rho: f64, l: f64, mu: f64, m: usize) -> AdmissibilityReport {
    let mut notes = Vec::new();
    let mut warnings = Vec::new();
    if rho == 0.0 {
        notes.push("rho_w = 0: the consensus ceiling is treated as +inf".to_string());
    }
    if mu <= 0.0 {
        let horizon = match *schedule {
            StepsizeSchedule::CubeRoot { horizon, .. } => Some(horizon),
            _ => None,
        };
        let terms = nonconvex_stepsize_terms(rho, l, 2.0 * l, m, horizon);
        let bind = tightest(&terms).clone();
        let value = schedule.alpha(0);
        if !matches!(schedule, StepsizeSchedule::CubeRoot { .. } | StepsizeSchedule::Constant { .. }) {
            notes.push("nonconvex ceilings are stated for a constant stepsize; checked at t = 0".into());
        }
        return AdmissibilityReport {
            admissible: value <= bind.value,
            binding: bind.name.to_string(),
            threshold: bind.value,
            value,
            terms,
            notes,
            warnings,
        };
    }

    let terms = strongly_convex_stepsize_terms(rho, l, mu);
    let bind = tightest(&terms).clone();
    match *schedule {
        StepsizeSchedule::Decaying { theta, k, m: sched_m, mu: sched_mu } => {
            if theta <= 12.0 {
                warnings.push(format!("theta > 12 required for the O(1/t^2) guarantee (got {theta})"));
            }
            if sched_m != m || (sched_mu - mu).abs() > 1e-12 * mu.max(1.0) {
                notes.push(format!("schedule uses m={sched_m}, mu={sched_mu}; problem has m={m}, mu={mu}"));
            }
            let k_terms = decaying_offset_terms(theta, rho, l, mu, m);
            let k_bind = k_terms.iter().max_by(|a, b| a.value.total_cmp(&b.value)).unwrap().clone();
            let alpha0 = schedule.alpha(0);
            let mut all = k_terms;
            all.extend(terms);
            AdmissibilityReport {
                admissible: theta > 12.0 && k >= k_bind.value && alpha0 <= bind.value,
                binding: format!("offset_{}", k_bind.name),
                threshold: k_bind.value,
                value: k,
                terms: all,
                notes,
                warnings,
            }
        }
        _ => {
            // every other schedule is nonincreasing, so epoch 0 is the worst case
            let value = schedule.alpha(0);
            AdmissibilityReport {
                admissible: value <= bind.value,
                binding: bind.name.to_string(),
                threshold: bind.value,
                value,
                terms,
                notes,
                warnings,
            }
        }
    }
}

/// Optimizer family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Distributed random reshuffling: independent permutations, mix every step.
    Drr,
    /// Centralized RR with one shared permutation.
    Crr,
    /// Distributed SGD, with-replacement sampling, mix every step.
    Dsgd,
    /// Centralized SGD.
    Sgd,
    /// Local RR epochs with one mixing round per epoch.
    Egrr,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Drr, Method::Crr, Method::Dsgd, Method::Sgd, Method::Egrr];

    pub fn name(self) -> &'static str {
        match self {
            Method::Drr => "drr",
            Method::Crr => "crr",
            Method::Dsgd => "dsgd",
            Method::Sgd => "sgd",
            Method::Egrr => "egrr",
        }
    }

    /// Centralized methods keep a single row.
    pub fn is_centralized(self) -> bool {
        matches!(self, Method::Crr | Method::Sgd)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `out_i = x_i − α ∇f_{i, idx_i}(x_i)` for every agent.
fn local_steps<S: Scalar>(x: &Matrix<S>, prob: &FiniteSumProblem<S>, idx: &[usize], alpha: S, parallel: bool, out: &mut Matrix<S>) {
    let p = x.cols();
    let step = |i: usize, row: &mut [S]| {
        let xi = x.row(i);
        prob.component_unchecked(i, idx[i]).gradient_into(xi, row);
        for (o, &v) in row.iter_mut().zip(xi) {
            *o = v - alpha * *o;
        }
    };
    if parallel {
        out.as_mut_slice().par_chunks_mut(p).enumerate().for_each(|(i, row)| step(i, row));
    } else {
        out.as_mut_slice().chunks_mut(p).enumerate().for_each(|(i, row)| step(i, row));
    }
}

fn check_shapes<S: Scalar>(state: &AgentStateBlock<S>, prob: &FiniteSumProblem<S>, w: Option<&MixingMatrix<S>>) -> Result<()> {
    if state.n() != prob.n() || state.dim() != prob.dim() {
        return Err(Error::Dimension(format!(
            "state is {}x{}, problem needs {}x{}",
            state.n(),
            state.dim(),
            prob.n(),
            prob.dim()
        )));
    }
    if let Some(w) = w {
        if w.n() != prob.n() {
            return Err(Error::Dimension(format!("mixing matrix is {0}x{0}, problem has {1} agents", w.n(), prob.n())));
        }
    }
    Ok(())
}

/// One D-RR inner step `x ← W (x − α ∇F_π(x))` where agent `i` uses
/// component `profile[i][inner]`.
pub fn drr_inner_step<S: Scalar>(
    state: &mut AgentStateBlock<S>,
    w: &MixingMatrix<S>,
    prob: &FiniteSumProblem<S>,
    profile: &[Vec<usize>],
    alpha: S,
    parallel: bool,
) -> Result<()> {
    mixed_step(state, w, prob, profile, alpha, parallel, Method::Drr)
}

fn mixed_step<S: Scalar>(
    state: &mut AgentStateBlock<S>,
    w: &MixingMatrix<S>,
    prob: &FiniteSumProblem<S>,
    profile: &[Vec<usize>],
    alpha: S,
    parallel: bool,
    method: Method,
) -> Result<()> {
    let l = state.inner;
    if l >= prob.m() {
        return Err(Error::Invalid(format!("inner step {l} past end of epoch (m = {})", prob.m())));
    }
    let idx: Vec<usize> = profile.iter().map(|p| p[l]).collect();
    let mut half = Matrix::zeros(state.n(), state.dim());
    local_steps(&state.x, prob, &idx, alpha, parallel, &mut half);
    w.mix_into(&half, &mut state.x);
    state.inner += 1;
    state.grad_evals += prob.n() as u64;
    state.guard(method)
}

fn finish_epoch<S>(state: &mut AgentStateBlock<S>) {
    state.epoch += 1;
    state.inner = 0;
}

fn require_epoch_start<S>(state: &AgentStateBlock<S>) -> Result<()> {
    if state.inner != 0 {
        return Err(Error::Invalid(format!("epoch must start at inner step 0, state is at {}", state.inner)));
    }
    Ok(())
}

/// Observer invoked after every inner step.
pub type InnerHook<'a, S> = &'a mut dyn FnMut(&AgentStateBlock<S>);

/// One D-RR epoch with fresh per-agent permutations.
pub fn drr_epoch<S: Scalar>(
    state: &mut AgentStateBlock<S>,
    w: &MixingMatrix<S>,
    prob: &FiniteSumProblem<S>,
    perms: &PermutationStream,
    schedule: &StepsizeSchedule,
    parallel: bool,
    mut hook: Option<InnerHook<'_, S>>,
) -> Result<()> {
    check_shapes(state, prob, Some(w))?;
    require_epoch_start(state)?;
    let alpha = S::lit(schedule.alpha(state.epoch));
    let profile = perms.profile(prob.n(), state.epoch);
    for _ in 0..prob.m() {
        mixed_step(state, w, prob, &profile, alpha, parallel, Method::Drr)?;
        if let Some(h) = hook.as_mut() {
            h(state);
        }
    }
    finish_epoch(state);
    Ok(())
}

/// One DSGD epoch: `m` mixed steps with with-replacement sampling.
pub fn dsgd_epoch<S: Scalar>(
    state: &mut AgentStateBlock<S>,
    w: &MixingMatrix<S>,
    prob: &FiniteSumProblem<S>,
    samples: &SamplingStream,
    schedule: &StepsizeSchedule,
    parallel: bool,
    mut hook: Option<InnerHook<'_, S>>,
) -> Result<()> {
    check_shapes(state, prob, Some(w))?;
    require_epoch_start(state)?;
    let alpha = S::lit(schedule.alpha(state.epoch));
    let profile = samples.profile(prob.n(), state.epoch);
    for _ in 0..prob.m() {
        mixed_step(state, w, prob, &profile, alpha, parallel, Method::Dsgd)?;
        if let Some(h) = hook.as_mut() {
            h(state);
        }
    }
    finish_epoch(state);
    Ok(())
}

/// One epoch-gossip RR epoch: `m` local RR steps, then a single `W` multiply.
pub fn egrr_epoch<S: Scalar>(
    state: &mut AgentStateBlock<S>,
    w: &MixingMatrix<S>,
    prob: &FiniteSumProblem<S>,
    perms: &PermutationStream,
    schedule: &StepsizeSchedule,
    parallel: bool,
    mut hook: Option<InnerHook<'_, S>>,
) -> Result<()> {
    check_shapes(state, prob, Some(w))?;
    require_epoch_start(state)?;
    let alpha = S::lit(schedule.alpha(state.epoch));
    let profile = perms.profile(prob.n(), state.epoch);
    let mut buf = Matrix::zeros(state.n(), state.dim());
    for l in 0..prob.m() {
        let idx: Vec<usize> = profile.iter().map(|p| p[l]).collect();
        local_steps(&state.x, prob, &idx, alpha, parallel, &mut buf);
        std::mem::swap(&mut state.x, &mut buf);
        if l + 1 == prob.m() {
            w.mix_into(&state.x, &mut buf);
            std::mem::swap(&mut state.x, &mut buf);
        }
        state.inner += 1;
        state.grad_evals += prob.n() as u64;
        state.guard(Method::Egrr)?;
        if let Some(h) = hook.as_mut() {
            h(state);
        }
    }
    finish_epoch(state);
    Ok(())
}

/// `g = (1/n) Σ_i ∇f_{i, idx_i}(x)`; the first term is copied so that
/// `n = 1` reproduces the single gradient exactly.
fn averaged_gradient<S: Scalar>(prob: &FiniteSumProblem<S>, x: &[S], idx: impl Fn(usize) -> usize) -> Vec<S> {
    let mut acc = vec![S::zero(); x.len()];
    let mut g = vec![S::zero(); x.len()];
    prob.component_unchecked(0, idx(0)).gradient_into(x, &mut acc);
    for i in 1..prob.n() {
        prob.component_unchecked(i, idx(i)).gradient_into(x, &mut g);
        for (a, &v) in acc.iter_mut().zip(&g) {
            *a += v;
        }
    }
    let n = S::from_usize_lossy(prob.n());
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn centralized_steps<S: Scalar>(
    state: &mut AgentStateBlock<S>,
    prob: &FiniteSumProblem<S>,
    alpha: S,
    idx: impl Fn(usize, usize) -> usize,
    method: Method,
    mut hook: Option<InnerHook<'_, S>>,
) -> Result<()> {
    if state.n() != 1 || state.dim() != prob.dim() {
        return Err(Error::Dimension(format!("centralized state must be 1x{}, got {}x{}", prob.dim(), state.n(), state.dim())));
    }
    require_epoch_start(state)?;
    for l in 0..prob.m() {
        let g = averaged_gradient(prob, state.x.row(0), |i| idx(i, l));
        for (v, &gj) in state.x.row_mut(0).iter_mut().zip(&g) {
            *v -= alpha * gj;
        }
        state.inner += 1;
        state.grad_evals += prob.n() as u64;
        state.guard(method)?;
        if let Some(h) = hook.as_mut() {
            h(state);
        }
    }
    finish_epoch(state);
    Ok(())
}

/// One C-RR epoch on the point `x` with shared permutation `perm`:
/// `x ← x − (α/n) Σ_i ∇f_{i, perm[l]}(x)` for `l = 0..m`.
pub fn crr_epoch<S: Scalar>(x: &mut [S], prob: &FiniteSumProblem<S>, perm: &[usize], alpha: S) -> Result<()> {
    if perm.len() != prob.m() || x.len() != prob.dim() {
        return Err(Error::Dimension(format!(
            "permutation length {} / point dimension {} do not match m={} p={}",
            perm.len(),
            x.len(),
            prob.m(),
            prob.dim()
        )));
    }
    let mut state = AgentStateBlock::new(Matrix::from_vec(1, x.len(), x.to_vec())?);
    centralized_steps(&mut state, prob, alpha, |_, l| perm[l], Method::Crr, None)?;
    x.copy_from_slice(state.x.row(0));
    Ok(())
}

/// Runs any method for one epoch on a state of the matching shape
/// (`n×p`, or `1×p` for centralized methods).
#[derive(Clone, Copy, Debug)]
pub struct Optimizer {
    pub method: Method,
    pub seed: u64,
    pub parallel: bool,
}

impl Optimizer {
    pub fn new(method: Method, seed: u64) -> Self {
        Self { method, seed, parallel: false }
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    /// Initial state: `n` rows for distributed methods, the row average for
    /// centralized ones.
    pub fn init_state<S: Scalar>(&self, x0: &Matrix<S>) -> AgentStateBlock<S> {
        if self.method.is_centralized() {
            let mean = x0.column_means();
            AgentStateBlock::new(Matrix::from_fn(1, mean.len(), |_, j| mean[j]))
        } else {
            AgentStateBlock::new(x0.clone())
        }
    }

    pub fn epoch<S: Scalar>(
        &self,
        state: &mut AgentStateBlock<S>,
        w: &MixingMatrix<S>,
        prob: &FiniteSumProblem<S>,
        schedule: &StepsizeSchedule,
        hook: Option<InnerHook<'_, S>>,
    ) -> Result<()> {
        let m = prob.m();
        let perms = PermutationStream::new(self.seed, m);
        let samples = SamplingStream::new(self.seed, m);
        match self.method {
            Method::Drr => drr_epoch(state, w, prob, &perms, schedule, self.parallel, hook),
            Method::Dsgd => dsgd_epoch(state, w, prob, &samples, schedule, self.parallel, hook),
            Method::Egrr => egrr_epoch(state, w, prob, &perms, schedule, self.parallel, hook),
            Method::Crr => {
                // the shared permutation is agent 0's stream, so n = 1 matches D-RR
                let perm = perms.permutation(0, state.epoch);
                let alpha = S::lit(schedule.alpha(state.epoch));
                centralized_steps(state, prob, alpha, |_, l| perm[l], Method::Crr, hook)
            }
            Method::Sgd => {
                let draws = samples.profile(prob.n(), state.epoch);
                let alpha = S::lit(schedule.alpha(state.epoch));
                centralized_steps(state, prob, alpha, |i, l| draws[i][l], Method::Sgd, hook)
            }
        }
    }

    /// Runs `epochs` epochs, calling `on_epoch` at every epoch boundary
    /// (including the initial state).
    pub fn run<S: Scalar>(
        &self,
        state: &mut AgentStateBlock<S>,
        w: &MixingMatrix<S>,
        prob: &FiniteSumProblem<S>,
        schedule: &StepsizeSchedule,
        epochs: usize,
        mut on_epoch: impl FnMut(&AgentStateBlock<S>),
    ) -> Result<()> {
        schedule.validate()?;
        on_epoch(state);
        for _ in 0..epochs {
            self.epoch(state, w, prob, schedule, None)?;
            on_epoch(state);
        }
        Ok(())
    }
}

/// Intra-epoch limit points
/// `x̄_*^ℓ = x* − α Σ_{k<ℓ} (1/n) Σ_i ∇f_{i, π_k^i}(x*)`, `ℓ = 0..=m`.
pub fn limit_points<S: Scalar>(prob: &FiniteSumProblem<S>, x_star: &[S], profile: &[Vec<usize>], alpha: S) -> Vec<Vec<S>> {
    let m = prob.m();
    let mut points = Vec::with_capacity(m + 1);
    let mut cur = x_star.to_vec();
    points.push(cur.clone());
    for k in 0..m {
        let g = averaged_gradient(prob, x_star, |i| profile[i][k]);
        for (c, &gj) in cur.iter_mut().zip(&g) {
            *c -= alpha * gj;
        }
        points.push(cur.clone());
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Topology};
    use crate::mixing::metropolis_weights;
    use crate::objectives::{quadratic_minimizer, Component, ProblemKind, QuadraticEnsemble};
    use approx::assert_abs_diff_eq;

    fn quad(q: f64, b: f64) -> Component<f64> {
        Component::Quadratic { q: Matrix::from_vec(1, 1, vec![q]).unwrap(), b: vec![b] }
    }

    #[test]
    fn two_agent_hand_step() {
        // f_0 = ½·2x² − 1x, f_1 = ½·4x² − 2x (m = 1); W = ½ 1 1ᵀ
        let prob = FiniteSumProblem::new(2, 1, ProblemKind::Quadratic, vec![quad(2.0, 1.0), quad(4.0, 2.0)]).unwrap();
        let w = MixingMatrix::averaging(2);
        let mut st = AgentStateBlock::new(Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap());
        drr_inner_step(&mut st, &w, &prob, &[vec![0], vec![0]], 0.1, false).unwrap();
        // halves: 1 − 0.1(2−1) = 0.9, −1 − 0.1(−4−2) = −0.4 → both 0.25
        assert_abs_diff_eq!(st.x[(0, 0)], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(st.x[(1, 0)], 0.25, epsilon = 1e-14);
        assert_eq!(st.inner, 1);
        assert_eq!(st.grad_evals, 2);
    }

    #[test]
    fn zero_gradients_are_pure_gossip() {
        let prob = FiniteSumProblem::new(4, 2, ProblemKind::Quadratic, vec![quad(0.0, 0.0); 8]).unwrap();
        let g = build_graph(&Topology::Ring, 4).unwrap();
        let w = metropolis_weights::<f64>(&g).unwrap();
        let x0 = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut st = AgentStateBlock::new(x0.clone());
        drr_inner_step(&mut st, &w, &prob, &vec![vec![0, 1]; 4], 0.5, false).unwrap();
        assert_eq!(st.x, w.mix(&x0));
    }

    #[test]
    fn crr_two_step_affine_map() {
        // n=1, m=2: f_0 = ½·1x² − 1x, f_1 = ½·3x² − 0x; perm from stream
        let prob = FiniteSumProblem::new(1, 2, ProblemKind::Quadratic, vec![quad(1.0, 1.0), quad(3.0, 0.0)]).unwrap();
        let a = 0.1;
        for perm in [[0usize, 1], [1, 0]] {
            let mut x = [2.0];
            crr_epoch(&mut x, &prob, &perm, a).unwrap();
            let step = |x: f64, c: usize| if c == 0 { x - a * (x - 1.0) } else { x - a * 3.0 * x };
            let expect = step(step(2.0, perm[0]), perm[1]);
            assert_abs_diff_eq!(x[0], expect, epsilon = 1e-14);
        }
        let mut x = [2.0];
        crr_epoch(&mut x, &prob, &[0, 1], 0.0).unwrap();
        assert_eq!(x, [2.0]);
    }

    #[test]
    fn limit_points_telescope() {
        let prob = QuadraticEnsemble { n: 3, m: 5, p: 2, mu: 1.0, l: 4.0, heterogeneity: 1.0, spread: 1.0, seed: 3 }
            .build::<f64>()
            .unwrap();
        let xs = quadratic_minimizer(&prob).unwrap();
        let profile = PermutationStream::new(9, 5).profile(3, 0);
        let pts = limit_points(&prob, &xs, &profile, 0.05);
        assert_eq!(pts.len(), 6);
        for j in 0..2 {
            assert_abs_diff_eq!(pts[5][j], xs[j], epsilon = 1e-10);
        }
        assert!(crate::scalar::dist_sq(&pts[2], &xs) > 0.0);
        let zero = limit_points(&prob, &xs, &profile, 0.0);
        assert!(zero.iter().all(|p| p == &xs));
    }

    #[test]
    fn limit_point_hand_value() {
        // n=1, m=2: f_0 = ½x² − x (x*=1 for f_0), f_1 = ½x² + x; x* = 0
        let prob = FiniteSumProblem::new(1, 2, ProblemKind::Quadratic, vec![quad(1.0, 1.0), quad(1.0, -1.0)]).unwrap();
        let pts = limit_points(&prob, &[0.0], &[vec![0, 1]], 0.2);
        // ∇f_0(0) = −1 → x̄^1 = 0 − 0.2·(−1) = 0.2
        assert_abs_diff_eq!(pts[1][0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(pts[2][0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn schedule_values() {
        let s = StepsizeSchedule::Decaying { theta: 16.0, k: 10.0, m: 4, mu: 2.0 };
        assert_abs_diff_eq!(s.alpha(0), 16.0 / (4.0 * 2.0 * 10.0));
        assert!(s.alpha(5) < s.alpha(4));
        let h = StepsizeSchedule::Hyperbolic { a: 50.0, b: 400.0 };
        assert_abs_diff_eq!(h.alpha(2), 1.0 / 500.0);
        let c = StepsizeSchedule::CubeRoot { eta: 0.8, m: 8, horizon: 1000 };
        assert_abs_diff_eq!(c.alpha(7), 0.01, epsilon = 1e-15);
    }

    #[test]
    fn admissibility_direct_substitution() {
        // L = mu = 1, rho = 1/3: r2 = 1/9, gap = 8/9
        let r2: f64 = 1.0 / 9.0;
        let t1 = ((2.0 - r2) / (24.0 * r2 * (5.0 - r2))).sqrt() * (1.0 - r2);
        let t2 = (1.0 - r2) / 2.0;
        let t3 = (1.0 - r2) / (8.0 * 30f64.sqrt());
        // second, independent route: rationals (17/9)/(24/9·44/9) = 17·9/(24·44)
        let t1b = (17.0_f64 * 9.0 / (24.0 * 44.0)).sqrt() * 8.0 / 9.0;
        assert_abs_diff_eq!(t1, t1b, epsilon = 1e-15);
        let thr = t1.min(t2).min(t3);
        let rep = check_admissible(&StepsizeSchedule::Constant { alpha: thr * 0.999 }, 1.0 / 3.0, 1.0, 1.0, 4);
        assert!(rep.admissible);
        assert_eq!(rep.binding, "coupling");
        assert_abs_diff_eq!(rep.threshold, thr, epsilon = 1e-15);
        assert!(!check_admissible(&StepsizeSchedule::Constant { alpha: thr * 1.001 }, 1.0 / 3.0, 1.0, 1.0, 4).admissible);
    }

    #[test]
    fn admissibility_complete_graph_convention() {
        let rep = check_admissible(&StepsizeSchedule::Constant { alpha: 1e-4 }, 0.0, 2.0, 1.0, 4);
        let first = rep.terms.iter().find(|t| t.name == "consensus").unwrap();
        assert!(first.value.is_infinite());
        assert_abs_diff_eq!(rep.threshold, (1.0f64 / (2.0)).min(1.0 / (8.0 * 30f64.sqrt() * 4.0)));
        assert!(!rep.notes.is_empty());
    }

    #[test]
    fn theta_gate() {
        let (rho, l, mu, m) = (0.5, 2.0, 1.0, 4);
        let k = min_decaying_offset(13.0, rho, l, mu, m).ceil();
        let rep = check_admissible(&StepsizeSchedule::Decaying { theta: 13.0, k, m, mu }, rho, l, mu, m);
        assert!(rep.admissible, "{rep:?}");
        assert!(rep.warnings.is_empty());
        let k10 = min_decaying_offset(10.0, rho, l, mu, m).ceil();
        let rep = check_admissible(&StepsizeSchedule::Decaying { theta: 10.0, k: k10, m, mu }, rho, l, mu, m);
        assert!(!rep.admissible);
        assert!(rep.warnings[0].contains("theta > 12"));
        let rep = check_admissible(&StepsizeSchedule::Decaying { theta: 13.0, k: k - 1.0, m, mu }, rho, l, mu, m);
        assert!(!rep.admissible);
    }

    #[test]
    fn divergence_is_reported() {
        let prob = FiniteSumProblem::new(1, 1, ProblemKind::Quadratic, vec![quad(1.0, 0.0)]).unwrap();
        let opt = Optimizer::new(Method::Drr, 1);
        let mut st = AgentStateBlock::replicated(1, &[1.0]);
        let err = opt
            .run(&mut st, &MixingMatrix::identity(1), &prob, &StepsizeSchedule::Constant { alpha: 5.0 }, 100, |_| {})
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
