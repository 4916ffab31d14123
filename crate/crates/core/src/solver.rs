//! Inner solvers (cyclic coordinate descent, proximal gradient) and the path loop:
//! pick the next lambda, solve on a working set, correct on the full problem
//! with safe screening until the global gap certificate holds.

use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::active_control::{next_lambda_for_size, ordered_features, working_set_from_residual, SizeSchedule};
use crate::continuation::{
    adaptive_r, default_eps_fastpath, estimation_term, geometric_grid, next_lambda_fastpath, next_lambda_simplified,
    prescribed_grid_refine, residual_decrease_holds, simplified_tolerance, stepwise_progress_certificate,
    stopping_condition_fastpath, GeometricGrid, PathPolicy, PolicyKind, DEFAULT_RATE_FACTOR,
};
use crate::error::{Error, Result};
use crate::problem::{dual_point, PrimalDualState, Problem};
use crate::screening::{gap_safe_screen, safe_radius};

/// Power iteration underestimates `σ_max²`; the step is shrunk by this factor.
const STEP_SAFETY: f64 = 1.01;
const MAX_WORKING_SET_ROUNDS: usize = 8;
const SIZE_CONTROL_RETRIES: usize = 6;
const ADAPTIVE_R_CAP: f64 = 0.99;
/// Re-solves of the current step before the loss-monotonicity requirement is dropped.
const MONOTONE_RETRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerMethod {
    CyclicCoordinateDescent,
    ProximalGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolverConfig {
    pub method: InnerMethod,
    /// Epochs between two duality-gap evaluations.
    pub gap_check_every: usize,
    /// Epoch budget of one inner solve.
    pub max_epochs: usize,
    pub dynamic_screening: bool,
    pub enforce_monotone_f: bool,
    /// Solve on the pathwise working set before the full correction.
    pub working_set: bool,
    pub max_path_steps: usize,
    /// Accept an iterate once the sequential screening saturates for the next
    /// known lambda, even above the step tolerance. Flagged in the trace.
    pub stop_on_saturation: bool,
    pub saturation_c: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        InnerSolverConfig {
            method: InnerMethod::CyclicCoordinateDescent,
            gap_check_every: 10,
            max_epochs: 100_000,
            dynamic_screening: true,
            enforce_monotone_f: true,
            working_set: true,
            max_path_steps: 10_000,
            stop_on_saturation: false,
            saturation_c: 1.0,
        }
    }
}

impl InnerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gap_check_every == 0 {
            return Err(Error::arg("gap_check_every must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::arg("max_epochs must be at least 1"));
        }
        if self.max_path_steps == 0 {
            return Err(Error::arg("max_path_steps must be at least 1"));
        }
        if !(self.saturation_c > 0.0) {
            return Err(Error::arg("saturation constant must be positive"));
        }
        Ok(())
    }
}

/// `ST(x, tau) = sign(x) max(|x| − tau, 0)`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// One cyclic pass over `active` in index order, keeping `residual = y − Xβ`.
/// Returns the number of coordinates visited.
pub fn cd_epoch(prob: &Problem, beta: &mut [f64], residual: &mut [f64], lambda: f64, active: &[usize]) -> usize {
    let x = prob.x();
    let mut visited = 0;
    for &j in active {
        let norm = x.col_norm(j);
        if norm == 0.0 {
            continue;
        }
        visited += 1;
        let nrm2 = norm * norm;
        let old = beta[j];
        let new = soft_threshold(old + x.col_dot(j, residual) / nrm2, lambda / nrm2);
        if new != old {
            x.col_axpy(j, old - new, residual);
            beta[j] = new;
        }
    }
    visited
}

/// Largest step with guaranteed descent: `1 / (nu σ_max²(X))`, shrunk slightly
/// to cover the power-iteration estimate.
pub fn prox_grad_step_size(prob: &Problem) -> f64 {
    let l = prob.nu() * prob.spectral_norm_sq();
    if l > 0.0 {
        1.0 / (STEP_SAFETY * l)
    } else {
        1.0
    }
}

/// `ST(beta − step X^T ∇f(Xβ), step lambda)`.
pub fn prox_grad_step(prob: &Problem, beta: &Array1<f64>, lambda: f64, step: f64) -> Array1<f64> {
    let residual = prob.residual(beta.as_slice().expect("contiguous"));
    let r = residual.as_slice().unwrap();
    (0..prob.p())
        .map(|j| soft_threshold(beta[j] + step * prob.x().col_dot(j, r), step * lambda))
        .collect()
}

/// Proximal-gradient step restricted to `active`, updating `residual`.
fn prox_grad_epoch(prob: &Problem, beta: &mut [f64], residual: &mut [f64], lambda: f64, step: f64, active: &[usize]) -> usize {
    let x = prob.x();
    let moves: Vec<(usize, f64)> = active
        .iter()
        .map(|&j| {
            let new = soft_threshold(beta[j] + step * x.col_dot(j, residual), step * lambda);
            (j, new - beta[j])
        })
        .collect();
    for (j, d) in moves {
        if d != 0.0 {
            x.col_axpy(j, -d, residual);
            beta[j] += d;
        }
    }
    active.len()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerStats {
    pub epochs: usize,
    pub coordinate_updates: usize,
    pub gap_checks: usize,
}

impl InnerStats {
    fn add(&mut self, other: InnerStats) {
        self.epochs += other.epochs;
        self.coordinate_updates += other.coordinate_updates;
        self.gap_checks += other.gap_checks;
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemOutcome {
    pub state: PrimalDualState,
    pub stats: InnerStats,
    /// False when the certificate only covers the restricted problem.
    pub verified_global: bool,
}

/// Solves `min P_lambda` from `init` until `Gap ≤ eps`. With `restrict`, every
/// coordinate outside the set is held at zero and the gap (and dual point) are
/// those of the restricted problem.
pub fn solve_subproblem(
    prob: &Problem,
    init: &Array1<f64>,
    lambda: f64,
    eps: f64,
    cfg: &InnerSolverConfig,
    restrict: Option<&[usize]>,
) -> Result<SubproblemOutcome> {
    if !(eps > 0.0) {
        return Err(Error::arg(format!("eps must be positive, got {eps}")));
    }
    cfg.validate()?;
    if init.len() != prob.p() {
        return Err(Error::Dimension { what: "initial beta", expected: prob.p(), got: init.len() });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::arg(format!("lambda must be positive and finite, got {lambda}")));
    }
    inner_solve(prob, init.clone(), lambda, eps, cfg, restrict, &mut |_| Accept::Yes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Accept {
    Yes,
    /// Accepted through the saturation rule, above the gap tolerance.
    Saturated,
    No,
    /// The requirement is provably out of reach; return the iterate as is.
    Abort,
}

/// `f(X beta_hat) ≥ ½ (‖r‖ − sqrt(2 Gap/mu))²` for the optimum at `state.lambda`,
/// since `(mu/2)‖X beta − X beta_hat‖² ≤ Gap`.
fn optimal_loss_lower_bound(state: &PrimalDualState, mu: f64) -> f64 {
    let r = (2.0 * state.f_val).sqrt();
    let d = (r - (2.0 * state.gap_local / mu).sqrt()).max(0.0);
    0.5 * d * d
}

/// `accept` is consulted at every gap check; `Yes` only ends the solve once
/// `state.gap_local ≤ tol`.
fn inner_solve(
    prob: &Problem,
    mut beta: Array1<f64>,
    lambda: f64,
    tol: f64,
    cfg: &InnerSolverConfig,
    restrict: Option<&[usize]>,
    accept: &mut dyn FnMut(&PrimalDualState) -> Accept,
) -> Result<SubproblemOutcome> {
    let p = prob.p();
    let x = prob.x();
    let constraint: Vec<usize> = match restrict {
        Some(set) => {
            let mut s = set.to_vec();
            s.sort_unstable();
            s.dedup();
            if s.iter().any(|&j| j >= p) {
                return Err(Error::arg("restricted index out of range"));
            }
            s
        }
        None => (0..p).collect(),
    };
    if restrict.is_some() {
        let mut inside = vec![false; p];
        constraint.iter().for_each(|&j| inside[j] = true);
        beta.iter_mut().enumerate().filter(|(j, _)| !inside[*j]).for_each(|(_, b)| *b = 0.0);
    }
    let mut residual = prob.residual(beta.as_slice().unwrap());
    let mut sweep: Vec<usize> = constraint.iter().copied().filter(|&j| x.col_norm(j) > 0.0).collect();
    let step = match cfg.method {
        InnerMethod::ProximalGradient => prox_grad_step_size(prob),
        InnerMethod::CyclicCoordinateDescent => 0.0,
    };
    let mut stats = InnerStats::default();
    let mut corr = vec![0.0; p];
    let mut best: Option<PrimalDualState> = None;
    loop {
        let r = residual.as_slice().unwrap();
        let mut max_abs = 0.0f64;
        for &j in &constraint {
            corr[j] = x.col_dot(j, r);
            max_abs = max_abs.max(corr[j].abs());
        }
        stats.gap_checks += 1;
        let state = PrimalDualState::from_residual(prob, beta.clone(), residual.clone(), lambda, max_abs);
        match accept(&state) {
            Accept::Yes if state.gap_local <= tol => {
                return Ok(SubproblemOutcome { state, stats, verified_global: restrict.is_none() });
            }
            Accept::Saturated | Accept::Abort => {
                return Ok(SubproblemOutcome { state, stats, verified_global: restrict.is_none() });
            }
            _ => {}
        }
        if stats.epochs >= cfg.max_epochs {
            let best = match best {
                Some(b) if b.gap_local <= state.gap_local => b,
                _ => state,
            };
            return Err(Error::Budget { epochs: stats.epochs, gap: best.gap_local, best: Box::new(best) });
        }
        if cfg.dynamic_screening {
            let radius = safe_radius(state.gap_local, lambda, prob.nu());
            let alpha = state.alpha;
            let b = beta.as_slice_mut().unwrap();
            let res = residual.as_slice_mut().unwrap();
            sweep.retain(|&j| {
                let d = (1.0 - corr[j].abs() / alpha) / x.col_norm(j);
                let keep = d <= radius;
                if !keep && b[j] != 0.0 {
                    x.col_axpy(j, b[j], res);
                    b[j] = 0.0;
                }
                keep
            });
        }
        if best.as_ref().is_none_or(|b| state.gap_local < b.gap_local) {
            best = Some(state);
        }
        let b = beta.as_slice_mut().unwrap();
        let res = residual.as_slice_mut().unwrap();
        for _ in 0..cfg.gap_check_every {
            if stats.epochs >= cfg.max_epochs {
                break;
            }
            stats.coordinate_updates += match cfg.method {
                InnerMethod::CyclicCoordinateDescent => cd_epoch(prob, b, res, lambda, &sweep),
                InnerMethod::ProximalGradient => prox_grad_epoch(prob, b, res, lambda, step, &sweep),
            };
            stats.epochs += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    /// The last accepted step sits at the target lambda.
    ReachedTarget,
    /// `Gap_lambda(beta_t, theta_t) ≤ eps` before reaching the target.
    EarlyStop,
    /// Every point of a prescribed grid was solved.
    GridExhausted,
    BudgetExceeded,
}

/// One accepted step of the path (step 0 is the initial point at `lambda_max`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub lambda: f64,
    /// Tolerance the inner solve had to meet at this lambda.
    pub eps_t: f64,
    pub r_t: Option<f64>,
    pub gap_local: f64,
    /// `Gap_target(beta_t, theta_t)`.
    pub gap_target: f64,
    /// `E_t(target)`.
    pub estimation_term: f64,
    pub delta_t: f64,
    pub alpha: f64,
    /// `‖zeta_t‖²`.
    pub zeta_sq_norm: f64,
    pub f_val: f64,
    pub beta_l1: f64,
    /// `‖beta‖₁` of the warm start the inner solve began from.
    pub init_beta_l1: f64,
    pub support_size: usize,
    /// Size of the gap-safe active set at this lambda.
    pub active_size: usize,
    pub working_set_size: Option<usize>,
    pub epochs: usize,
    pub coordinate_updates: usize,
    pub wall_nanoseconds: u64,
    pub saturated: bool,
}

/// Checks between consecutive accepted steps `t → t+1`, all at the target lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCertificate {
    pub t: usize,
    pub gap_before: f64,
    pub gap_after: f64,
    /// `gap_after / gap_before` when `gap_before > 0`.
    pub contraction: Option<f64>,
    /// Stepwise-progress slack; `None` when the loss increased.
    pub progress_slack: Option<f64>,
    /// Stopping rule `E_{t+1} ≤ (1 − r)E_t + eps_t` (FastPath steps only).
    pub stopping_rule: Option<bool>,
    pub monotone_f: bool,
    pub residual_decrease: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub policy: String,
    pub r: Option<f64>,
    pub eps: f64,
    pub lambda: f64,
    pub lambda_max: f64,
    pub dataset: String,
    pub seed: Option<u64>,
    pub version: String,
    pub terminated_by: TerminatedBy,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTrace {
    pub meta: TraceMeta,
    pub steps: Vec<StepRecord>,
    pub certificates: Vec<StepCertificate>,
}

impl PathTrace {
    pub fn total_epochs(&self) -> usize {
        self.steps.iter().map(|s| s.epochs).sum()
    }

    pub fn total_coordinate_updates(&self) -> usize {
        self.steps.iter().map(|s| s.coordinate_updates).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Pair certified at the target lambda.
    pub final_state: PrimalDualState,
    pub trace: PathTrace,
}

impl RunResult {
    pub fn final_gap(&self) -> f64 {
        self.final_state.gap_local
    }
}

/// Re-expresses `state` at `target`, keeping whichever dual point (the carried
/// theta or a fresh rescaling at `target`) gives the smaller gap.
pub fn certify_at(prob: &Problem, state: &PrimalDualState, target: f64) -> PrimalDualState {
    if state.lambda == target {
        return state.clone();
    }
    let kept = state.at_lambda(target);
    match dual_point(prob, &state.beta, target) {
        Ok(fresh) if fresh.gap_local < kept.gap_local => fresh,
        _ => kept,
    }
}

pub fn run_path(prob: &Problem, policy: &PathPolicy, cfg: &InnerSolverConfig) -> Result<RunResult> {
    run_path_with(prob, policy, cfg, &mut |_| {})
}

/// [`run_path`] with a callback fired after every accepted step.
pub fn run_path_with(
    prob: &Problem,
    policy: &PathPolicy,
    cfg: &InnerSolverConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<RunResult> {
    cfg.validate()?;
    let mut runner = PathRunner::new(prob, policy, cfg, on_step)?;
    runner.run()?;
    Ok(runner.finish())
}

/// How the next lambda is chosen while heading to a segment target.
#[derive(Debug, Clone)]
enum Online {
    FastPath { r: f64 },
    Adaptive { c: f64 },
    Simplified { r: f64 },
    Size(SizeSchedule),
}

enum Plan {
    /// Fixed `(lambda, tol)` points; `early_stop` allows leaving before the end.
    Grid { points: Vec<(f64, f64)>, early_stop: bool },
    /// Sequential policy toward each `(lambda, eps)` segment end; all segment
    /// ends are visited.
    Online { rule: Online, segments: Vec<(f64, f64)> },
}

struct StepPlan {
    lambda: f64,
    tol: f64,
    r: Option<f64>,
    /// `(r, eps_t, E_t(target))` for the FastPath stopping rule.
    fastpath: Option<(f64, f64, f64)>,
    next_hint: Option<f64>,
}

struct PathRunner<'a> {
    prob: &'a Problem,
    cfg: &'a InnerSolverConfig,
    on_step: &'a mut dyn FnMut(&StepRecord),
    target: f64,
    eps: f64,
    plan: Option<Plan>,
    state: PrimalDualState,
    steps: Vec<StepRecord>,
    certificates: Vec<StepCertificate>,
    notes: Vec<String>,
    meta_policy: String,
    meta_r: Option<f64>,
    terminated_by: Option<TerminatedBy>,
    size_step: usize,
    /// Accepted state before the current one.
    prev_accepted: Option<PrimalDualState>,
    /// FastPath stopping rule `(r, eps_t, E_t)` the current state was accepted under.
    current_rule: Option<(f64, f64, f64)>,
    monotone_retries: usize,
    /// Work of abandoned solves, charged to the next recorded step.
    carried: InnerStats,
}

impl<'a> PathRunner<'a> {
    fn new(
        prob: &'a Problem,
        policy: &PathPolicy,
        cfg: &'a InnerSolverConfig,
        on_step: &'a mut dyn FnMut(&StepRecord),
    ) -> Result<Self> {
        let mut notes = Vec::new();
        let lambda_max = prob.lambda_max();
        let mut policy = policy.clone();
        if let PolicyKind::Prescribed { grid, .. } = &policy.variant {
            // the last grid point is the target
            policy.target_lambda = *grid.last().expect("validated grid");
        }
        let (mut target, mut eps) = policy.effective_targets();
        if policy.clip_lambda_floor > 0.0 || policy.clip_eps_floor > 0.0 {
            notes.push(format!("clipped targets: lambda={target:e}, eps={eps:e}"));
        }
        if !(target > 0.0) || !(eps > 0.0) {
            let (l, e) = crate::continuation::clip_targets(target, eps, lambda_max, prob.f_zero());
            if !(l > 0.0) || !(e > 0.0) {
                return Err(Error::arg("target lambda and eps must be positive (lambda_max = 0 and f(0) = 0?)"));
            }
            notes.push(format!("non-positive target clipped: lambda {target:e} -> {l:e}, eps {eps:e} -> {e:e}"));
            target = l;
            eps = e;
        }
        let lambda0 = lambda_max.max(target);
        if target > lambda_max {
            notes.push(format!("target lambda {target:e} above lambda_max {lambda_max:e}: beta = 0 is optimal"));
        }
        let state = dual_point(prob, &Array1::zeros(prob.p()), lambda0)?;
        let plan = build_plan(&policy.variant, lambda0, target, eps)?;
        let meta_r = match &policy.variant {
            PolicyKind::FastPath { r } | PolicyKind::Simplified { r } => Some(*r),
            PolicyKind::Prescribed { refine: Some(inner), .. } => inner.rate(),
            _ => None,
        };
        Ok(PathRunner {
            prob,
            cfg,
            on_step,
            target,
            eps,
            plan: Some(plan),
            state,
            steps: Vec::new(),
            certificates: Vec::new(),
            notes,
            meta_policy: policy.variant.name().to_string(),
            meta_r,
            terminated_by: None,
            size_step: 0,
            prev_accepted: None,
            current_rule: None,
            monotone_retries: 0,
            carried: InnerStats::default(),
        })
    }

    fn run(&mut self) -> Result<()> {
        let init = self.state.clone();
        self.record(&init, init.lambda, 0.0, None, None, InnerStats::default(), 0, false);
        if self.state.lambda == self.target && self.state.gap_local <= self.eps {
            self.terminated_by = Some(TerminatedBy::ReachedTarget);
            return Ok(());
        }
        match self.plan.take().expect("plan") {
            Plan::Grid { points, early_stop } => self.run_grid(&points, early_stop),
            Plan::Online { rule, segments } => self.run_online(&rule, &segments),
        }
    }

    fn budget_left(&mut self) -> bool {
        if self.steps.len() > self.cfg.max_path_steps {
            self.notes.push(format!("path step budget {} exhausted", self.cfg.max_path_steps));
            self.terminated_by = Some(TerminatedBy::BudgetExceeded);
            return false;
        }
        true
    }

    fn early_stopped(&mut self) -> bool {
        if self.state.gap_at(self.target) <= self.eps {
            self.terminated_by = Some(if self.state.lambda == self.target {
                TerminatedBy::ReachedTarget
            } else {
                TerminatedBy::EarlyStop
            });
            return true;
        }
        false
    }

    fn run_grid(&mut self, points: &[(f64, f64)], early_stop: bool) -> Result<()> {
        let lambda0 = self.state.lambda;
        let todo: Vec<(f64, f64)> = points.iter().copied().filter(|(l, _)| *l < lambda0).collect();
        for (k, &(lambda, tol)) in todo.iter().enumerate() {
            if early_stop && self.early_stopped() {
                return Ok(());
            }
            if !self.budget_left() {
                return Ok(());
            }
            let plan = StepPlan {
                lambda,
                tol,
                r: None,
                fastpath: None,
                next_hint: todo.get(k + 1).map(|p| p.0),
            };
            if !self.take_step(plan)? {
                return Ok(());
            }
        }
        self.terminated_by = Some(if early_stop && self.state.lambda != self.target {
            TerminatedBy::EarlyStop
        } else if early_stop {
            TerminatedBy::ReachedTarget
        } else {
            TerminatedBy::GridExhausted
        });
        Ok(())
    }

    fn run_online(&mut self, rule: &Online, segments: &[(f64, f64)]) -> Result<()> {
        let visit_all = segments.len() > 1;
        for &(b, eps_b) in segments {
            if b >= self.state.lambda {
                continue;
            }
            loop {
                let done = self.state.gap_at(b) <= eps_b || self.state.lambda <= b;
                if done {
                    break;
                }
                if !self.budget_left() {
                    return Ok(());
                }
                let plan = self.propose(rule, b, eps_b)?;
                if !self.take_step(plan)? {
                    return Ok(());
                }
            }
            if visit_all && self.state.lambda > b {
                // segment left early: the carried pair already certifies b
                let certified = certify_at(self.prob, &self.state, b);
                let init_l1 = self.state.l1_norm();
                let prev = std::mem::replace(&mut self.state, certified.clone());
                self.certify(&prev, &certified, None);
                self.prev_accepted = Some(prev);
                self.current_rule = None;
                self.record(&certified, eps_b, init_l1, None, None, InnerStats::default(), 0, false);
            }
        }
        self.terminated_by = Some(if visit_all {
            TerminatedBy::GridExhausted
        } else if self.state.lambda == self.target {
            TerminatedBy::ReachedTarget
        } else {
            TerminatedBy::EarlyStop
        });
        Ok(())
    }

    fn propose(&mut self, rule: &Online, b: f64, eps_b: f64) -> Result<StepPlan> {
        let prob = self.prob;
        let fast = |state: &PrimalDualState, r: f64| -> Result<StepPlan> {
            let e_t = estimation_term(state, self.target);
            let eps_t = default_eps_fastpath(state, r, prob, b);
            let lambda = next_lambda_fastpath(state, r, eps_t, prob, b)?;
            let tol = if lambda == b { eps_b } else { eps_t.max(eps_b) };
            Ok(StepPlan { lambda, tol, r: Some(r), fastpath: Some((r, eps_t, e_t)), next_hint: None })
        };
        match rule {
            Online::FastPath { r } => fast(&self.state, *r),
            Online::Adaptive { c } => {
                let cap = ADAPTIVE_R_CAP * prob.mu() / prob.nu();
                let r = (c * adaptive_r(prob, self.state.lambda, b)).min(cap);
                fast(&self.state, r)
            }
            Online::Simplified { r } => {
                let lambda = next_lambda_simplified(self.state.lambda, b, *r);
                let next_hint = (lambda > b).then(|| next_lambda_simplified(lambda, b, *r));
                Ok(StepPlan {
                    lambda,
                    tol: simplified_tolerance(lambda, b, eps_b),
                    r: Some(*r),
                    fastpath: None,
                    next_hint,
                })
            }
            Online::Size(schedule) => self.propose_size(schedule, b, eps_b),
        }
    }

    fn propose_size(&mut self, schedule: &SizeSchedule, b: f64, eps_b: f64) -> Result<StepPlan> {
        let prob = self.prob;
        let p = prob.p();
        let mut retries = 0;
        let report = gap_safe_screen(prob, &self.state, self.state.lambda);
        let current = report.active.len();
        let mut p_t = schedule.next_target(self.size_step, current, p).max(current + 1);
        self.size_step += 1;
        let lambda = loop {
            if p_t > p {
                break b;
            }
            match next_lambda_for_size(&self.state, p_t, prob, b) {
                Ok(step) if step.reach_at < self.state.lambda => break step.reach_at,
                Ok(_) => p_t += 1,
                Err(Error::SizeControlInfeasible { .. }) if retries < SIZE_CONTROL_RETRIES => {
                    retries += 1;
                    if !self.tighten_current(0.1)? {
                        retries = SIZE_CONTROL_RETRIES;
                    }
                }
                Err(Error::SizeControlInfeasible { target }) => {
                    let r = DEFAULT_RATE_FACTOR * prob.mu() / prob.nu();
                    self.notes.push(format!(
                        "size control infeasible for target {target} at lambda {:e}; simplified step used",
                        self.state.lambda
                    ));
                    break next_lambda_simplified(self.state.lambda, b, r);
                }
                Err(e) => return Err(e),
            }
        };
        let lambda = lambda.clamp(b, self.state.lambda);
        Ok(StepPlan {
            lambda,
            tol: simplified_tolerance(lambda, b, eps_b),
            r: None,
            fastpath: None,
            next_hint: None,
        })
    }

    /// Re-solves the current lambda to `factor` times its gap, under the same
    /// acceptance rules, and refreshes its record and certificate in place.
    /// Returns false (leaving everything as is) when the budget runs out.
    fn tighten_current(&mut self, factor: f64) -> Result<bool> {
        let start = Instant::now();
        let tol = (self.state.gap_local * factor).max(f64::MIN_POSITIVE);
        let f_cap = self.prev_accepted.as_ref().filter(|_| self.cfg.enforce_monotone_f).map(|s| s.f_val);
        let rule = self.current_rule;
        let target = self.target;
        let mut accept = |s: &PrimalDualState| {
            if f_cap.is_some_and(|f| s.f_val > f) {
                return Accept::No;
            }
            match rule {
                Some((r, eps_t, e_t)) if !stopping_condition_fastpath(e_t, estimation_term(s, target), eps_t, r) => {
                    Accept::No
                }
                _ => Accept::Yes,
            }
        };
        let out = match inner_solve(self.prob, self.state.beta.clone(), self.state.lambda, tol, self.cfg, None, &mut accept)
        {
            Ok(out) => out,
            Err(Error::Budget { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
        let old = self.steps.pop().expect("current step recorded");
        self.state = out.state.clone();
        if let Some(prev) = self.prev_accepted.clone() {
            let stopping_rule = self.certificates.pop().and_then(|c| c.stopping_rule);
            self.certify(&prev, &out.state, stopping_rule);
        }
        let stats = InnerStats {
            epochs: old.epochs + out.stats.epochs,
            coordinate_updates: old.coordinate_updates + out.stats.coordinate_updates,
            gap_checks: 0,
        };
        let wall = old.wall_nanoseconds + start.elapsed().as_nanos() as u64;
        self.record(&out.state, tol, old.init_beta_l1, old.r_t, old.working_set_size, stats, wall, false);
        Ok(true)
    }

    /// Solves one step and records it. Returns false when the run must stop.
    fn take_step(&mut self, plan: StepPlan) -> Result<bool> {
        let start = Instant::now();
        let prob = self.prob;
        let prev = self.state.clone();
        let cfg = self.cfg;
        let target = self.target;
        let monotone = cfg.enforce_monotone_f && self.monotone_retries <= MONOTONE_RETRIES;
        let saturation = if cfg.stop_on_saturation { plan.next_hint } else { None };
        let mut unreachable = false;
        let mut accept = |s: &PrimalDualState| -> Accept {
            if monotone && s.f_val > prev.f_val {
                if optimal_loss_lower_bound(s, prob.mu()) > prev.f_val {
                    unreachable = true;
                    return Accept::Abort;
                }
                return Accept::No;
            }
            if let Some((r, eps_t, e_t)) = plan.fastpath {
                if !stopping_condition_fastpath(e_t, estimation_term(s, target), eps_t, r) {
                    return Accept::No;
                }
            }
            if s.gap_local <= plan.tol {
                return Accept::Yes;
            }
            if let Some(next) = saturation {
                let step = 1.0 - next / s.lambda;
                let bound = cfg.saturation_c * s.zeta_sq_norm() * step * step / (2.0 * prob.mu());
                if estimation_term(s, next) <= bound {
                    return Accept::Saturated;
                }
            }
            Accept::No
        };
        let mut stats = InnerStats::default();
        let mut ws_size = None;
        let mut beta = prev.beta.clone();
        if cfg.working_set {
            match self.working_set_phase(&prev, plan.lambda, plan.tol, &mut stats) {
                Ok((b, size)) => {
                    beta = b;
                    ws_size = size;
                }
                Err(e) => return Err(e),
            }
        }
        let outcome = inner_solve(prob, beta, plan.lambda, plan.tol, cfg, None, &mut accept);
        let out = match outcome {
            Ok(o) => o,
            Err(Error::Budget { epochs, gap, .. }) => {
                self.notes.push(format!(
                    "inner budget exhausted at lambda {:e} after {epochs} epochs (gap {gap:e})",
                    plan.lambda
                ));
                self.terminated_by = Some(TerminatedBy::BudgetExceeded);
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        if unreachable {
            // the previous iterate undershoots the optimal loss at plan.lambda:
            // solve it tighter, then propose again from the refined pair
            stats.add(out.stats);
            self.carried.add(stats);
            self.monotone_retries += 1;
            if self.monotone_retries > MONOTONE_RETRIES || !self.tighten_current(1e-2)? {
                self.monotone_retries = MONOTONE_RETRIES + 1;
                self.notes.push(format!(
                    "loss monotonicity out of reach at lambda {:e}; requirement dropped for this step",
                    plan.lambda
                ));
            }
            return Ok(true);
        }
        self.monotone_retries = 0;
        stats.add(out.stats);
        stats.add(std::mem::take(&mut self.carried));
        let state = out.state;
        let saturated = state.gap_local > plan.tol;
        let elapsed = start.elapsed().as_nanos() as u64;
        let fast_ok = plan
            .fastpath
            .map(|(r, eps_t, e_t)| stopping_condition_fastpath(e_t, estimation_term(&state, target), eps_t, r));
        self.certify(&prev, &state, fast_ok);
        self.current_rule = plan.fastpath;
        self.prev_accepted = Some(prev.clone());
        self.state = state.clone();
        self.record(&state, plan.tol, prev.l1_norm(), plan.r, ws_size, stats, elapsed, saturated);
        Ok(true)
    }

    /// Restricted solves on the pathwise working set, grown while some feature
    /// outside it violates the optimality conditions.
    fn working_set_phase(
        &mut self,
        prev: &PrimalDualState,
        lambda: f64,
        tol: f64,
        stats: &mut InnerStats,
    ) -> Result<(Array1<f64>, Option<usize>)> {
        let prob = self.prob;
        let p = prob.p();
        let mut set = working_set_from_residual(prob, prev.residual.as_slice().unwrap(), lambda).indices;
        set.extend(prev.beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j));
        set.sort_unstable();
        set.dedup();
        let mut beta = prev.beta.clone();
        let mut size = None;
        for _ in 0..MAX_WORKING_SET_ROUNDS {
            if set.is_empty() {
                break;
            }
            size = Some(set.len());
            let residual = match inner_solve(prob, beta.clone(), lambda, tol, self.cfg, Some(&set), &mut |_| Accept::Yes) {
                Ok(o) => {
                    stats.add(o.stats);
                    beta = o.state.beta;
                    o.state.residual
                }
                Err(Error::Budget { epochs, best, .. }) => {
                    stats.epochs += epochs;
                    beta = best.beta;
                    break;
                }
                Err(e) => return Err(e),
            };
            if set.len() == p {
                break;
            }
            let r = residual.as_slice().unwrap();
            let corr: Vec<f64> = (0..p).map(|j| prob.x().col_dot(j, r)).collect();
            let mut inside = vec![false; p];
            set.iter().for_each(|&j| inside[j] = true);
            if !(0..p).any(|j| !inside[j] && corr[j].abs() > lambda) {
                break;
            }
            let alpha = corr.iter().fold(lambda, |m, c| m.max(c.abs()));
            let distances = crate::screening::distances_from_correlations(
                prob,
                &corr.iter().map(|c| c / alpha).collect::<Vec<_>>(),
            );
            let grow = (2 * set.len()).min(p);
            set.extend(ordered_features(&distances).into_iter().take(grow));
            set.sort_unstable();
            set.dedup();
        }
        Ok((beta, size))
    }

    fn certify(&mut self, prev: &PrimalDualState, next: &PrimalDualState, stopping_rule: Option<bool>) {
        let target = self.target;
        let gap_before = prev.gap_at(target);
        let gap_after = next.gap_at(target);
        self.certificates.push(StepCertificate {
            t: self.steps.len() - 1,
            gap_before,
            gap_after,
            contraction: (gap_before > 0.0).then(|| gap_after / gap_before),
            progress_slack: stepwise_progress_certificate(prev, next, self.prob, target).slack(),
            stopping_rule,
            monotone_f: next.f_val <= prev.f_val,
            residual_decrease: residual_decrease_holds(prev, next, self.prob, 1e-12),
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        state: &PrimalDualState,
        eps_t: f64,
        init_beta_l1: f64,
        r_t: Option<f64>,
        working_set_size: Option<usize>,
        stats: InnerStats,
        wall_nanoseconds: u64,
        saturated: bool,
    ) {
        let active_size = gap_safe_screen(self.prob, state, state.lambda).active.len();
        let rec = StepRecord {
            t: self.steps.len(),
            lambda: state.lambda,
            eps_t,
            r_t,
            gap_local: state.gap_local,
            gap_target: state.gap_at(self.target),
            estimation_term: estimation_term(state, self.target),
            delta_t: state.delta_t,
            alpha: state.alpha,
            zeta_sq_norm: state.zeta_sq_norm(),
            f_val: state.f_val,
            beta_l1: state.l1_norm(),
            init_beta_l1,
            support_size: state.support_size(),
            active_size,
            working_set_size,
            epochs: stats.epochs,
            coordinate_updates: stats.coordinate_updates,
            wall_nanoseconds,
            saturated,
        };
        (self.on_step)(&rec);
        self.steps.push(rec);
    }

    fn finish(self) -> RunResult {
        let final_state = certify_at(self.prob, &self.state, self.target);
        let terminated_by = self.terminated_by.unwrap_or(TerminatedBy::ReachedTarget);
        RunResult {
            final_state,
            trace: PathTrace {
                meta: TraceMeta {
                    policy: self.meta_policy,
                    r: self.meta_r,
                    eps: self.eps,
                    lambda: self.target,
                    lambda_max: self.prob.lambda_max(),
                    dataset: String::new(),
                    seed: None,
                    version: env!("CARGO_PKG_VERSION").to_string(),
                    terminated_by,
                    notes: self.notes,
                },
                steps: self.steps,
                certificates: self.certificates,
            },
        }
    }
}

fn build_plan(kind: &PolicyKind, lambda0: f64, target: f64, eps: f64) -> Result<Plan> {
    Ok(match kind {
        PolicyKind::FastPath { r } => Plan::Online { rule: Online::FastPath { r: *r }, segments: vec![(target, eps)] },
        PolicyKind::AdaptiveR { c } => Plan::Online { rule: Online::Adaptive { c: *c }, segments: vec![(target, eps)] },
        PolicyKind::Simplified { r } => {
            Plan::Online { rule: Online::Simplified { r: *r }, segments: vec![(target, eps)] }
        }
        PolicyKind::ActiveSetControl(s) => Plan::Online { rule: Online::Size(s.clone()), segments: vec![(target, eps)] },
        PolicyKind::Geometric(spec) => {
            let grid = geometric_grid(lambda0, target, spec)?;
            Plan::Grid { points: grid.into_iter().map(|l| (l, eps)).collect(), early_stop: true }
        }
        PolicyKind::Prescribed { grid, refine } => match refine.as_deref() {
            None => Plan::Grid { points: grid.iter().map(|l| (*l, eps)).collect(), early_stop: false },
            Some(inner @ (PolicyKind::Simplified { .. } | PolicyKind::Geometric(GeometricGrid::Ratio(_)))) => {
                let policy = PathPolicy::new(inner.clone(), target, eps)?;
                let mut full = vec![lambda0];
                full.extend(grid.iter().copied().filter(|l| *l < lambda0));
                Plan::Grid { points: prescribed_grid_refine(&full, &policy)?, early_stop: false }
            }
            Some(PolicyKind::FastPath { r }) => Plan::Online {
                rule: Online::FastPath { r: *r },
                segments: grid.iter().map(|l| (*l, eps)).collect(),
            },
            Some(PolicyKind::AdaptiveR { c }) => Plan::Online {
                rule: Online::Adaptive { c: *c },
                segments: grid.iter().map(|l| (*l, eps)).collect(),
            },
            Some(other) => {
                return Err(Error::Policy(format!("policy '{}' cannot refine a prescribed grid", other.name())))
            }
        },
    })
}
