//! Warm-start gap bounds and the grid/tolerance policies that generate the
//! regularization sequence `lambda_0 > lambda_1 > … ≥ lambda` and the per-step
//! accuracies.
//!
//! Notation follows the state fields: `lambda_t`, `alpha_t`, `zeta_t = −lambda_t theta_t`,
//! `Gap_t = Gap_{lambda_t}(beta_t, theta_t)` and `Delta_t = f(Xβ_t) − ½‖zeta_t‖²`.

use serde::{Deserialize, Serialize};

use crate::active_control::SizeSchedule;
use crate::error::{Error, Result};
use crate::problem::{eval_dual, eval_primal, PrimalDualState, Problem};

/// Default rate `r = 0.42 mu/nu`.
pub const DEFAULT_RATE_FACTOR: f64 = 0.42;
/// Fraction of the admissible budget used by [`default_eps_fastpath`].
pub const DEFAULT_EPS_FACTOR: f64 = 0.42;
/// Relative distance under which a proposed lambda is snapped onto the target.
pub const SNAP_REL_TOL: f64 = 1e-12;
/// Default number of points of a geometric grid.
pub const DEFAULT_GRID_SIZE: usize = 100;
/// Clip floors: `lambda_0 / 1e3` and `f(0) / 1e8`.
pub const CLIP_LAMBDA_DIVISOR: f64 = 1e3;
pub const CLIP_EPS_DIVISOR: f64 = 1e8;

const EPS_HALVINGS: usize = 40;

/// Both sides of the warm-start sandwich
/// `v_nu ≤ Gap_lambda(beta_t, theta_t) − e_t ≤ v_mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStartBound {
    pub e_t: f64,
    pub v_mu: f64,
    pub v_nu: f64,
    pub gap_at_target: f64,
}

impl WarmStartBound {
    /// Checks the sandwich with absolute slack `tol * (1 + |gap|)`.
    pub fn holds(&self, tol: f64) -> bool {
        let slack = tol * (1.0 + self.gap_at_target.abs());
        let middle = self.gap_at_target - self.e_t;
        self.v_nu <= middle + slack && middle <= self.v_mu + slack
    }
}

/// `E_t(lambda) = (lambda/lambda_t) Gap_t + (1 − lambda/lambda_t) Delta_t`.
pub fn estimation_term(state: &PrimalDualState, lambda: f64) -> f64 {
    let q = lambda / state.lambda;
    q * state.gap_local + (1.0 - q) * state.delta_t
}

/// `V_tau(lambda_t, lambda) = ‖zeta_t‖² (1 − lambda/lambda_t)² / (2 tau)`.
pub fn deviation_term(state: &PrimalDualState, lambda: f64, tau: f64) -> f64 {
    let d = 1.0 - lambda / state.lambda;
    state.zeta_sq_norm() * d * d / (2.0 * tau)
}

pub fn warm_start_bound(state: &PrimalDualState, lambda: f64, prob: &Problem) -> Result<WarmStartBound> {
    if !(lambda > 0.0) {
        return Err(Error::arg(format!("lambda must be positive, got {lambda}")));
    }
    if lambda > state.lambda {
        return Err(Error::arg(format!(
            "warm-start bound needs lambda <= lambda_t ({lambda} > {})",
            state.lambda
        )));
    }
    let gap_at_target = eval_primal(prob, &state.beta, lambda)? - eval_dual(prob, &state.theta, lambda)?;
    Ok(WarmStartBound {
        e_t: estimation_term(state, lambda),
        v_mu: deviation_term(state, lambda, prob.mu()),
        v_nu: deviation_term(state, lambda, prob.nu()),
        gap_at_target,
    })
}

fn check_rate(r: f64, prob: &Problem) -> Result<()> {
    let bound = prob.mu() / prob.nu();
    if !(0.0..=bound).contains(&r) {
        return Err(Error::Policy(format!("rate r={r} outside [0, mu/nu = {bound}]")));
    }
    Ok(())
}

/// `D(eps) = (lambda_t mu / (alpha_t nu))² [(1 − r nu/mu)(1 − lambda/lambda_t)² − 2 nu eps / ‖zeta_t‖²]`.
pub fn fastpath_discriminant(state: &PrimalDualState, r: f64, eps: f64, prob: &Problem, target: f64) -> f64 {
    let (mu, nu) = (prob.mu(), prob.nu());
    let scale = (state.lambda * mu / (state.alpha * nu)).powi(2);
    let gap = 1.0 - target / state.lambda;
    scale * ((1.0 - r * nu / mu) * gap * gap - 2.0 * nu * eps / state.zeta_sq_norm())
}

/// Snaps `lambda_next` onto `target` when within `SNAP_REL_TOL * target`, and clamps
/// it into `[target, lambda_t]`.
pub fn snap_to_target(lambda_next: f64, target: f64, lambda_t: f64) -> f64 {
    let l = lambda_next.clamp(target, lambda_t.max(target));
    if l - target <= SNAP_REL_TOL * target {
        target
    } else {
        l
    }
}

/// `lambda_{t+1} = lambda / (1 − sqrt(D(eps_t)))`.
pub fn next_lambda_fastpath(
    state: &PrimalDualState,
    r: f64,
    eps_t: f64,
    prob: &Problem,
    target: f64,
) -> Result<f64> {
    check_rate(r, prob)?;
    if !(target > 0.0) || target > state.lambda {
        return Err(Error::arg(format!("target {target} must lie in (0, lambda_t = {}]", state.lambda)));
    }
    if eps_t < 0.0 {
        return Err(Error::arg(format!("eps_t must be nonnegative, got {eps_t}")));
    }
    if state.zeta_sq_norm() == 0.0 {
        return Ok(target);
    }
    let d = fastpath_discriminant(state, r, eps_t, prob, target);
    // scale of the bracket, to decide what "zero" means
    let reference = (state.lambda * prob.mu() / (state.alpha * prob.nu())).powi(2)
        * (1.0 - target / state.lambda).powi(2)
        + f64::MIN_POSITIVE;
    if d.abs() <= 1e-14 * reference {
        return Ok(target);
    }
    if d < 0.0 {
        return Err(Error::Policy(format!("D(eps_t) = {d:.3e} < 0: shrink eps_t")));
    }
    Ok(snap_to_target(target / (1.0 - d.sqrt()), target, state.lambda))
}

/// `eps_t = 0.42 (‖zeta_t‖² / 2nu)(1 − r nu/mu)(1 − lambda/lambda_t)²`.
pub fn default_eps_fastpath(state: &PrimalDualState, r: f64, prob: &Problem, target: f64) -> f64 {
    let gap = 1.0 - target / state.lambda;
    let eps = DEFAULT_EPS_FACTOR * state.zeta_sq_norm() / (2.0 * prob.nu())
        * (1.0 - r * prob.nu() / prob.mu())
        * gap
        * gap;
    let eps = eps.max(0.0);
    debug_assert!(state.zeta_sq_norm() == 0.0 || fastpath_discriminant(state, r, eps, prob, target) >= -1e-15);
    eps
}

/// Picks a feasible `eps_t`: halves `requested` until `D ≥ 0` (at most 40 times),
/// then falls back to [`default_eps_fastpath`].
pub fn feasible_eps_fastpath(state: &PrimalDualState, r: f64, requested: f64, prob: &Problem, target: f64) -> f64 {
    if state.zeta_sq_norm() == 0.0 {
        return requested;
    }
    let mut eps = requested;
    for _ in 0..=EPS_HALVINGS {
        if fastpath_discriminant(state, r, eps, prob, target) >= 0.0 {
            return eps;
        }
        eps *= 0.5;
    }
    default_eps_fastpath(state, r, prob, target)
}

/// `E_{t+1} ≤ (1 − r) E_t + eps_t`.
pub fn stopping_condition_fastpath(e_prev: f64, e_next: f64, eps_t: f64, r: f64) -> bool {
    e_next <= (1.0 - r) * e_prev + eps_t
}

/// Solves `(1 − lambda/lambda_{t+1})² = (1 − r)(1 − lambda/lambda_t)²` for `lambda_{t+1}`.
pub fn next_lambda_simplified(lambda_t: f64, target: f64, r: f64) -> f64 {
    let next = target / (1.0 - (1.0 - r).sqrt() * (1.0 - target / lambda_t));
    snap_to_target(next, target, lambda_t)
}

/// `eps_{t+1} = (lambda_{t+1} / lambda) eps`.
pub fn simplified_tolerance(lambda_next: f64, target: f64, eps: f64) -> f64 {
    lambda_next / target * eps
}

/// `r_t = (mu/nu)(lambda/lambda_t)`.
pub fn adaptive_r(prob: &Problem, lambda_t: f64, target: f64) -> f64 {
    prob.mu() / prob.nu() * (target / lambda_t)
}

/// `(max(lambda, lambda_0/1e3), max(eps, f(0)/1e8))`.
pub fn clip_targets(lambda: f64, eps: f64, lambda0: f64, f0: f64) -> (f64, f64) {
    (lambda.max(lambda0 / CLIP_LAMBDA_DIVISOR), eps.max(f0 / CLIP_EPS_DIVISOR))
}

/// Upper bound `ceil(log(eps/Gap_0) / log(1 − r))` on the number of certified
/// steps needed to reach an `eps`-solution.
pub fn max_grid_size(gap0: f64, eps: f64, r: f64) -> usize {
    if eps >= gap0 || gap0 <= 0.0 {
        return 0;
    }
    ((eps / gap0).ln() / (1.0 - r).ln()).ceil() as usize
}

/// Outcome of the stepwise-progress check between two consecutive states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProgressCertificate {
    /// Right-hand side minus left-hand side of the stepwise bound.
    Slack(f64),
    /// `f(Xβ_{t+1}) > f(Xβ_t)`: the bound does not apply.
    Inapplicable,
}

impl ProgressCertificate {
    pub fn slack(&self) -> Option<f64> {
        match self {
            ProgressCertificate::Slack(s) => Some(*s),
            ProgressCertificate::Inapplicable => None,
        }
    }
}

/// `delta_t = (1 − lambda/lambda_t)² − (alpha_t nu/(lambda_t mu))² (1 − lambda/lambda_{t+1})²`.
pub fn step_decrease_factor(state_t: &PrimalDualState, lambda_next: f64, prob: &Problem, target: f64) -> f64 {
    let a = 1.0 - target / state_t.lambda;
    let b = 1.0 - target / lambda_next;
    let c = state_t.alpha * prob.nu() / (state_t.lambda * prob.mu());
    a * a - c * c * b * b
}

/// Slack of `Gap(t+1) − Gap(t) ≤ E_{t+1} − E_t − delta_t ‖zeta_t‖²/(2nu)`, all at `target`.
pub fn stepwise_progress_certificate(
    state_t: &PrimalDualState,
    state_t1: &PrimalDualState,
    prob: &Problem,
    target: f64,
) -> ProgressCertificate {
    if state_t1.f_val > state_t.f_val {
        return ProgressCertificate::Inapplicable;
    }
    let delta = step_decrease_factor(state_t, state_t1.lambda, prob, target);
    let e_t = estimation_term(state_t, target);
    let e_t1 = estimation_term(state_t1, target);
    let g_t = state_t.gap_at(target);
    let g_t1 = state_t1.gap_at(target);
    // group as (E − G) differences to limit cancellation
    let rhs_minus_lhs = (e_t1 - g_t1) - (e_t - g_t) - delta * state_t.zeta_sq_norm() / (2.0 * prob.nu());
    ProgressCertificate::Slack(rhs_minus_lhs)
}

/// `‖zeta_{t+1}‖² ≤ (nu/mu)(alpha_t/lambda_t)² ‖zeta_t‖²`, with relative slack `tol`.
pub fn residual_decrease_holds(state_t: &PrimalDualState, state_t1: &PrimalDualState, prob: &Problem, tol: f64) -> bool {
    let bound = prob.nu() / prob.mu() * (state_t.alpha / state_t.lambda).powi(2) * state_t.zeta_sq_norm();
    state_t1.zeta_sq_norm() <= bound * (1.0 + tol) + tol
}

/// How a geometric grid is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GeometricGrid {
    /// `T` points from `lambda_0` to the target, both included.
    Size(usize),
    /// Constant ratio `s ∈ (0, 1)`; the last point is the target.
    Ratio(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    FastPath { r: f64 },
    Simplified { r: f64 },
    /// FastPath with `r_t = c (mu/nu)(lambda/lambda_t)`.
    AdaptiveR { c: f64 },
    Geometric(GeometricGrid),
    /// A given grid. `refine` inserts intermediate points between consecutive
    /// grid elements (`Simplified`/`Geometric` offline, `FastPath`/`AdaptiveR` online).
    Prescribed { grid: Vec<f64>, refine: Option<Box<PolicyKind>> },
    ActiveSetControl(SizeSchedule),
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::FastPath { .. } => "fastpath",
            PolicyKind::Simplified { .. } => "simplified",
            PolicyKind::AdaptiveR { .. } => "adaptive",
            PolicyKind::Geometric(_) => "geometric",
            PolicyKind::Prescribed { .. } => "prescribed",
            PolicyKind::ActiveSetControl(_) => "active-set",
        }
    }

    pub fn rate(&self) -> Option<f64> {
        match self {
            PolicyKind::FastPath { r } | PolicyKind::Simplified { r } => Some(*r),
            PolicyKind::Prescribed { refine: Some(inner), .. } => inner.rate(),
            _ => None,
        }
    }
}

/// Which policy generates `(lambda_t, eps_t)`, and the targets it drives to.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPolicy {
    pub variant: PolicyKind,
    pub target_lambda: f64,
    pub target_eps: f64,
    pub clip_lambda_floor: f64,
    pub clip_eps_floor: f64,
}

impl PathPolicy {
    pub fn new(variant: PolicyKind, target_lambda: f64, target_eps: f64) -> Result<Self> {
        validate_kind(&variant)?;
        if target_lambda < 0.0 || target_eps < 0.0 || !target_lambda.is_finite() || !target_eps.is_finite() {
            return Err(Error::arg("targets must be finite and nonnegative"));
        }
        Ok(PathPolicy { variant, target_lambda, target_eps, clip_lambda_floor: 0.0, clip_eps_floor: 0.0 })
    }

    pub fn fastpath(target_lambda: f64, target_eps: f64) -> Result<Self> {
        Self::new(PolicyKind::FastPath { r: DEFAULT_RATE_FACTOR }, target_lambda, target_eps)
    }

    /// Enables the `max(lambda, lambda_0/1e3)`, `max(eps, f(0)/1e8)` clipping.
    pub fn with_clipping(mut self, prob: &Problem) -> Self {
        self.clip_lambda_floor = prob.lambda_max() / CLIP_LAMBDA_DIVISOR;
        self.clip_eps_floor = prob.f_zero() / CLIP_EPS_DIVISOR;
        self
    }

    /// Targets after clipping.
    pub fn effective_targets(&self) -> (f64, f64) {
        (self.target_lambda.max(self.clip_lambda_floor), self.target_eps.max(self.clip_eps_floor))
    }
}

fn validate_kind(kind: &PolicyKind) -> Result<()> {
    match kind {
        PolicyKind::FastPath { r } | PolicyKind::Simplified { r } => {
            if !(*r > 0.0 && *r < 1.0) {
                return Err(Error::Policy(format!("rate r must lie in (0, 1), got {r}")));
            }
        }
        PolicyKind::AdaptiveR { c } => {
            if !(*c > 0.0 && *c <= 1.0) {
                return Err(Error::Policy(format!("adaptive factor c must lie in (0, 1], got {c}")));
            }
        }
        PolicyKind::Geometric(GeometricGrid::Size(t)) => {
            if *t == 0 {
                return Err(Error::Policy("geometric grid needs at least one point".into()));
            }
        }
        PolicyKind::Geometric(GeometricGrid::Ratio(s)) => {
            if !(*s > 0.0 && *s < 1.0) {
                return Err(Error::Policy(format!("geometric ratio must lie in (0, 1), got {s}")));
            }
        }
        PolicyKind::Prescribed { grid, refine } => {
            check_decreasing(grid)?;
            if let Some(inner) = refine {
                if matches!(**inner, PolicyKind::Prescribed { .. } | PolicyKind::ActiveSetControl(_)) {
                    return Err(Error::Policy("unsupported refinement policy".into()));
                }
                validate_kind(inner)?;
            }
        }
        PolicyKind::ActiveSetControl(schedule) => schedule.validate()?,
    }
    Ok(())
}

fn check_decreasing(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::arg("grid is empty"));
    }
    if grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::arg("grid values must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::arg("grid must be strictly decreasing"));
    }
    Ok(())
}

/// Geometric grid from `lambda0` down to `target`.
pub fn geometric_grid(lambda0: f64, target: f64, spec: &GeometricGrid) -> Result<Vec<f64>> {
    if !(target > 0.0 && lambda0 >= target) {
        return Err(Error::arg(format!("need 0 < target <= lambda0, got {target}, {lambda0}")));
    }
    if lambda0 == target {
        return Ok(vec![target]);
    }
    let grid: Vec<f64> = match spec {
        GeometricGrid::Size(t) if *t <= 1 => vec![target],
        GeometricGrid::Size(t) => {
            let s = (target / lambda0).powf(1.0 / (*t as f64 - 1.0));
            let mut g: Vec<f64> = (0..*t - 1).map(|k| lambda0 * s.powi(k as i32)).collect();
            g.push(target);
            g
        }
        GeometricGrid::Ratio(s) => {
            let mut g = vec![lambda0];
            let mut l = lambda0 * s;
            while l > target * (1.0 + SNAP_REL_TOL) {
                g.push(l);
                l *= s;
            }
            g.push(target);
            g
        }
    };
    check_decreasing(&grid)?;
    Ok(grid)
}

/// Inserts intermediate points between consecutive grid elements following
/// the refinement policy. Grid points keep the policy's target tolerance;
/// inserted points get the tolerance the refinement policy assigns.
///
/// For `Simplified(r)` a segment `a → b` is left alone when
/// `1 − b/a ≤ 1 − sqrt(1 − r)` (one recurrence step from infinitely far covers it);
/// otherwise recurrence points are inserted until the remaining relative
/// distance drops under that threshold.
pub fn prescribed_grid_refine(grid: &[f64], policy: &PathPolicy) -> Result<Vec<(f64, f64)>> {
    check_decreasing(grid)?;
    let eps = policy.target_eps;
    let refine = match &policy.variant {
        PolicyKind::Prescribed { refine, .. } => refine.as_deref(),
        other => Some(other),
    };
    let mut out = vec![(grid[0], eps)];
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        match refine {
            None => {}
            Some(PolicyKind::Simplified { r }) => {
                let threshold = 1.0 - (1.0 - r).sqrt();
                let mut l = a;
                if 1.0 - b / a > threshold {
                    loop {
                        l = b / (1.0 - (1.0 - r).sqrt() * (1.0 - b / l));
                        if 1.0 - b / l <= threshold {
                            break;
                        }
                        out.push((l, simplified_tolerance(l, b, eps)));
                    }
                }
            }
            Some(PolicyKind::Geometric(GeometricGrid::Ratio(s))) => {
                let mut l = a * s;
                while l > b * (1.0 + SNAP_REL_TOL) {
                    out.push((l, eps));
                    l *= s;
                }
            }
            Some(other) => {
                return Err(Error::Policy(format!(
                    "policy '{}' depends on the iterates and cannot refine a grid offline",
                    other.name()
                )))
            }
        }
        out.push((b, eps));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{dual_point, DesignMatrix};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};

    fn toy() -> Problem {
        Problem::new(DesignMatrix::dense(Array2::eye(2)).unwrap(), array![2.0, 0.5]).unwrap()
    }

    /// State with prescribed lambda_t and alpha_t, zeta built from a residual.
    fn state_with(lambda_t: f64, alpha: f64, residual: Array1<f64>) -> PrimalDualState {
        let prob = toy();
        let beta = array![0.0, 0.0];
        PrimalDualState::from_residual(&prob, beta, residual, lambda_t, alpha)
    }

    #[test]
    fn bound_collapses_at_same_lambda() {
        let prob = toy();
        let s = dual_point(&prob, &array![0.3, 0.1], 1.2).unwrap();
        let b = warm_start_bound(&s, 1.2, &prob).unwrap();
        assert_abs_diff_eq!(b.e_t, s.gap_local, epsilon = 1e-15);
        assert_eq!(b.v_mu, 0.0);
        assert_eq!(b.v_nu, 0.0);
    }

    #[test]
    fn bound_rejects_increasing_lambda() {
        let prob = toy();
        let s = dual_point(&prob, &array![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(warm_start_bound(&s, 1.5, &prob), Err(Error::Argument(_))));
    }

    #[test]
    fn bound_is_exact_from_an_exact_solution() {
        let prob = toy();
        let s = dual_point(&prob, &array![1.0, 0.0], 1.0).unwrap();
        for lambda in [0.9, 0.5, 0.1] {
            let b = warm_start_bound(&s, lambda, &prob).unwrap();
            let expected = 0.5 * s.zeta_sq_norm() * (1.0 - lambda).powi(2);
            assert_abs_diff_eq!(b.gap_at_target, expected, epsilon = 1e-14);
            assert_abs_diff_eq!(b.v_mu, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn fastpath_without_budget_makes_no_progress() {
        let prob = toy();
        // alpha_t = lambda_t = 2
        let s = state_with(2.0, 2.0, array![1.0, 1.0]);
        let l = next_lambda_fastpath(&s, 0.0, 0.0, &prob, 1.0).unwrap();
        assert_abs_diff_eq!(l, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn fastpath_formula_arithmetic() {
        let prob = toy();
        let s = state_with(2.0, 2.0, array![1.0, 1.0]);
        assert_abs_diff_eq!(fastpath_discriminant(&s, 0.75, 0.0, &prob, 1.0), 0.0625, epsilon = 1e-15);
        let l = next_lambda_fastpath(&s, 0.75, 0.0, &prob, 1.0).unwrap();
        assert_abs_diff_eq!(l, 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fastpath_negative_discriminant_is_a_policy_error() {
        let prob = toy();
        let s = state_with(2.0, 2.0, array![1.0, 1.0]);
        assert!(matches!(next_lambda_fastpath(&s, 0.42, 10.0, &prob, 1.0), Err(Error::Policy(_))));
        let eps = feasible_eps_fastpath(&s, 0.42, 10.0, &prob, 1.0);
        assert!(fastpath_discriminant(&s, 0.42, eps, &prob, 1.0) >= 0.0);
    }

    #[test]
    fn fastpath_zero_residual_jumps_to_target() {
        let prob = toy();
        let s = state_with(2.0, 2.0, array![0.0, 0.0]);
        assert_eq!(next_lambda_fastpath(&s, 0.42, 0.1, &prob, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn fastpath_zero_discriminant_reaches_target() {
        let prob = toy();
        let s = state_with(2.0, 2.0, array![1.0, 1.0]);
        // (1 − r)(1/2)² = 2 eps/‖zeta‖², ‖zeta‖² = 2
        let eps = (1.0 - 0.5) * 0.25;
        assert_eq!(next_lambda_fastpath(&s, 0.5, eps, &prob, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn default_eps_values() {
        let prob = toy();
        let s = state_with(2.0, 2.0, array![1.0, 1.0]);
        assert_eq!(s.zeta_sq_norm(), 2.0);
        assert_abs_diff_eq!(default_eps_fastpath(&s, 0.42, &prob, 1.0), 0.0609, epsilon = 1e-15);
        assert_eq!(default_eps_fastpath(&s, 0.42, &prob, 2.0), 0.0);
    }

    #[test]
    fn stopping_condition_boundary() {
        assert!(stopping_condition_fastpath(1.0, 0.5, 0.0, 0.5));
        assert!(!stopping_condition_fastpath(1.0, 0.5 + 1e-9, 0.0, 0.5));
    }

    #[test]
    fn simplified_recurrence() {
        assert_abs_diff_eq!(next_lambda_simplified(2.0, 1.0, 0.75), 4.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(next_lambda_simplified(2.0, 1.0, 1e-14), 2.0, epsilon = 1e-12);
        let (target, r) = (0.01, 0.3);
        let mut l: f64 = 1.0;
        let mut prev = (1.0 - target / l).powi(2);
        for _ in 0..30 {
            l = next_lambda_simplified(l, target, r);
            let cur = (1.0 - target / l).powi(2);
            assert!((cur - (1.0 - r) * prev).abs() <= 1e-12 * prev.max(1e-300));
            prev = cur;
        }
    }

    #[test]
    fn simplified_tolerance_values() {
        assert_eq!(simplified_tolerance(0.3, 0.3, 1e-6), 1e-6);
        assert_abs_diff_eq!(simplified_tolerance(3.0, 0.3, 1e-6), 1e-5, epsilon = 1e-20);
    }

    #[test]
    fn adaptive_rate_values() {
        let prob = toy();
        assert_eq!(adaptive_r(&prob, 1.0, 1.0), 1.0);
        assert_eq!(adaptive_r(&prob, 2.0, 1.0), 0.5);
        let lambdas = [8.0, 4.0, 3.0, 1.5, 1.0];
        let rs: Vec<f64> = lambdas.iter().map(|l| adaptive_r(&prob, *l, 1.0)).collect();
        assert!(rs.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn clip_values() {
        assert_eq!(clip_targets(0.0, 1.0, 1.0, 1.0), (1e-3, 1.0));
        assert_eq!(clip_targets(5.0, 0.0, 1.0, 2.0), (5.0, 2e-8));
    }

    #[test]
    fn max_grid_size_values() {
        assert_eq!(max_grid_size(1.0, 1.0, 0.5), 0);
        assert_eq!(max_grid_size(1.0, 1e-4, 0.5), 14);
    }

    #[test]
    fn identical_states_certificate() {
        let prob = toy();
        let s = dual_point(&prob, &array![0.4, 0.0], 1.0).unwrap();
        let slack = stepwise_progress_certificate(&s, &s, &prob, 0.5).slack().unwrap();
        let delta = step_decrease_factor(&s, s.lambda, &prob, 0.5);
        assert_abs_diff_eq!(slack, -delta * s.zeta_sq_norm() / 2.0, epsilon = 1e-14);
        assert!(slack >= 0.0);
        let exact = dual_point(&prob, &array![1.0, 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(
            stepwise_progress_certificate(&exact, &exact, &prob, 0.5).slack().unwrap(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn certificate_inapplicable_when_loss_increases() {
        let prob = toy();
        let a = dual_point(&prob, &array![1.0, 0.0], 1.0).unwrap();
        let b = dual_point(&prob, &array![0.0, 0.0], 0.8).unwrap();
        assert_eq!(stepwise_progress_certificate(&a, &b, &prob, 0.5), ProgressCertificate::Inapplicable);
    }

    #[test]
    fn certificate_nonnegative_between_exact_solutions() {
        // X = I: exact solutions are soft-thresholds of y
        let prob = toy();
        let st = |l: f64| array![(2.0f64 - l).max(0.0), (0.5f64 - l).max(0.0)];
        let target = 0.1;
        let lambdas = [1.5, 1.0, 0.6, 0.3, 0.1];
        for w in lambdas.windows(2) {
            let a = dual_point(&prob, &st(w[0]), w[0]).unwrap();
            let b = dual_point(&prob, &st(w[1]), w[1]).unwrap();
            assert_abs_diff_eq!(a.alpha, a.lambda, epsilon = 1e-12);
            let slack = stepwise_progress_certificate(&a, &b, &prob, target).slack().unwrap();
            assert!(slack >= -1e-14, "slack {slack}");
        }
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(10.0, 0.1, &GeometricGrid::Size(5)).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 10.0);
        assert_eq!(g[4], 0.1);
        assert_abs_diff_eq!(g[2], 1.0, epsilon = 1e-12);
        let g = geometric_grid(10.0, 0.1, &GeometricGrid::Ratio(0.5)).unwrap();
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*g.last().unwrap(), 0.1);
    }

    #[test]
    fn refine_keeps_close_points() {
        let policy = PathPolicy::new(
            PolicyKind::Prescribed { grid: vec![1.0, 0.99], refine: Some(Box::new(PolicyKind::Simplified { r: 0.5 })) },
            0.99,
            1e-6,
        )
        .unwrap();
        let out = prescribed_grid_refine(&[1.0, 0.99], &policy).unwrap();
        assert_eq!(out, vec![(1.0, 1e-6), (0.99, 1e-6)]);
    }

    #[test]
    fn refine_inserts_recurrence_points() {
        let grid = [100.0, 1.0];
        let policy = PathPolicy::new(
            PolicyKind::Prescribed { grid: grid.to_vec(), refine: Some(Box::new(PolicyKind::Simplified { r: 0.5 })) },
            1.0,
            1e-6,
        )
        .unwrap();
        let out = prescribed_grid_refine(&grid, &policy).unwrap();
        assert!(out.len() > 3);
        assert_eq!(out.first().unwrap().0, 100.0);
        assert_eq!(out.last().unwrap().0, 1.0);
        let lambdas: Vec<f64> = out.iter().map(|x| x.0).collect();
        for w in lambdas[..lambdas.len() - 1].windows(2) {
            let lhs = (1.0 - 1.0 / w[1]).powi(2);
            let rhs = 0.5 * (1.0 - 1.0 / w[0]).powi(2);
            assert!((lhs - rhs).abs() <= 1e-12);
        }
        assert!(lambdas.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn refine_singleton_and_bad_grids() {
        let policy = PathPolicy::new(PolicyKind::Simplified { r: 0.5 }, 1.0, 1e-3).unwrap();
        assert_eq!(prescribed_grid_refine(&[2.0], &policy).unwrap(), vec![(2.0, 1e-3)]);
        assert!(prescribed_grid_refine(&[1.0, 2.0], &policy).is_err());
        let fp = PathPolicy::fastpath(1.0, 1e-3).unwrap();
        assert!(matches!(prescribed_grid_refine(&[2.0, 1.0], &fp), Err(Error::Policy(_))));
    }

    #[test]
    fn policy_validation() {
        assert!(PathPolicy::new(PolicyKind::FastPath { r: 1.2 }, 1.0, 1e-3).is_err());
        assert!(PathPolicy::new(PolicyKind::Geometric(GeometricGrid::Ratio(1.5)), 1.0, 1e-3).is_err());
        assert!(PathPolicy::new(PolicyKind::Prescribed { grid: vec![1.0, 1.0], refine: None }, 1.0, 1e-3).is_err());
    }
}
