//! Choosing the next lambda from a requested size of the safe active set, and
//! pathwise (unsafe) working sets.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{PrimalDualState, Problem};
use crate::screening::{error_envelopes, feature_distances, safe_radius, sequential_radius};

/// Relative clearance of `reach_at` inside the safe ball.
const REACH_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SizeMode {
    /// `p_{t+1} = |A_t| + k`.
    FixedIncrement(usize),
    /// Explicit non-decreasing sizes; the last one repeats once exhausted.
    Targets(Vec<usize>),
    /// `p_{t+1} = |A_t| + 1`.
    LarsLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSchedule {
    pub mode: SizeMode,
    /// Upper bound on any target; `0` means `p`.
    pub cap: usize,
}

impl SizeSchedule {
    pub fn new(mode: SizeMode) -> Self {
        SizeSchedule { mode, cap: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.mode {
            SizeMode::FixedIncrement(0) => Err(Error::Policy("size increment must be at least 1".into())),
            SizeMode::Targets(t) if t.is_empty() => Err(Error::Policy("empty size schedule".into())),
            SizeMode::Targets(t) if t.windows(2).any(|w| w[1] < w[0]) => {
                Err(Error::Policy("size schedule must be non-decreasing".into()))
            }
            _ => Ok(()),
        }
    }

    /// Target for step `step` (0-based) given the current active-set size;
    /// always in `[current, cap]`.
    pub fn next_target(&self, step: usize, current: usize, p: usize) -> usize {
        let cap = if self.cap == 0 { p } else { self.cap.min(p) };
        let raw = match &self.mode {
            SizeMode::FixedIncrement(k) => current + k,
            SizeMode::LarsLike => current + 1,
            SizeMode::Targets(t) => t[step.min(t.len() - 1)],
        };
        raw.max(current).min(cap.max(current))
    }
}

impl FromStr for SizeSchedule {
    type Err = Error;

    /// Parses `fixed:k`, `targets:p1,p2,...` or `lars`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mode = if s == "lars" {
            SizeMode::LarsLike
        } else if let Some(k) = s.strip_prefix("fixed:") {
            SizeMode::FixedIncrement(k.trim().parse().map_err(|_| Error::arg(format!("bad increment in '{s}'")))?)
        } else if let Some(list) = s.strip_prefix("targets:") {
            let t = list
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::arg(format!("bad size list in '{s}'")))?;
            SizeMode::Targets(t)
        } else {
            return Err(Error::arg(format!("unknown size schedule '{s}' (expected fixed:k, targets:..., lars)")));
        };
        let schedule = SizeSchedule::new(mode);
        schedule.validate()?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkingSetOrigin {
    PathwiseUnsafe,
    GapSafe,
    StrongRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkingSet {
    pub indices: Vec<usize>,
    pub threshold: f64,
    pub origin: WorkingSetOrigin,
}

/// `W(beta, gamma) = {j : |X_j^T ∇f(Xβ)| ≥ gamma}`.
pub fn working_set(prob: &Problem, beta: &[f64], gamma: f64) -> WorkingSet {
    let residual = prob.residual(beta);
    working_set_from_residual(prob, residual.as_slice().expect("contiguous"), gamma)
}

/// Same as [`working_set`] with `y − Xβ` already available (`|X_j^T ∇f| = |X_j^T r|`).
pub fn working_set_from_residual(prob: &Problem, residual: &[f64], gamma: f64) -> WorkingSet {
    let indices = (0..prob.p()).filter(|&j| prob.x().col_dot(j, residual).abs() >= gamma).collect();
    WorkingSet { indices, threshold: gamma, origin: WorkingSetOrigin::PathwiseUnsafe }
}

/// Thresholds of the membership rules for one feature; `None` marks an
/// inapplicable rule (non-positive radicand).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipBounds {
    /// `lambda' ≤ lo ⇒ j ∈ A_t(lambda')`.
    pub lo: Option<f64>,
    /// `j ∈ A_t(lambda') ⇒ lambda' ≤ hi`.
    pub hi: Option<f64>,
}

fn threshold(lambda_t: f64, theta_norm: f64, radicand: f64) -> Option<f64> {
    (radicand > 0.0).then(|| lambda_t * theta_norm / (theta_norm + radicand.sqrt()))
}

/// Both membership thresholds of feature `j`, with the error envelopes taken
/// down to `target`.
pub fn lambda_bounds_for_membership(
    state: &PrimalDualState,
    j: usize,
    prob: &Problem,
    target: f64,
) -> Result<MembershipBounds> {
    if j >= prob.p() {
        return Err(Error::arg(format!("feature {j} out of range (p = {})", prob.p())));
    }
    let d = feature_distances(prob, state.theta.as_slice().expect("contiguous"))[j];
    Ok(membership_from_distance(state, d, prob, target))
}

fn membership_from_distance(state: &PrimalDualState, d: f64, prob: &Problem, target: f64) -> MembershipBounds {
    if d <= 0.0 {
        return MembershipBounds { lo: Some(state.lambda), hi: Some(state.lambda) };
    }
    let (mu, nu) = (prob.mu(), prob.nu());
    let (e_lo, e_hi) = error_envelopes(state, target);
    let tn = state.theta_norm();
    MembershipBounds {
        lo: threshold(state.lambda, tn, d * d - 2.0 * nu * e_lo),
        hi: threshold(state.lambda, tn, mu / nu * (d * d - 2.0 * nu * e_hi)),
    }
}

/// `λ_{t+1}` candidates for a safe active set of size `p_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeStep {
    /// Any `lambda' > keep_below` leaves `|A_t(lambda')| < p_t`.
    pub keep_below: f64,
    /// Any `lambda' ≤ reach_at` gives `|A_t(lambda')| ≥ p_t`.
    pub reach_at: f64,
}

/// Feature indices sorted by `(d_j, j)`.
pub fn ordered_features(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order
}

/// `|A_t(lambda')|` with `A_t(lambda') = {j : d_j(theta_t) ≤ r_t(lambda')}`.
pub fn sequential_active_size(state: &PrimalDualState, distances: &[f64], lambda_prime: f64, prob: &Problem) -> usize {
    let r = sequential_radius(state, lambda_prime, prob);
    distances.iter().filter(|d| **d <= r).count()
}

/// Thresholds for `p_t`, the requested size (1-based rank in the ordered
/// distances). Both values are clamped into `[target, lambda_t]`.
pub fn next_lambda_for_size(state: &PrimalDualState, p_t: usize, prob: &Problem, target: f64) -> Result<SizeStep> {
    let distances = feature_distances(prob, state.theta.as_slice().expect("contiguous"));
    next_lambda_for_size_with(state, &distances, p_t, prob, target)
}

pub fn next_lambda_for_size_with(
    state: &PrimalDualState,
    distances: &[f64],
    p_t: usize,
    prob: &Problem,
    target: f64,
) -> Result<SizeStep> {
    if p_t == 0 || p_t > prob.p() {
        return Err(Error::arg(format!("size target {p_t} outside [1, {}]", prob.p())));
    }
    if !(target > 0.0 && target <= state.lambda) {
        return Err(Error::arg(format!("target {target} must lie in (0, lambda_t = {}]", state.lambda)));
    }
    let order = ordered_features(distances);
    let d = distances[order[p_t - 1]];
    if !d.is_finite() {
        return Err(Error::SizeControlInfeasible { target: p_t });
    }
    let bounds = membership_from_distance(state, d, prob, target);
    let (Some(lo), Some(hi)) = (bounds.lo, bounds.hi) else {
        return Err(Error::SizeControlInfeasible { target: p_t });
    };
    let clamp = |l: f64| l.clamp(target, state.lambda);
    let mut reach = clamp(lo);
    // the closed form sits on the boundary d = r; step inward until the ball
    // built from the gap minus its rounding error still reaches d
    let inside = |l: f64| {
        let gap = state.gap_at(l) - state.gap_rounding(l);
        d <= safe_radius(gap, l, prob.nu()) * (1.0 - REACH_MARGIN)
    };
    let mut step = 2f64.powi(-44);
    while reach > target && !inside(reach) && step < 1e-3 {
        reach = clamp(reach * (1.0 - step));
        step *= 2.0;
    }
    Ok(SizeStep { keep_below: clamp(hi), reach_at: reach })
}
