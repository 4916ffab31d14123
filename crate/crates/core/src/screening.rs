//! Gap-safe and sequential screening, error envelopes and the strong rule.
//!
//! A feature `j` is screened out at `lambda` when the safe ball around `theta`
//! cannot reach the boundary of its constraint: `d_j > r(lambda)` with
//! `d_j = (1 − |X_j^T theta|)/‖X_j‖`.

use crate::continuation::estimation_term;
use crate::problem::{PrimalDualState, Problem};

/// Ball `B(center, radius)` known to contain the dual optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeRegion {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningReport {
    pub distances: Vec<f64>,
    pub radius: f64,
    /// `screened[j] ⟺ d_j > radius`.
    pub screened: Vec<bool>,
    /// Complement of `screened`, in increasing order.
    pub active: Vec<usize>,
    pub e_lo: f64,
    pub e_hi: f64,
}

impl ScreeningReport {
    fn build(distances: Vec<f64>, radius: f64, (e_lo, e_hi): (f64, f64)) -> Self {
        let screened: Vec<bool> = distances.iter().map(|d| *d > radius).collect();
        let active = (0..distances.len()).filter(|&j| !screened[j]).collect();
        ScreeningReport { distances, radius, screened, active, e_lo, e_hi }
    }

    pub fn n_screened(&self) -> usize {
        self.distances.len() - self.active.len()
    }
}

/// `d_j = (1 − |X_j^T theta|)/‖X_j‖`, `+∞` for zero columns.
pub fn feature_distances(prob: &Problem, theta: &[f64]) -> Vec<f64> {
    let corr: Vec<f64> = (0..prob.p()).map(|j| prob.x().col_dot(j, theta)).collect();
    distances_from_correlations(prob, &corr)
}

/// Distances from precomputed correlations `X_j^T theta`.
pub fn distances_from_correlations(prob: &Problem, corr: &[f64]) -> Vec<f64> {
    corr.iter()
        .enumerate()
        .map(|(j, c)| {
            let norm = prob.x().col_norm(j);
            if norm == 0.0 {
                f64::INFINITY
            } else {
                (1.0 - c.abs()) / norm
            }
        })
        .collect()
}

/// `r(lambda) = sqrt(2 nu Gap / lambda²)`.
pub fn safe_radius(gap: f64, lambda: f64, nu: f64) -> f64 {
    (2.0 * nu * gap.max(0.0)).sqrt() / lambda
}

/// Gap-safe rule at `lambda`, with the gap of the state's pair recomputed at `lambda`.
pub fn gap_safe_screen(prob: &Problem, state: &PrimalDualState, lambda: f64) -> ScreeningReport {
    let distances = feature_distances(prob, state.theta.as_slice().expect("contiguous"));
    let radius = safe_radius(state.gap_at(lambda) + state.gap_rounding(lambda), lambda, prob.nu());
    ScreeningReport::build(distances, radius, error_envelopes(state, lambda.min(state.lambda)))
}

/// Safe radius at `lambda_next` from the previous pair, before any inner
/// iteration: `sqrt(2 nu Gap_{lambda_next}(beta_t, theta_t)) / lambda_next`.
/// Both safe rules pad the gap by its rounding error so that a gap computed
/// as zero never yields a zero radius.
pub fn sequential_radius(state: &PrimalDualState, lambda_next: f64, prob: &Problem) -> f64 {
    let gap = state.gap_at(lambda_next) + state.gap_rounding(lambda_next);
    safe_radius(gap, lambda_next, prob.nu())
}

pub fn sequential_region(state: &PrimalDualState, lambda_next: f64, prob: &Problem) -> SafeRegion {
    SafeRegion { center: state.theta.to_vec(), radius: sequential_radius(state, lambda_next, prob) }
}

/// `A_t(lambda_next)`: features kept by the sequential rule at `lambda_next`.
pub fn sequential_screen(prob: &Problem, state: &PrimalDualState, lambda_next: f64) -> ScreeningReport {
    let distances = feature_distances(prob, state.theta.as_slice().expect("contiguous"));
    let radius = sequential_radius(state, lambda_next, prob);
    ScreeningReport::build(distances, radius, error_envelopes(state, lambda_next.min(state.lambda)))
}

/// `sqrt(2 nu E_t(lambda')/lambda'² + (nu/mu)‖zeta_t‖² (1/lambda' − 1/lambda_t)²)`:
/// features with `d_j` above this stay inactive at `lambda'`.
pub fn support_path_threshold(state: &PrimalDualState, lambda_prime: f64, prob: &Problem) -> f64 {
    let (mu, nu) = (prob.mu(), prob.nu());
    let e = estimation_term(state, lambda_prime).max(0.0);
    let inv = 1.0 / lambda_prime - 1.0 / state.lambda;
    (2.0 * nu * e / (lambda_prime * lambda_prime) + nu / mu * state.zeta_sq_norm() * inv * inv).sqrt()
}

/// `(E', E'')` down to `lambda`:
/// `E' = Gap_t/lambda_t² + (1/lambda² − 1/lambda_t²) min(0, Delta_t)`,
/// `E'' = Gap_t/(lambda lambda_t) + (1/lambda² − 1/lambda_t²) max(0, Delta_t)`.
pub fn error_envelopes(state: &PrimalDualState, lambda: f64) -> (f64, f64) {
    let lt = state.lambda;
    let w = 1.0 / (lambda * lambda) - 1.0 / (lt * lt);
    let lo = state.gap_local / (lt * lt) + w * state.delta_t.min(0.0);
    let hi = state.gap_local / (lambda * lt) + w * state.delta_t.max(0.0);
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriteria {
    /// Negation of `E'' < min_{j ∉ A_t} d_j² / (2 nu)`.
    pub keep_optimizing: bool,
    /// `E_t(lambda_next) ≤ c ‖zeta_t‖² (1 − lambda_next/lambda_t)² / (2 mu)`.
    pub screening_saturated: bool,
}

/// Both stopping rules. `report` holds `A_t(lambda_t)`; `E''` is taken down to `lambda_next`.
pub fn screening_stop_criteria(
    report: &ScreeningReport,
    state: &PrimalDualState,
    lambda_next: f64,
    prob: &Problem,
    c: f64,
) -> StopCriteria {
    let min_d2 = report
        .distances
        .iter()
        .zip(&report.screened)
        .filter(|(_, s)| **s)
        .map(|(d, _)| d * d)
        .fold(f64::INFINITY, f64::min);
    let (_, e_hi) = error_envelopes(state, lambda_next);
    let e = estimation_term(state, lambda_next);
    let step = 1.0 - lambda_next / state.lambda;
    StopCriteria {
        keep_optimizing: !(e_hi < min_d2 / (2.0 * prob.nu())),
        screening_saturated: e <= c * state.zeta_sq_norm() * step * step / (2.0 * prob.mu()),
    }
}

/// Sequential strong rule: returns the discarded `j` with
/// `|X_j^T theta_t| < (2 lambda_next − lambda_t)/lambda_t`. Heuristic, not safe.
pub fn strong_rule_screen(prob: &Problem, theta_t: &[f64], lambda_t: f64, lambda_next: f64) -> Vec<usize> {
    let threshold = (2.0 * lambda_next - lambda_t) / lambda_t;
    (0..prob.p()).filter(|&j| prob.x().col_dot(j, theta_t).abs() < threshold).collect()
}
