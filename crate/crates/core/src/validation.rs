//! Randomized invariant suites behind `contpath validate`.
//!
//! Trial `k` of a run with seed `S` uses instance seed `S + k`, so
//! `--seed S+k --trials 1` replays a reported violation.

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::active_control::{next_lambda_for_size, ordered_features, sequential_active_size};
use crate::continuation::{max_grid_size, stepwise_progress_certificate, warm_start_bound, PathPolicy, PolicyKind};
use crate::data_io::generate_synthetic;
use crate::error::{Error, Result};
use crate::problem::{dual_point, PrimalDualState, Problem};
use crate::screening::{feature_distances, gap_safe_screen, sequential_screen, support_path_threshold};
use crate::solver::{run_path, solve_subproblem, InnerSolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    WarmStartBound,
    StepwiseProgress,
    LinearRate,
    ScreeningSafety,
    SizeControl,
}

impl Suite {
    pub const ALL: [Suite; 5] =
        [Suite::WarmStartBound, Suite::StepwiseProgress, Suite::LinearRate, Suite::ScreeningSafety, Suite::SizeControl];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::WarmStartBound => "warm-start-bound",
            Suite::StepwiseProgress => "stepwise-progress",
            Suite::LinearRate => "linear-rate",
            Suite::ScreeningSafety => "screening-safety",
            Suite::SizeControl => "size-control",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown suite '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub checks: usize,
    pub violations: Vec<Violation>,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.violations.is_empty() { "ok" } else { "FAIL" };
        write!(
            f,
            "{:<18} {status:<4} trials={} checks={} violations={}",
            self.suite.name(),
            self.trials,
            self.checks,
            self.violations.len()
        )
    }
}

pub fn run_suites(suites: &[Suite], trials: usize, seed: u64) -> Result<Vec<SuiteReport>> {
    suites.iter().map(|s| run_suite(*s, trials, seed)).collect()
}

pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport { suite, trials, checks: 0, violations: Vec::new() };
    for k in 0..trials {
        let s = seed.wrapping_add(k as u64);
        let mut rng = SplitMix64::seed_from_u64(s ^ 0x9e37_79b9_7f4a_7c15);
        let outcome = match suite {
            Suite::WarmStartBound => warm_start_trial(&mut rng, s),
            Suite::StepwiseProgress => stepwise_trial(&mut rng, s),
            Suite::LinearRate => linear_rate_trial(&mut rng, s),
            Suite::ScreeningSafety => screening_trial(&mut rng, s),
            Suite::SizeControl => size_control_trial(&mut rng, s),
        }?;
        report.checks += outcome.checks;
        report.violations.extend(outcome.failures.into_iter().map(|detail| Violation { seed: s, detail }));
    }
    Ok(report)
}

#[derive(Default)]
struct Trial {
    checks: usize,
    failures: Vec<String>,
}

impl Trial {
    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(detail());
        }
    }
}

fn uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn range(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

/// Gaussian design with `y` rescaled to unit norm.
pub fn unit_instance(n: usize, p: usize, seed: u64) -> Result<Problem> {
    let prob = generate_synthetic(n, p, 0.5, 0.5, seed)?;
    let norm = prob.y().dot(prob.y()).sqrt();
    let y = if norm > 0.0 { prob.y() / norm } else { prob.y().clone() };
    Problem::new(prob.x().clone(), y)
}

fn random_beta(rng: &mut SplitMix64, p: usize) -> Array1<f64> {
    (0..p).map(|_| if uniform(rng) < 0.6 { 0.0 } else { 2.0 * uniform(rng) - 1.0 }).collect()
}

/// CD solve from zero to an absolute gap `tol`.
pub fn oracle_solve(prob: &Problem, lambda: f64, tol: f64) -> Result<PrimalDualState> {
    let cfg = InnerSolverConfig { gap_check_every: 1, max_epochs: 1_000_000, ..Default::default() };
    Ok(solve_subproblem(prob, &Array1::zeros(prob.p()), lambda, tol, &cfg, None)?.state)
}

fn warm_start_trial(rng: &mut SplitMix64, seed: u64) -> Result<Trial> {
    let mut t = Trial::default();
    let prob = unit_instance(range(rng, 2, 30), range(rng, 2, 50), seed)?;
    let loose = prob.clone().with_regularity(0.5, 2.0)?;
    let beta = random_beta(rng, prob.p());
    let lambda_t = prob.lambda_max() * (0.05 + 0.95 * uniform(rng));
    let lambda = lambda_t * (0.01 + 0.99 * uniform(rng));
    for pr in [&prob, &loose] {
        let state = dual_point(pr, &beta, lambda_t)?;
        let b = warm_start_bound(&state, lambda, pr)?;
        t.check(b.holds(1e-9), || format!("sandwich fails: v_nu={} mid={} v_mu={}", b.v_nu, b.gap_at_target - b.e_t, b.v_mu));
    }
    let state = dual_point(&prob, &beta, lambda_t)?;
    let b = warm_start_bound(&state, lambda, &prob)?;
    let err = (b.gap_at_target - b.e_t - b.v_mu).abs();
    t.check(err <= 1e-9 * (1.0 + b.gap_at_target.abs()), || format!("equality case off by {err:e}"));
    Ok(t)
}

fn stepwise_trial(rng: &mut SplitMix64, seed: u64) -> Result<Trial> {
    let mut t = Trial::default();
    let prob = unit_instance(range(rng, 5, 30), range(rng, 5, 50), seed)?;
    let lm = prob.lambda_max();
    let l1 = lm * (0.3 + 0.6 * uniform(rng));
    let l2 = l1 * (0.5 + 0.45 * uniform(rng));
    let target = l2 * (0.2 + 0.8 * uniform(rng));
    let tol = 10f64.powf(-3.0 - 6.0 * uniform(rng));
    let cfg = InnerSolverConfig::default();
    let a = solve_subproblem(&prob, &Array1::zeros(prob.p()), l1, tol, &cfg, None)?.state;
    let b = solve_subproblem(&prob, &a.beta, l2, tol, &cfg, None)?.state;
    if let Some(slack) = stepwise_progress_certificate(&a, &b, &prob, target).slack() {
        let g = a.gap_at(target);
        t.check(slack >= -1e-9 * (1.0 + g), || format!("stepwise slack {slack:e}"));
    }
    Ok(t)
}

fn linear_rate_trial(rng: &mut SplitMix64, seed: u64) -> Result<Trial> {
    let mut t = Trial::default();
    let prob = generate_synthetic(range(rng, 10, 40), range(rng, 10, 60), 0.8, 1.0, seed)?;
    let r = 0.42;
    let eps = 1e-6;
    let policy = PathPolicy::new(PolicyKind::FastPath { r }, prob.lambda_max() / 100.0, eps)?;
    let res = run_path(&prob, &policy, &InnerSolverConfig::default())?;
    let g0 = res.trace.steps[0].gap_target;
    for c in &res.trace.certificates {
        t.check(c.gap_after <= (1.0 - r) * c.gap_before + 1e-9 * g0, || {
            format!("step {}: {} > (1-r) {}", c.t, c.gap_after, c.gap_before)
        });
    }
    let steps = res.trace.steps.len() - 1;
    let bound = max_grid_size(g0, eps, r);
    t.check(steps <= bound, || format!("{steps} steps > bound {bound}"));
    t.check(res.final_gap() <= eps, || format!("final gap {:e}", res.final_gap()));
    Ok(t)
}

fn screening_trial(rng: &mut SplitMix64, seed: u64) -> Result<Trial> {
    let mut t = Trial::default();
    let prob = unit_instance(range(rng, 3, 20), range(rng, 3, 30), seed)?;
    let lm = prob.lambda_max();
    let l1 = lm * (0.2 + 0.7 * uniform(rng));
    let l2 = l1 * (0.5 + 0.49 * uniform(rng));
    let oracle1 = oracle_solve(&prob, l1, 1e-14)?;
    let oracle2 = oracle_solve(&prob, l2, 1e-14)?;
    let cfg = InnerSolverConfig { dynamic_screening: false, ..Default::default() };
    for tol in [1e-2, 1e-6, 1e-12] {
        let it = solve_subproblem(&prob, &Array1::zeros(prob.p()), l1, tol, &cfg, None)?.state;
        let rep = gap_safe_screen(&prob, &it, l1);
        for j in 0..prob.p() {
            t.check(!(rep.screened[j] && oracle1.beta[j].abs() > 1e-8), || {
                format!("gap-safe screened feature {j} (beta={}) at gap {tol:e}", oracle1.beta[j])
            });
        }
        let seq = sequential_screen(&prob, &it, l2);
        let thr = support_path_threshold(&it, l2, &prob);
        for j in 0..prob.p() {
            t.check(!(seq.screened[j] && oracle2.beta[j].abs() > 1e-8), || {
                format!("sequential rule screened feature {j} (beta={})", oracle2.beta[j])
            });
            t.check(!(seq.distances[j] > thr && oracle2.beta[j].abs() > 1e-8), || {
                format!("support-path threshold excluded feature {j}")
            });
        }
    }
    Ok(t)
}

fn size_control_trial(rng: &mut SplitMix64, seed: u64) -> Result<Trial> {
    let mut t = Trial::default();
    let prob = unit_instance(range(rng, 5, 20), range(rng, 5, 30), seed)?;
    let lambda_t = prob.lambda_max() * (0.3 + 0.6 * uniform(rng));
    let target = lambda_t * 0.1;
    let state = oracle_solve(&prob, lambda_t, 1e-13)?;
    let d = feature_distances(&prob, state.theta.as_slice().unwrap());
    let current = gap_safe_screen(&prob, &state, lambda_t).active.len();
    let p_t = current + 1;
    if p_t > prob.p() {
        return Ok(t);
    }
    let order = ordered_features(&d);
    let tie = |k: usize| k < order.len() && (d[order[k]] - d[order[k - 1]]).abs() <= 1e-9;
    if p_t >= 2 && (tie(p_t - 1) || tie(p_t)) {
        return Ok(t);
    }
    match next_lambda_for_size(&state, p_t, &prob, target) {
        Ok(step) => {
            let reached = sequential_active_size(&state, &d, step.reach_at, &prob);
            t.check(step.reach_at == target || reached >= p_t, || format!("|A| = {reached} < {p_t} at reach_at"));
            let above = step.keep_below * (1.0 + 1e-6);
            if above < lambda_t {
                let size = sequential_active_size(&state, &d, above, &prob);
                t.check(size < p_t, || format!("|A| = {size} >= {p_t} above keep_below"));
            }
        }
        Err(Error::SizeControlInfeasible { .. }) => {}
        Err(e) => return Err(e),
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_a_few_trials() {
        for suite in Suite::ALL {
            let rep = run_suite(suite, 3, 11).unwrap();
            assert!(rep.violations.is_empty(), "{rep}: {:?}", rep.violations);
            assert!(rep.checks > 0 || suite == Suite::SizeControl);
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for suite in Suite::ALL {
            assert_eq!(suite.name().parse::<Suite>().unwrap(), suite);
        }
        assert!("nope".parse::<Suite>().is_err());
    }
}
