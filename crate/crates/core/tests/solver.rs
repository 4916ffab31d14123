use approx::assert_relative_eq;
use contpath::continuation::{
    geometric_grid, snap_to_target, warm_start_bound, GeometricGrid, PathPolicy, PolicyKind,
};
use contpath::problem::{dual_infeasibility, dual_point, duality_gap, eval_dual, eval_primal};
use contpath::screening::gap_safe_screen;
use contpath::solver::{run_path, soft_threshold, solve_subproblem, InnerMethod, InnerSolverConfig};
use contpath::{DesignMatrix, Problem};
use ndarray::Array1;
use proptest::prelude::*;

fn problem(n: usize, p: usize, x: &[f64], y: &[f64]) -> Problem {
    let x = DesignMatrix::from_row_major(n, p, x).unwrap();
    Problem::new(x, Array1::from(y.to_vec())).unwrap()
}

/// Plain cyclic coordinate descent on dense row-major data, run for a fixed
/// number of sweeps. Independent of the library solver.
fn reference_cd(n: usize, p: usize, x: &[f64], y: &[f64], lambda: f64, sweeps: usize) -> Vec<f64> {
    let col = |j: usize| (0..n).map(move |i| x[i * p + j]);
    let norms: Vec<f64> = (0..p).map(|j| col(j).map(|v| v * v).sum()).collect();
    let mut beta = vec![0.0; p];
    let mut r = y.to_vec();
    for _ in 0..sweeps {
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let rho: f64 = col(j).zip(&r).map(|(a, b)| a * b).sum::<f64>() + norms[j] * beta[j];
            let new = rho.signum() * (rho.abs() - lambda).max(0.0) / norms[j];
            let d = new - beta[j];
            if d != 0.0 {
                for (i, ri) in r.iter_mut().enumerate() {
                    *ri -= d * x[i * p + j];
                }
                beta[j] = new;
            }
        }
    }
    beta
}

fn instance() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (2usize..12, 1usize..16).prop_flat_map(|(n, p)| {
        (
            Just(n),
            Just(p),
            prop::collection::vec(-2.0f64..2.0, n * p),
            prop::collection::vec(-3.0f64..3.0, n),
        )
    })
}

fn instance_with_beta() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    instance().prop_flat_map(|(n, p, x, y)| {
        (Just(n), Just(p), Just(x), Just(y), prop::collection::vec(prop_oneof![Just(0.0), -1.5f64..1.5], p))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_threshold_is_the_l1_prox(x in -10.0f64..10.0, tau in 0.0f64..5.0) {
        let s = soft_threshold(x, tau);
        prop_assert!(s == 0.0 || s.signum() == x.signum());
        prop_assert!((s.abs() - (x.abs() - tau).max(0.0)).abs() <= 1e-12);
        // no point does better on ½(z − x)² + tau|z|
        let obj = |z: f64| 0.5 * (z - x).powi(2) + tau * z.abs();
        for dz in [-1e-3, 1e-3, -0.5, 0.5] {
            prop_assert!(obj(s) <= obj(s + dz) + 1e-12);
        }
    }

    #[test]
    fn rescaled_dual_is_feasible_and_gap_nonnegative(
        (n, p, x, y, beta) in instance_with_beta(),
        frac in 0.01f64..1.5,
    ) {
        let prob = problem(n, p, &x, &y);
        prop_assume!(prob.lambda_max() > 1e-6);
        let lambda = frac * prob.lambda_max();
        let beta = Array1::from(beta);
        let state = dual_point(&prob, &beta, lambda).unwrap();
        prop_assert!(dual_infeasibility(&prob, state.theta.as_slice().unwrap()) <= 1e-10);
        prop_assert!(state.alpha >= lambda);
        prop_assert!(state.gap_local >= 0.0);
        let direct = eval_primal(&prob, &beta, lambda).unwrap() - eval_dual(&prob, &state.theta, lambda).unwrap();
        prop_assert!((direct - state.gap_local).abs() <= 1e-9 * (1.0 + direct.abs()), "{} vs {}", direct, state.gap_local);
        let g = duality_gap(&prob, &beta, &state.theta, lambda).unwrap();
        prop_assert!(g >= 0.0);
    }

    #[test]
    fn warm_start_sandwich_is_tight_for_quadratic_loss(
        (n, p, x, y, beta) in instance_with_beta(),
        a in 0.05f64..1.0,
        b in 0.01f64..1.0,
    ) {
        let prob = problem(n, p, &x, &y);
        prop_assume!(prob.lambda_max() > 1e-6);
        let lambda_t = a * prob.lambda_max();
        let lambda = b * lambda_t;
        let state = dual_point(&prob, &Array1::from(beta), lambda_t).unwrap();
        let w = warm_start_bound(&state, lambda, &prob).unwrap();
        prop_assert!(w.holds(1e-9));
        // mu = nu = 1: both sides coincide with the middle term
        let middle = w.gap_at_target - w.e_t;
        prop_assert!((middle - w.v_mu).abs() <= 1e-9 * (1.0 + w.gap_at_target.abs() + w.v_mu));
    }

    #[test]
    fn gap_safe_screening_never_drops_the_support(
        (n, p, x, y, beta) in instance_with_beta(),
        frac in 0.05f64..0.95,
    ) {
        let prob = problem(n, p, &x, &y);
        prop_assume!(prob.lambda_max() > 1e-6);
        let lambda = frac * prob.lambda_max();
        let exact = reference_cd(n, p, &x, &y, lambda, 20_000);
        let exact_state = dual_point(&prob, &Array1::from(exact.clone()), lambda).unwrap();
        prop_assume!(exact_state.gap_local <= 1e-12);
        let state = dual_point(&prob, &Array1::from(beta), lambda).unwrap();
        let report = gap_safe_screen(&prob, &state, lambda);
        for j in 0..p {
            prop_assert!(!(report.screened[j] && exact[j].abs() > 1e-9), "feature {} screened but beta* = {}", j, exact[j]);
        }
    }

    #[test]
    fn geometric_grids_decrease_to_the_target(size in 2usize..40, ratio in 0.001f64..0.9) {
        let target = 0.5;
        let grid = geometric_grid(10.0, target, &GeometricGrid::Size(size)).unwrap();
        prop_assert_eq!(grid.len(), size);
        prop_assert_eq!(grid[0], 10.0);
        prop_assert_eq!(*grid.last().unwrap(), target);
        prop_assert!(grid.windows(2).all(|w| w[1] < w[0]));
        let grid = geometric_grid(10.0, target, &GeometricGrid::Ratio(ratio)).unwrap();
        prop_assert_eq!(*grid.last().unwrap(), target);
        prop_assert!(grid.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn snapping_stays_between_target_and_current(next in 0.0f64..20.0, target in 0.1f64..5.0, extra in 0.0f64..10.0) {
        let current = target + extra;
        let s = snap_to_target(next, target, current);
        prop_assert!(s >= target && s <= current);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fastpath_runs_certify_the_target((n, p, x, y) in instance(), r in 0.1f64..0.9) {
        let prob = problem(n, p, &x, &y);
        prop_assume!(prob.lambda_max() > 1e-6);
        let target = prob.lambda_max() * 0.05;
        let policy = PathPolicy::new(PolicyKind::FastPath { r }, target, 1e-7).unwrap();
        let res = run_path(&prob, &policy, &InnerSolverConfig::default()).unwrap();
        prop_assert!(res.final_gap() <= 1e-7);
        prop_assert_eq!(res.final_state.lambda, target);
        prop_assert!(res.trace.steps.windows(2).all(|w| w[1].lambda < w[0].lambda));
        let direct = duality_gap(&prob, &res.final_state.beta, &res.final_state.theta, target).unwrap();
        prop_assert!(direct <= 1e-7 + 1e-12);
    }
}

fn synthetic() -> (usize, usize, Vec<f64>, Vec<f64>) {
    let prob = contpath::data_io::generate_synthetic(40, 60, 0.8, 0.5, 11).unwrap();
    let x = contpath::data_io::to_row_major(prob.x());
    (40, 60, x, prob.y().to_vec())
}

#[test]
fn library_solver_matches_reference_cd() {
    let (n, p, x, y) = synthetic();
    let prob = problem(n, p, &x, &y);
    let lambda = prob.lambda_max() * 0.1;
    let reference = reference_cd(n, p, &x, &y, lambda, 5000);
    let out = solve_subproblem(&prob, &Array1::zeros(p), lambda, 1e-12, &InnerSolverConfig::default(), None).unwrap();
    for (a, b) in out.state.beta.iter().zip(&reference) {
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }
    let pa = eval_primal(&prob, &out.state.beta, lambda).unwrap();
    let pb = eval_primal(&prob, &Array1::from(reference), lambda).unwrap();
    assert_relative_eq!(pa, pb, max_relative = 1e-10);
}

#[test]
fn inner_methods_reach_the_same_objective() {
    let (n, p, x, y) = synthetic();
    let prob = problem(n, p, &x, &y);
    let lambda = prob.lambda_max() * 0.2;
    let zero = Array1::zeros(p);
    let cd = solve_subproblem(&prob, &zero, lambda, 1e-9, &InnerSolverConfig::default(), None).unwrap();
    let pg_cfg = InnerSolverConfig { method: InnerMethod::ProximalGradient, ..Default::default() };
    let pg = solve_subproblem(&prob, &zero, lambda, 1e-9, &pg_cfg, None).unwrap();
    let a = eval_primal(&prob, &cd.state.beta, lambda).unwrap();
    let b = eval_primal(&prob, &pg.state.beta, lambda).unwrap();
    // both are within 1e-9 of the optimum
    assert!((a - b).abs() <= 2e-9, "{a} vs {b}");
}

#[test]
fn screening_and_working_sets_do_not_change_the_answer() {
    let (n, p, x, y) = synthetic();
    let prob = problem(n, p, &x, &y);
    let target = prob.lambda_max() * 0.02;
    let policy = PathPolicy::fastpath(target, 1e-9).unwrap();
    let full = run_path(&prob, &policy, &InnerSolverConfig::default()).unwrap();
    let plain_cfg = InnerSolverConfig { dynamic_screening: false, working_set: false, ..Default::default() };
    let plain = run_path(&prob, &policy, &plain_cfg).unwrap();
    let a = eval_primal(&prob, &full.final_state.beta, target).unwrap();
    let b = eval_primal(&prob, &plain.final_state.beta, target).unwrap();
    assert!((a - b).abs() <= 2e-9, "{a} vs {b}");
    assert!(full.trace.total_coordinate_updates() < plain.trace.total_coordinate_updates());
}

#[test]
fn dense_and_sparse_storage_give_the_same_path() {
    let (n, p, x, y) = synthetic();
    let dense = problem(n, p, &x, &y);
    let mut indptr = vec![0];
    let (mut indices, mut data) = (Vec::new(), Vec::new());
    for j in 0..p {
        for i in 0..n {
            if x[i * p + j] != 0.0 {
                indices.push(i);
                data.push(x[i * p + j]);
            }
        }
        indptr.push(indices.len());
    }
    let sparse =
        Problem::new(DesignMatrix::sparse_csc(n, p, indptr, indices, data).unwrap(), Array1::from(y)).unwrap();
    let policy = PathPolicy::new(PolicyKind::Geometric(GeometricGrid::Size(15)), dense.lambda_max() * 0.05, 1e-8).unwrap();
    let a = run_path(&dense, &policy, &InnerSolverConfig::default()).unwrap();
    let b = run_path(&sparse, &policy, &InnerSolverConfig::default()).unwrap();
    assert_eq!(a.trace.steps.len(), b.trace.steps.len());
    for (u, v) in a.final_state.beta.iter().zip(&b.final_state.beta) {
        assert!((u - v).abs() <= 1e-6, "{u} vs {v}");
    }
}

#[test]
fn every_policy_certifies_the_target() {
    let (n, p, x, y) = synthetic();
    let prob = problem(n, p, &x, &y);
    let target = prob.lambda_max() * 0.05;
    let eps = 1e-6;
    let kinds = vec![
        PolicyKind::FastPath { r: 0.42 },
        PolicyKind::Simplified { r: 0.42 },
        PolicyKind::AdaptiveR { c: 1.0 },
        PolicyKind::Geometric(GeometricGrid::Ratio(0.7)),
        PolicyKind::Prescribed { grid: vec![prob.lambda_max() * 0.5, target], refine: None },
    ];
    for kind in kinds {
        let name = kind.name();
        let res = run_path(&prob, &PathPolicy::new(kind, target, eps).unwrap(), &InnerSolverConfig::default()).unwrap();
        assert!(res.final_gap() <= eps, "{name}: {}", res.final_gap());
        assert_eq!(res.final_state.lambda, target, "{name}");
    }
}
