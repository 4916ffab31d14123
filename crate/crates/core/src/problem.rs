//! The Lasso problem, its primal/dual objectives and the residual-rescaling dual point.
//!
//! The loss is the quadratic `f(z) = ½‖y − z‖²`, which is 1-smooth and 1-strongly
//! convex with `inf f = 0`. The regularity constants `(mu, nu)` are still carried
//! as data so that path policies can be written against the generic bounds, and
//! tests may deliberately loosen them (any `mu ≤ 1 ≤ nu` remains valid).

use std::sync::OnceLock;

use ndarray::{Array1, Array2, ShapeBuilder};
use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use sprs::CsMat;

use crate::error::{Error, Result};

/// Absolute slack allowed on `‖X^T theta‖_inf − 1`.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// Gaps in `[-GAP_CLAMP_TOL, 0)` are rounding noise and are reported as 0.
pub const GAP_CLAMP_TOL: f64 = 1e-10;

const POWER_ITERATIONS: usize = 100;
const POWER_REL_TOL: f64 = 1e-6;
const POWER_SEED: u64 = 0x5eed;

#[derive(Debug, Clone)]
pub enum Storage {
    /// Column-major dense storage.
    Dense(Array2<f64>),
    /// Compressed sparse columns.
    Sparse(CsMat<f64>),
}

/// Design matrix `X` (n samples × p features) with cached column norms.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    storage: Storage,
    n: usize,
    p: usize,
    col_norms: Vec<f64>,
}

impl DesignMatrix {
    /// Builds a dense design, copying into column-major layout if needed.
    pub fn dense(a: Array2<f64>) -> Result<Self> {
        let (n, p) = a.dim();
        if n == 0 || p == 0 {
            return Err(Error::arg("design matrix must have at least one row and one column"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("design matrix contains non-finite values".into()));
        }
        let a = if a.t().is_standard_layout() {
            a
        } else {
            let mut f = Array2::zeros((n, p).f());
            f.assign(&a);
            f
        };
        Ok(Self::with_storage(Storage::Dense(a), n, p))
    }

    /// Builds a dense design from a row-major slice of length `n * p`.
    pub fn from_row_major(n: usize, p: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * p {
            return Err(Error::Dimension { what: "row-major values", expected: n * p, got: values.len() });
        }
        let a = Array2::from_shape_vec((n, p), values.to_vec())
            .map_err(|e| Error::arg(e.to_string()))?;
        Self::dense(a)
    }

    /// Builds a sparse design from CSC parts. Row indices must be strictly
    /// increasing within each column and lie in `[0, n)`.
    pub fn sparse_csc(
        n: usize,
        p: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::arg("design matrix must have at least one row and one column"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("design matrix contains non-finite values".into()));
        }
        let m = CsMat::try_new_csc((n, p), indptr, indices, values)
            .map_err(|(_, _, _, e)| Error::arg(format!("invalid CSC structure: {e}")))?;
        Ok(Self::with_storage(Storage::Sparse(m), n, p))
    }

    fn with_storage(storage: Storage, n: usize, p: usize) -> Self {
        let mut x = DesignMatrix { storage, n, p, col_norms: Vec::new() };
        x.col_norms = (0..p).map(|j| x.column_sq_norm(j).sqrt()).collect();
        x
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn col_norms(&self) -> &[f64] {
        &self.col_norms
    }

    pub fn col_norm(&self, j: usize) -> f64 {
        self.col_norms[j]
    }

    fn column_sq_norm(&self, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(a) => a.column(j).iter().map(|v| v * v).sum(),
            Storage::Sparse(m) => {
                let col = m.outer_view(j).expect("column index in range");
                col.data().iter().map(|v| v * v).sum()
            }
        }
    }

    /// `X_j^T v`.
    #[inline]
    pub fn col_dot(&self, j: usize, v: &[f64]) -> f64 {
        match &self.storage {
            Storage::Dense(a) => {
                let col = a.column(j);
                let col = col.as_slice().expect("column-major storage");
                col.iter().zip(v).map(|(a, b)| a * b).sum()
            }
            Storage::Sparse(m) => {
                let col = m.outer_view(j).expect("column index in range");
                col.indices().iter().zip(col.data()).map(|(&i, x)| x * v[i]).sum()
            }
        }
    }

    /// `out += a * X_j`.
    #[inline]
    pub fn col_axpy(&self, j: usize, a: f64, out: &mut [f64]) {
        match &self.storage {
            Storage::Dense(m) => {
                let col = m.column(j);
                let col = col.as_slice().expect("column-major storage");
                for (o, x) in out.iter_mut().zip(col) {
                    *o += a * x;
                }
            }
            Storage::Sparse(m) => {
                let col = m.outer_view(j).expect("column index in range");
                for (&i, x) in col.indices().iter().zip(col.data()) {
                    out[i] += a * x;
                }
            }
        }
    }

    /// Nonzero entries of column `j` as `(row, value)` pairs.
    pub fn column_entries(&self, j: usize) -> Vec<(usize, f64)> {
        match &self.storage {
            Storage::Dense(a) => a
                .column(j)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
            Storage::Sparse(m) => {
                let col = m.outer_view(j).expect("column index in range");
                col.indices().iter().copied().zip(col.data().iter().copied()).collect()
            }
        }
    }

    /// Entry `(i, j)`; zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(a) => a[[i, j]],
            Storage::Sparse(m) => m.get(i, j).copied().unwrap_or(0.0),
        }
    }

    /// `X beta`, skipping zero coefficients.
    pub fn mul_vec(&self, beta: &[f64]) -> Array1<f64> {
        let mut out = Array1::zeros(self.n);
        let o = out.as_slice_mut().expect("contiguous");
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                self.col_axpy(j, b, o);
            }
        }
        out
    }

    /// `X^T v`, one sequential dot product per column.
    pub fn tmul_vec(&self, v: &[f64]) -> Array1<f64> {
        (0..self.p).map(|j| self.col_dot(j, v)).collect()
    }

    /// Scales every nonzero column to unit Euclidean norm. Returns the indices of
    /// zero columns, which are left untouched.
    pub fn normalize_columns(&mut self) -> Vec<usize> {
        let norms = self.col_norms.clone();
        match &mut self.storage {
            Storage::Dense(a) => {
                for (j, mut col) in a.columns_mut().into_iter().enumerate() {
                    if norms[j] > 0.0 {
                        col.mapv_inplace(|v| v / norms[j]);
                    }
                }
            }
            Storage::Sparse(m) => {
                let ranges: Vec<_> = (0..m.outer_dims()).map(|j| m.indptr().outer_inds_sz(j)).collect();
                let data = m.data_mut();
                for (j, range) in ranges.into_iter().enumerate() {
                    if norms[j] > 0.0 {
                        data[range].iter_mut().for_each(|v| *v /= norms[j]);
                    }
                }
            }
        }
        self.col_norms = (0..self.p).map(|j| self.column_sq_norm(j).sqrt()).collect();
        (0..self.p).filter(|&j| norms[j] == 0.0).collect()
    }
}

/// A Lasso instance: design, response and loss regularity constants.
#[derive(Debug, Clone)]
pub struct Problem {
    x: DesignMatrix,
    y: Array1<f64>,
    mu: f64,
    nu: f64,
    lambda_max: f64,
    spectral_sq: OnceLock<f64>,
}

impl Problem {
    /// Quadratic loss `½‖y − Xβ‖²`, with `mu = nu = 1`.
    pub fn new(x: DesignMatrix, y: Array1<f64>) -> Result<Self> {
        if y.len() != x.n() {
            return Err(Error::Dimension { what: "response y", expected: x.n(), got: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("response contains non-finite values".into()));
        }
        let ys = y.as_slice().expect("contiguous");
        let lambda_max = (0..x.p()).map(|j| x.col_dot(j, ys).abs()).fold(0.0, f64::max);
        Ok(Problem { x, y, mu: 1.0, nu: 1.0, lambda_max, spectral_sq: OnceLock::new() })
    }

    /// Overrides the regularity constants. They must satisfy `0 < mu ≤ nu`; for the
    /// bounds to stay valid on the quadratic loss, also `mu ≤ 1 ≤ nu`.
    pub fn with_regularity(mut self, mu: f64, nu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= nu && nu.is_finite()) {
            return Err(Error::arg(format!("need 0 < mu <= nu, got mu={mu}, nu={nu}")));
        }
        self.mu = mu;
        self.nu = nu;
        Ok(self)
    }

    pub fn x(&self) -> &DesignMatrix {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn y_slice(&self) -> &[f64] {
        self.y.as_slice().expect("contiguous")
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn p(&self) -> usize {
        self.x.p()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `‖X^T ∇f(0)‖_inf = ‖X^T y‖_inf`.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `f(0) = ½‖y‖²`.
    pub fn f_zero(&self) -> f64 {
        0.5 * sq_norm(self.y_slice())
    }

    /// Loss value at a fitted vector `z = Xβ`.
    pub fn loss(&self, z: &[f64]) -> f64 {
        0.5 * self.y_slice().iter().zip(z).map(|(y, z)| (y - z) * (y - z)).sum::<f64>()
    }

    /// `∇f(z) = z − y`.
    pub fn loss_gradient(&self, z: &[f64]) -> Array1<f64> {
        z.iter().zip(self.y_slice()).map(|(z, y)| z - y).collect()
    }

    /// `∇f*(u) = y + u`.
    pub fn conjugate_gradient(&self, u: &[f64]) -> Array1<f64> {
        u.iter().zip(self.y_slice()).map(|(u, y)| y + u).collect()
    }

    /// Residual `y − Xβ`.
    pub fn residual(&self, beta: &[f64]) -> Array1<f64> {
        let xb = self.x.mul_vec(beta);
        &self.y - &xb
    }

    /// Estimate of `σ_max(X)²` by power iteration on `X^T X`, cached.
    pub fn spectral_norm_sq(&self) -> f64 {
        *self.spectral_sq.get_or_init(|| power_iteration(&self.x))
    }
}

fn power_iteration(x: &DesignMatrix) -> f64 {
    let mut rng = SplitMix64::seed_from_u64(POWER_SEED);
    let mut v: Vec<f64> = (0..x.p()).map(|_| unit_uniform(&mut rng) - 0.5).collect();
    let norm = sq_norm(&v).sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let xv = x.mul_vec(&v);
        let next_estimate = sq_norm(xv.as_slice().unwrap());
        let w = x.tmul_vec(xv.as_slice().unwrap());
        let wn = sq_norm(w.as_slice().unwrap()).sqrt();
        if wn == 0.0 {
            return next_estimate;
        }
        v = w.iter().map(|a| a / wn).collect();
        let converged = (next_estimate - estimate).abs() <= POWER_REL_TOL * next_estimate;
        estimate = next_estimate;
        if converged {
            break;
        }
    }
    estimate
}

fn unit_uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

pub(crate) fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a.abs()).sum()
}

fn clamp_gap(g: f64) -> f64 {
    if (-GAP_CLAMP_TOL..0.0).contains(&g) {
        0.0
    } else {
        g
    }
}

/// Primal/dual snapshot at one regularization level `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualState {
    pub beta: Array1<f64>,
    /// Dual feasible point `−∇f(Xβ)/alpha`.
    pub theta: Array1<f64>,
    pub alpha: f64,
    /// `−lambda * theta`.
    pub zeta: Array1<f64>,
    pub lambda: f64,
    /// `Gap_lambda(beta, theta)`.
    pub gap_local: f64,
    /// `f(Xβ) − f(∇f*(zeta))`.
    pub delta_t: f64,
    /// `f(Xβ)`.
    pub f_val: f64,
    /// `y − Xβ`.
    pub residual: Array1<f64>,
    l1: f64,
    y_dot_theta: f64,
    theta_sq: f64,
}

impl PrimalDualState {
    /// Builds the rescaled dual point from a residual `y − Xβ` and the largest
    /// absolute correlation `max_j |X_j^T r|` over the constraint set of interest.
    pub fn from_residual(
        prob: &Problem,
        beta: Array1<f64>,
        residual: Array1<f64>,
        lambda: f64,
        max_abs_corr: f64,
    ) -> Self {
        let alpha = lambda.max(max_abs_corr);
        let theta = residual.mapv(|r| r / alpha);
        let zeta = theta.mapv(|t| -lambda * t);
        let r = residual.as_slice().unwrap();
        let th = theta.as_slice().unwrap();
        let r_sq = sq_norm(r);
        let f_val = 0.5 * r_sq;
        let theta_sq = sq_norm(th);
        let y_dot_theta = dot(prob.y_slice(), th);
        let l1 = l1_norm(beta.as_slice().unwrap());
        let gap = clamp_gap(f_val + lambda * l1 - lambda * y_dot_theta + 0.5 * lambda * lambda * theta_sq);
        let delta_t = f_val - 0.5 * lambda * lambda * theta_sq;
        PrimalDualState {
            beta,
            theta,
            alpha,
            zeta,
            lambda,
            gap_local: gap,
            delta_t,
            f_val,
            residual,
            l1,
            y_dot_theta,
            theta_sq,
        }
    }

    /// `Gap_lambda(beta, theta)` for this pair at another regularization level.
    pub fn gap_at(&self, lambda: f64) -> f64 {
        clamp_gap(
            self.f_val + lambda * self.l1 - lambda * self.y_dot_theta
                + 0.5 * lambda * lambda * self.theta_sq,
        )
    }

    /// Bound on the cancellation error of [`gap_at`](Self::gap_at), from the
    /// magnitudes of its terms.
    pub fn gap_rounding(&self, lambda: f64) -> f64 {
        let scale = self.f_val
            + lambda * self.l1
            + lambda * self.y_dot_theta.abs()
            + 0.5 * lambda * lambda * self.theta_sq;
        8.0 * f64::EPSILON * scale
    }

    /// `‖zeta‖²`.
    pub fn zeta_sq_norm(&self) -> f64 {
        self.lambda * self.lambda * self.theta_sq
    }

    /// `‖theta‖`.
    pub fn theta_norm(&self) -> f64 {
        self.theta_sq.sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1
    }

    /// Re-expresses the same pair at a new regularization level, keeping theta
    /// (and alpha). Used to certify a target problem from a path iterate.
    pub fn at_lambda(&self, lambda: f64) -> Self {
        let mut s = self.clone();
        s.lambda = lambda;
        s.zeta = self.theta.mapv(|t| -lambda * t);
        s.gap_local = self.gap_at(lambda);
        s.delta_t = self.f_val - 0.5 * lambda * lambda * self.theta_sq;
        s
    }

    pub fn support_size(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::arg(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(())
}

/// `P_lambda(beta) = ½‖y − Xβ‖² + lambda ‖beta‖₁`.
pub fn eval_primal(prob: &Problem, beta: &Array1<f64>, lambda: f64) -> Result<f64> {
    check_len("beta", prob.p(), beta.len())?;
    check_lambda(lambda)?;
    let b = beta.as_slice().expect("contiguous");
    let r = prob.residual(b);
    Ok(0.5 * sq_norm(r.as_slice().unwrap()) + lambda * l1_norm(b))
}

/// `D_lambda(theta) = ½‖y‖² − ½‖y − lambda theta‖²`, defined on `‖X^T theta‖_inf ≤ 1`.
pub fn eval_dual(prob: &Problem, theta: &Array1<f64>, lambda: f64) -> Result<f64> {
    check_len("theta", prob.n(), theta.len())?;
    check_lambda(lambda)?;
    let th = theta.as_slice().expect("contiguous");
    let violation = dual_infeasibility(prob, th);
    if violation > FEASIBILITY_TOL {
        return Err(Error::Infeasible { violation });
    }
    let y = prob.y_slice();
    let shifted: f64 = y.iter().zip(th).map(|(y, t)| (y - lambda * t).powi(2)).sum();
    Ok(0.5 * sq_norm(y) - 0.5 * shifted)
}

/// `max(0, ‖X^T theta‖_inf − 1)`.
pub fn dual_infeasibility(prob: &Problem, theta: &[f64]) -> f64 {
    let m = (0..prob.p()).map(|j| prob.x().col_dot(j, theta).abs()).fold(0.0, f64::max);
    (m - 1.0).max(0.0)
}

/// Dual point by residual rescaling, `theta = −∇f(Xβ)/alpha` with
/// `alpha = max(lambda, ‖X^T ∇f(Xβ)‖_inf)`, and all derived quantities.
pub fn dual_point(prob: &Problem, beta: &Array1<f64>, lambda: f64) -> Result<PrimalDualState> {
    check_len("beta", prob.p(), beta.len())?;
    check_lambda(lambda)?;
    let residual = prob.residual(beta.as_slice().expect("contiguous"));
    let r = residual.as_slice().unwrap();
    let max_corr = (0..prob.p()).map(|j| prob.x().col_dot(j, r).abs()).fold(0.0, f64::max);
    Ok(PrimalDualState::from_residual(prob, beta.clone(), residual, lambda, max_corr))
}

/// `‖X^T y‖_inf`: for every `lambda ≥` this value, `beta = 0` is optimal.
pub fn lambda_max(prob: &Problem) -> f64 {
    prob.lambda_max()
}

/// `Gap_lambda(beta, theta) = P_lambda(beta) − D_lambda(theta)`.
pub fn duality_gap(prob: &Problem, beta: &Array1<f64>, theta: &Array1<f64>, lambda: f64) -> Result<f64> {
    Ok(clamp_gap(eval_primal(prob, beta, lambda)? - eval_dual(prob, theta, lambda)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy() -> Problem {
        let x = DesignMatrix::dense(Array2::eye(2)).unwrap();
        Problem::new(x, array![2.0, 0.5]).unwrap()
    }

    fn random_problem(n: usize, p: usize, seed: u64) -> Problem {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let vals: Vec<f64> = (0..n * p).map(|_| unit_uniform(&mut rng) * 2.0 - 1.0).collect();
        let y: Array1<f64> = (0..n).map(|_| unit_uniform(&mut rng) * 4.0 - 2.0).collect();
        Problem::new(DesignMatrix::from_row_major(n, p, &vals).unwrap(), y).unwrap()
    }

    // Naive double-loop evaluator, independent of the column kernels.
    fn naive_primal(prob: &Problem, beta: &[f64], lambda: f64) -> f64 {
        let mut loss = 0.0;
        for i in 0..prob.n() {
            let mut fit = 0.0;
            for (j, b) in beta.iter().enumerate() {
                fit += prob.x().get(i, j) * b;
            }
            loss += (prob.y()[i] - fit).powi(2);
        }
        0.5 * loss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    #[test]
    fn primal_on_identity() {
        let prob = toy();
        assert_eq!(eval_primal(&prob, &array![0.0, 0.0], 1.0).unwrap(), 2.125);
        assert_eq!(eval_primal(&prob, &array![1.0, 0.0], 1.0).unwrap(), 1.625);
    }

    #[test]
    fn primal_matches_naive_evaluator() {
        let prob = random_problem(5, 7, 11);
        let beta = array![0.3, 0.0, -1.2, 0.5, 0.0, 2.0, -0.1];
        let fast = eval_primal(&prob, &beta, 0.7).unwrap();
        let slow = naive_primal(&prob, beta.as_slice().unwrap(), 0.7);
        assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
    }

    #[test]
    fn primal_rejects_wrong_length() {
        let prob = toy();
        assert!(matches!(eval_primal(&prob, &array![1.0], 1.0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn dual_values() {
        let prob = toy();
        assert_eq!(eval_dual(&prob, &array![1.0, 0.25], 2.0).unwrap(), 2.125);
        assert_eq!(eval_dual(&prob, &array![0.0, 0.0], 3.7).unwrap(), 0.0);
        // closed-form solution at lambda = 1: beta = ST(y, 1) = (1, 0), theta = y − beta
        let p = eval_primal(&prob, &array![1.0, 0.0], 1.0).unwrap();
        let d = eval_dual(&prob, &array![1.0, 0.5], 1.0).unwrap();
        assert_eq!(p, 1.625);
        assert_eq!(d, 1.625);
    }

    #[test]
    fn dual_reports_infeasibility() {
        let prob = toy();
        match eval_dual(&prob, &array![1.5, 0.0], 1.0) {
            Err(Error::Infeasible { violation }) => assert_abs_diff_eq!(violation, 0.5, epsilon = 1e-15),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn dual_point_above_lambda_max_has_zero_gap() {
        let prob = toy();
        let s = dual_point(&prob, &array![0.0, 0.0], 3.0).unwrap();
        assert_eq!(s.alpha, 3.0);
        assert_abs_diff_eq!(s.theta[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.gap_local, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn dual_point_at_zero_below_lambda_max() {
        let prob = toy();
        let s = dual_point(&prob, &array![0.0, 0.0], 1.0).unwrap();
        assert_eq!(s.alpha, 2.0);
        assert_eq!(s.theta, array![1.0, 0.25]);
        assert_eq!(s.zeta, array![-1.0, -0.25]);
        // (3/8)‖y‖²
        assert_abs_diff_eq!(s.delta_t, 0.375 * 4.25, epsilon = 1e-14);
        let gap = eval_primal(&prob, &s.beta, 1.0).unwrap() - eval_dual(&prob, &s.theta, 1.0).unwrap();
        assert_abs_diff_eq!(s.gap_local, gap, epsilon = 1e-14);
    }

    #[test]
    fn dual_point_at_exact_solution() {
        let prob = toy();
        let s = dual_point(&prob, &array![1.0, 0.0], 1.0).unwrap();
        assert_eq!(s.alpha, 1.0);
        assert_eq!(s.theta, array![1.0, 0.5]);
        assert!(s.gap_local <= 1e-12);
        assert_eq!(s.delta_t, 0.0);
    }

    #[test]
    fn lambda_max_values() {
        assert_eq!(lambda_max(&toy()), 2.0);
        let x = DesignMatrix::dense(Array2::eye(2)).unwrap();
        assert_eq!(lambda_max(&Problem::new(x, array![0.0, 0.0]).unwrap()), 0.0);
        let prob = random_problem(8, 13, 3);
        let mut naive: f64 = 0.0;
        for j in 0..13 {
            let mut c = 0.0;
            for i in 0..8 {
                c += prob.x().get(i, j) * prob.y()[i];
            }
            naive = naive.max(c.abs());
        }
        assert_abs_diff_eq!(lambda_max(&prob), naive, epsilon = 1e-12);
    }

    #[test]
    fn col_norms_match_recomputation() {
        let prob = random_problem(9, 6, 5);
        for j in 0..6 {
            let direct: f64 = (0..9).map(|i| prob.x().get(i, j).powi(2)).sum::<f64>().sqrt();
            assert!((prob.x().col_norm(j) - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn sparse_matches_dense() {
        let dense = DesignMatrix::from_row_major(3, 2, &[1.0, 0.0, 0.0, 2.0, 3.0, 0.0]).unwrap();
        let sparse = DesignMatrix::sparse_csc(3, 2, vec![0, 2, 3], vec![0, 2, 1], vec![1.0, 3.0, 2.0]).unwrap();
        let v = [0.5, -1.0, 2.0];
        for j in 0..2 {
            assert_eq!(dense.col_dot(j, &v), sparse.col_dot(j, &v));
            assert_eq!(dense.col_norm(j), sparse.col_norm(j));
        }
        assert_eq!(dense.mul_vec(&[1.0, 1.0]), sparse.mul_vec(&[1.0, 1.0]));
    }

    #[test]
    fn sparse_rejects_unsorted_or_out_of_range() {
        assert!(DesignMatrix::sparse_csc(3, 1, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(DesignMatrix::sparse_csc(3, 1, vec![0, 2], vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(DesignMatrix::sparse_csc(3, 1, vec![0, 1], vec![3], vec![1.0]).is_err());
    }

    #[test]
    fn regularity_must_be_ordered() {
        assert!(toy().with_regularity(2.0, 1.0).is_err());
        assert!(toy().with_regularity(0.0, 1.0).is_err());
        assert!(toy().with_regularity(0.5, 2.0).is_ok());
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let a = Array2::from_diag(&array![1.0, 3.0, 2.0]);
        let prob = Problem::new(DesignMatrix::dense(a).unwrap(), array![1.0, 1.0, 1.0]).unwrap();
        assert!((prob.spectral_norm_sq() - 9.0).abs() < 1e-4);
    }

    #[test]
    fn weak_duality_on_random_pairs() {
        let mut rng = SplitMix64::seed_from_u64(99);
        for trial in 0..1000 {
            let prob = random_problem(4 + trial % 5, 3 + trial % 7, trial as u64);
            let beta: Array1<f64> = (0..prob.p())
                .map(|_| if unit_uniform(&mut rng) < 0.5 { 0.0 } else { 4.0 * unit_uniform(&mut rng) - 2.0 })
                .collect();
            let lambda = 0.01 + 2.0 * unit_uniform(&mut rng) * prob.lambda_max();
            let s = dual_point(&prob, &beta, lambda).unwrap();
            let p = eval_primal(&prob, &beta, lambda).unwrap();
            let d = eval_dual(&prob, &s.theta, lambda).unwrap();
            assert!(d <= p + 1e-10, "trial {trial}: D={d} > P={p}");
            assert!(s.gap_local >= -1e-10);
            assert!((s.gap_local - (p - d)).abs() <= 1e-9 * (1.0 + p.abs()));
            let zeta_ok = s.zeta.iter().zip(s.theta.iter()).all(|(z, t)| *z == -lambda * t);
            assert!(zeta_ok);
        }
    }

    #[test]
    fn gradient_objective_equality_for_quadratic_loss() {
        let mut rng = SplitMix64::seed_from_u64(7);
        let prob = random_problem(10, 6, 1);
        for _ in 0..100 {
            let beta: Vec<f64> = (0..6).map(|_| 3.0 * unit_uniform(&mut rng) - 1.5).collect();
            let z = prob.x().mul_vec(&beta);
            let f = prob.loss(z.as_slice().unwrap());
            let g = prob.loss_gradient(z.as_slice().unwrap());
            assert!((f - 0.5 * sq_norm(g.as_slice().unwrap())).abs() <= 1e-12 * (1.0 + f));
        }
    }

    #[test]
    fn zero_gap_above_lambda_max() {
        for seed in 0..50 {
            let prob = random_problem(6, 9, seed);
            let zero = Array1::zeros(9);
            for lambda in [prob.lambda_max(), 1.5 * prob.lambda_max()] {
                let s = dual_point(&prob, &zero, lambda).unwrap();
                assert!(s.gap_local <= 1e-12 * (1.0 + 2.0 * prob.f_zero()));
            }
        }
    }

    #[test]
    fn normalize_columns_flags_zero_columns() {
        let mut x = DesignMatrix::from_row_major(2, 3, &[3.0, 0.0, 1.0, 4.0, 0.0, 1.0]).unwrap();
        let zeros = x.normalize_columns();
        assert_eq!(zeros, vec![1]);
        assert_abs_diff_eq!(x.col_norm(0), 1.0, epsilon = 1e-15);
        assert_eq!(x.col_norm(1), 0.0);
        assert_abs_diff_eq!(x.get(1, 0), 0.8, epsilon = 1e-15);
    }
}
