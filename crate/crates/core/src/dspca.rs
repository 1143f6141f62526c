//! The l1-penalized semidefinite relaxation
//!
//! ```text
//! maximize Tr(Sigma X) - rho 1^T|X|1   s.t.  Tr X = 1, X >= 0
//! ```
//!
//! solved through its dual `min { lambda_max(Sigma + U) : |U_ij| <= rho }`.
//! The dual objective is replaced by the smooth log-sum-exp approximation
//! `f_mu` and minimized with an optimal first-order scheme (gradient mapping
//! plus estimate sequence). Progress is measured by the duality gap.

use serde::{Deserialize, Serialize};

use crate::component::{pattern_solution, SparseComponent, SparsityPattern};
use crate::error::{Result, SpcaError};
use crate::linalg::{
    lambda_max, leading_eig, project_box, softmax_from_eig, sym_eig, SymmetricMatrix,
};

/// Feasibility slack used when validating dual and primal points.
const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DspcaConfig {
    pub rho: f64,
    /// Target duality gap.
    pub epsilon: f64,
    pub gap_check_stride: usize,
    /// Iteration cap; `None` derives it from the complexity estimate.
    pub max_iter: Option<usize>,
    /// Replaces `mu = epsilon / (2 log n)` when set.
    pub mu_override: Option<f64>,
    /// Relative magnitude below which loadings are truncated to zero.
    pub zero_tol: f64,
}

impl DspcaConfig {
    pub fn new(rho: f64, epsilon: f64) -> Self {
        Self {
            rho,
            epsilon,
            gap_check_stride: 100,
            max_iter: None,
            mu_override: None,
            zero_tol: 1e-3,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = Some(max_iter);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SpcaError::InvalidConfig(msg.to_string()));
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return bad("rho must be finite and >= 0");
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad("epsilon must be > 0");
        }
        if self.gap_check_stride == 0 {
            return bad("gap_check_stride must be >= 1");
        }
        if self.max_iter == Some(0) {
            return bad("max_iter must be >= 1");
        }
        if let Some(mu) = self.mu_override {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(SpcaError::NonPositiveMu(mu));
            }
        }
        if !(0.0..1.0).contains(&self.zero_tol) {
            return bad("zero_tol must lie in [0, 1)");
        }
        Ok(())
    }

    /// Smoothing parameter `epsilon / (2 log n)`. For `n = 1` the smoothing is
    /// exact for any `mu`, so `epsilon` is used.
    pub fn mu(&self, n: usize) -> f64 {
        if let Some(mu) = self.mu_override {
            return mu;
        }
        if n <= 1 {
            self.epsilon
        } else {
            self.epsilon / (2.0 * (n as f64).ln())
        }
    }

    /// `10 * ceil(rho n sqrt(log n) / epsilon)`, or 10,000 when `rho = 0`.
    pub fn iteration_cap(&self, n: usize) -> usize {
        if let Some(m) = self.max_iter {
            return m;
        }
        if self.rho == 0.0 {
            return 10_000;
        }
        let nf = n as f64;
        let est = (self.rho * nf * nf.ln().sqrt() / self.epsilon).ceil();
        ((10.0 * est).min(1e9) as usize).max(1)
    }
}

/// Smoothed dual objective
/// `f_mu(U) = mu log Tr exp((Sigma + U)/mu) - mu log n`, evaluated with the
/// largest eigenvalue shifted out of the exponentials.
pub fn smooth_value(sigma: &SymmetricMatrix, u: &SymmetricMatrix, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    sigma.check_dim(u)?;
    let eig = sym_eig(&sigma.add(u))?;
    Ok(value_from_eigenvalues(eig.values.as_slice(), mu))
}

fn value_from_eigenvalues(d: &[f64], mu: f64) -> f64 {
    let d_max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = d.iter().map(|di| ((di - d_max) / mu).exp()).sum();
    d_max + mu * s.ln() - mu * (d.len() as f64).ln()
}

/// Gradient of `f_mu`: the trace-normalized exponential of `(Sigma + U)/mu`.
pub fn smooth_gradient(
    sigma: &SymmetricMatrix,
    u: &SymmetricMatrix,
    mu: f64,
) -> Result<SymmetricMatrix> {
    check_mu(mu)?;
    sigma.check_dim(u)?;
    let eig = sym_eig(&sigma.add(u))?;
    Ok(softmax_from_eig(&eig, mu).1)
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(SpcaError::NonPositiveMu(mu));
    }
    Ok(())
}

/// Primal objective `Tr(Sigma X) - rho 1^T|X|1`.
pub fn primal_objective(sigma: &SymmetricMatrix, x: &SymmetricMatrix, rho: f64) -> f64 {
    sigma.inner_product(x) - rho * x.l1_entry_norm()
}

/// `lambda_max(Sigma + U) - Tr(Sigma X) + rho 1^T|X|1` for a dual-feasible `U`
/// and a primal-feasible `X`.
pub fn duality_gap(
    sigma: &SymmetricMatrix,
    u: &SymmetricMatrix,
    x: &SymmetricMatrix,
    rho: f64,
) -> Result<f64> {
    sigma.check_dim(u)?;
    sigma.check_dim(x)?;
    let max_u = u.max_abs();
    if max_u > rho * (1.0 + FEAS_TOL) + FEAS_TOL {
        return Err(SpcaError::InfeasibleDual { max_abs: max_u, rho });
    }
    let tr = x.trace();
    if (tr - 1.0).abs() > 1e-8 {
        return Err(SpcaError::InfeasiblePrimal(format!("trace {tr} != 1")));
    }
    let eig = sym_eig(x)?;
    let min_eig = eig.values[eig.values.len() - 1];
    if min_eig < -1e-8 {
        return Err(SpcaError::InfeasiblePrimal(format!(
            "minimum eigenvalue {min_eig:e} < 0"
        )));
    }
    Ok(lambda_max(&sigma.add(u))? - primal_objective(sigma, x, rho))
}

/// One recorded duality-gap evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub iter: usize,
    pub gap: f64,
    pub best_gap: f64,
}

/// Mutable iteration state of the solver.
#[derive(Clone, Debug)]
pub struct DspcaState {
    pub u: SymmetricMatrix,
    /// Current primal estimate `grad f_mu(U)`.
    pub x: SymmetricMatrix,
    /// `sum_j (j+1)/2 grad f_mu(U_j)`.
    pub gradient_accumulator: SymmetricMatrix,
    pub iter: usize,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct DspcaResult {
    pub u_star: SymmetricMatrix,
    pub x_star: SymmetricMatrix,
    /// Best duality gap observed.
    pub gap: f64,
    /// `lambda_max(Sigma + U_star)`: an upper bound on the relaxation's optimum.
    pub dual_value: f64,
    /// `Tr(Sigma X_star) - rho 1^T|X_star|1`.
    pub primal_value: f64,
    pub iterations: usize,
    pub component: SparseComponent,
    pub converged: bool,
    pub mu: f64,
    pub history: Vec<GapRecord>,
}

/// Iterative solver; [`dspca_solve`] drives it to completion.
pub struct DspcaSolver<'a> {
    sigma: &'a SymmetricMatrix,
    cfg: DspcaConfig,
    mu: f64,
    state: DspcaState,
    weight_sum: f64,
    best: Option<(f64, SymmetricMatrix, SymmetricMatrix, f64, f64)>,
    history: Vec<GapRecord>,
}

impl<'a> DspcaSolver<'a> {
    pub fn new(sigma: &'a SymmetricMatrix, cfg: DspcaConfig) -> Result<Self> {
        cfg.validate()?;
        if !sigma.is_finite() {
            return Err(SpcaError::NonFiniteInput);
        }
        let n = sigma.n();
        let mu = cfg.mu(n);
        Ok(Self {
            sigma,
            cfg,
            mu,
            state: DspcaState {
                u: SymmetricMatrix::zeros(n),
                x: SymmetricMatrix::identity(n).scale(1.0 / n as f64),
                gradient_accumulator: SymmetricMatrix::zeros(n),
                iter: 0,
                gap: f64::INFINITY,
            },
            weight_sum: 0.0,
            best: None,
            history: Vec::new(),
        })
    }

    pub fn state(&self) -> &DspcaState {
        &self.state
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn best_gap(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.0)
    }

    /// Performs one iteration. When `check_gap` is set the duality gap is
    /// evaluated at the current point before it is updated.
    pub fn step(&mut self, check_gap: bool) -> Result<()> {
        let i = self.state.iter;
        let rho = self.cfg.rho;
        let mu = self.mu;
        let shifted = self.sigma.add(&self.state.u);
        let eig = sym_eig(&shifted).map_err(|_| SpcaError::NonFiniteIterate(i))?;
        let (_, grad) = softmax_from_eig(&eig, mu);
        if !grad.is_finite() {
            return Err(SpcaError::NonFiniteIterate(i));
        }

        let weight = 0.5 * (i as f64 + 1.0);
        self.state.gradient_accumulator = self.state.gradient_accumulator.add(&grad.scale(weight));
        self.weight_sum += weight;

        // Gradient mapping: projection of U - grad / L with L = 1/mu.
        let y = project_box(&self.state.u.sub(&grad.scale(mu)), rho)?;

        if check_gap {
            self.record_gap(i, eig.max_value(), &grad, &y)?;
        }

        // Minimizer of the estimate sequence.
        let w = project_box(&self.state.gradient_accumulator.scale(-mu), rho)?;
        let denom = i as f64 + 3.0;
        let next = w.scale(2.0 / denom).add(&y.scale((i as f64 + 1.0) / denom));
        // Convex combination of box points stays in the box up to rounding.
        self.state.u = project_box(&next, rho)?;
        self.state.x = grad;
        self.state.iter += 1;
        if !self.state.u.is_finite() {
            return Err(SpcaError::NonFiniteIterate(i));
        }
        Ok(())
    }

    /// Duality gap over two dual candidates (`U_i`, `Y_i`) and two primal
    /// candidates (`grad f_mu(U_i)` and the weighted gradient average).
    fn record_gap(
        &mut self,
        iter: usize,
        lambda_u: f64,
        grad: &SymmetricMatrix,
        y: &SymmetricMatrix,
    ) -> Result<()> {
        let rho = self.cfg.rho;
        let lambda_y = lambda_max(&self.sigma.add(y))?;
        let (dual, u_cand) = if lambda_y < lambda_u {
            (lambda_y, y.clone())
        } else {
            (lambda_u, self.state.u.clone())
        };
        let avg = self.state.gradient_accumulator.scale(1.0 / self.weight_sum);
        let p_grad = primal_objective(self.sigma, grad, rho);
        let p_avg = primal_objective(self.sigma, &avg, rho);
        let (primal, x_cand) = if p_avg > p_grad {
            (p_avg, avg)
        } else {
            (p_grad, grad.clone())
        };
        let gap = dual - primal;
        self.state.gap = gap;
        if gap < self.best_gap() {
            self.best = Some((gap, u_cand, x_cand, dual, primal));
        }
        self.history.push(GapRecord {
            iter,
            gap,
            best_gap: self.best_gap(),
        });
        Ok(())
    }

    pub fn finish(self) -> Result<DspcaResult> {
        let (gap, u_star, x_star, dual_value, primal_value) =
            self.best.ok_or_else(|| SpcaError::InvalidConfig("no gap was evaluated".into()))?;
        let component = extract_component(&x_star, self.sigma, self.cfg.zero_tol, Some(self.cfg.rho))?;
        Ok(DspcaResult {
            converged: gap <= self.cfg.epsilon,
            u_star,
            x_star,
            gap,
            dual_value,
            primal_value,
            iterations: self.state.iter,
            component,
            mu: self.mu,
            history: self.history,
        })
    }
}

/// Solves the penalized relaxation and extracts a sparse component from the
/// best primal iterate. Stops once the gap reaches `epsilon` or the iteration
/// cap is hit (`converged = false` in the latter case).
///
/// When `rho >= max_i Sigma_ii` the sparse PCA optimum is `z = 0`; for such
/// penalties the closed-form dual point `U = -Sigma + (Sigma_max - rho) I`
/// (clamped to the box) paired with `X = e_i e_i^T` is tried first.
pub fn dspca_solve(sigma: &SymmetricMatrix, cfg: &DspcaConfig) -> Result<DspcaResult> {
    cfg.validate()?;
    if !sigma.is_finite() {
        return Err(SpcaError::NonFiniteInput);
    }
    let n = sigma.n();
    let diag = sigma.diagonal();
    let (imax, dmax) = diag
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    let zero_law = cfg.rho >= dmax;

    if zero_law {
        let u = project_box(
            &SymmetricMatrix::identity(n)
                .scale(dmax - cfg.rho)
                .sub(sigma),
            cfg.rho,
        )?;
        let mut x = SymmetricMatrix::zeros(n).into_matrix();
        x[(imax, imax)] = 1.0;
        let x = SymmetricMatrix::new(x)?;
        let dual_value = lambda_max(&sigma.add(&u))?;
        let primal_value = primal_objective(sigma, &x, cfg.rho);
        let gap = dual_value - primal_value;
        if gap <= cfg.epsilon {
            return Ok(DspcaResult {
                u_star: u,
                x_star: x,
                gap,
                dual_value,
                primal_value,
                iterations: 0,
                component: SparseComponent::zero(n, Some(cfg.rho)),
                converged: true,
                mu: cfg.mu(n),
                history: vec![GapRecord {
                    iter: 0,
                    gap,
                    best_gap: gap,
                }],
            });
        }
    }

    let cap = cfg.iteration_cap(n);
    let stride = cfg.gap_check_stride;
    let mut solver = DspcaSolver::new(sigma, cfg.clone())?;
    for i in 0..cap {
        let check = i % stride == 0 || i + 1 == cap;
        solver.step(check)?;
        if check && solver.best_gap() <= cfg.epsilon {
            break;
        }
    }
    let mut result = solver.finish()?;
    if zero_law {
        result.component = SparseComponent::zero(n, Some(cfg.rho));
    }
    Ok(result)
}

/// Rank-one truncation of a primal solution: the dominant eigenvector of `X`,
/// with entries below `zero_tol * max_j |x_j|` dropped. The loadings and
/// variance are then recomputed on `Sigma` for the surviving support.
pub fn extract_component(
    x: &SymmetricMatrix,
    sigma: &SymmetricMatrix,
    zero_tol: f64,
    rho: Option<f64>,
) -> Result<SparseComponent> {
    sigma.check_dim(x)?;
    let n = x.n();
    let (_, v) = leading_eig(x)?;
    let vmax = v.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    if vmax == 0.0 {
        return Ok(SparseComponent::zero(n, rho));
    }
    let support: Vec<usize> = (0..n).filter(|&i| v[i].abs() >= zero_tol * vmax).collect();
    let pattern = SparsityPattern::new(support, n)?;
    let mut c = pattern_solution(sigma, &pattern, rho.unwrap_or(0.0))?;
    if rho.is_none() {
        c.penalized_objective = None;
    }
    Ok(c)
}
