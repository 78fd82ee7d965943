//! Dual empirical-likelihood criterion and its profile over nuisance
//! parameters.
//!
//! The inner problem maximizes Σ log(1 + λᵀu_i) by damped Newton, staying
//! strictly inside {λ : 1 + λᵀu_i > 0}. The outer problem runs BFGS over the
//! nuisance coordinates with the envelope gradient of ℓ(θ).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::designs::{ActiveMoments, MomentSystem, Reparam};
use crate::error::{Error, Result};
use crate::localfit::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda_cap: f64,
    pub max_inner_iter: usize,
    /// Newton decrement threshold of the inner solve.
    pub inner_tol: f64,
    /// Criterion-change threshold of the outer solve.
    pub outer_tol: f64,
    pub max_outer_iter: usize,
    pub multi_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda_cap: 1e8,
            max_inner_iter: 200,
            inner_tol: 1e-9,
            outer_tol: 1e-8,
            max_outer_iter: 200,
            multi_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ELEvaluation {
    /// ℓ(θ) = −2 Σ log(n p_i); `f64::INFINITY` when infeasible.
    pub criterion: f64,
    pub lambda: Vec<f64>,
    pub converged: bool,
    pub inner_iterations: usize,
    pub feasible: bool,
    pub gradient_norm: f64,
}

impl ELEvaluation {
    fn infeasible(d: usize, iterations: usize) -> Self {
        ELEvaluation {
            criterion: f64::INFINITY,
            lambda: vec![0.0; d],
            converged: true,
            inner_iterations: iterations,
            feasible: false,
            gradient_norm: f64::NAN,
        }
    }
}

/// Evaluates ℓ(θ) for a moment system under the given weights.
pub fn el_criterion(
    system: &MomentSystem,
    theta: &[f64],
    weights: &WeightVector,
    config: &SolverConfig,
) -> Result<ELEvaluation> {
    if theta.len() != system.d() || theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Input("theta must be finite with one entry per moment".into()));
    }
    let active = system.activate(weights);
    let u = active.moments(theta);
    dual_solve(&u, active.d, None, config)
}

/// Solves the inner dual problem for moment rows `u` (m × d, row-major).
pub fn dual_solve(u: &[f64], d: usize, warm: Option<&[f64]>, config: &SolverConfig) -> Result<ELEvaluation> {
    let m = u.len().checked_div(d).unwrap_or(0);
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite moment values".into()));
    }
    if m == 0 {
        return Ok(ELEvaluation {
            criterion: 0.0,
            lambda: vec![0.0; d],
            converged: true,
            inner_iterations: 0,
            feasible: true,
            gradient_norm: 0.0,
        });
    }
    if one_signed_coordinate(u, d) {
        return Ok(ELEvaluation::infeasible(d, 0));
    }

    let mut lambda = DVector::<f64>::zeros(d);
    if let Some(w) = warm {
        let cand = DVector::from_column_slice(w);
        if (0..m).all(|i| 1.0 + row_dot(u, d, i, cand.as_slice()) > 0.0) {
            lambda = cand;
        }
    }

    let mut w = vec![0.0; m];
    let mut grad = DVector::<f64>::zeros(d);
    let mut hess = DMatrix::<f64>::zeros(d, d);
    let mut f = objective(u, d, lambda.as_slice(), &mut w).expect("start is inside the domain");
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::NAN;

    while iterations < config.max_inner_iter {
        iterations += 1;
        grad.fill(0.0);
        hess.fill(0.0);
        for i in 0..m {
            let row = &u[i * d..(i + 1) * d];
            let inv = 1.0 / w[i];
            let inv2 = inv * inv;
            for a in 0..d {
                grad[a] += row[a] * inv;
                for b in a..d {
                    hess[(a, b)] += row[a] * row[b] * inv2;
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        grad_norm = grad.amax() / m as f64;
        let step = match solve_psd(&hess, &grad) {
            Some(s) => s,
            None => return Err(Error::Numerical("inner Newton system is singular".into())),
        };
        let decrement = grad.dot(&step);
        if !(decrement > config.inner_tol * config.inner_tol * 1e-2) || grad.amax() == 0.0 {
            converged = true;
            break;
        }

        // largest step keeping every 1 + λᵀu_i positive, scaled by 0.99
        let mut t_max = f64::INFINITY;
        for i in 0..m {
            let slope = row_dot(u, d, i, step.as_slice());
            if slope < 0.0 {
                t_max = t_max.min(-w[i] / slope);
            }
        }
        let mut t = if t_max.is_finite() { (0.99 * t_max).min(1.0) } else { 1.0 };
        let mut accepted = false;
        let mut stalled = false;
        let mut trial = vec![0.0; m];
        for _ in 0..60 {
            let cand = &lambda + &step * t;
            if let Some(fc) = objective(u, d, cand.as_slice(), &mut trial) {
                if fc >= f + 1e-4 * t * decrement {
                    lambda = cand;
                    stalled = fc - f <= 4.0 * f64::EPSILON * f.abs().max(1.0);
                    f = fc;
                    std::mem::swap(&mut w, &mut trial);
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent possible: either converged to rounding or stuck at the boundary
            if decrement < 1e-10 {
                converged = true;
                break;
            }
            return Ok(ELEvaluation::infeasible(d, iterations));
        }
        if lambda.amax() > config.lambda_cap {
            return Ok(ELEvaluation::infeasible(d, iterations));
        }
        // a full Newton step from a decrement this small leaves an error of
        // order decrement², far below any reported precision
        if stalled || (t == 1.0 && decrement <= config.inner_tol) {
            converged = true;
            break;
        }
    }

    if !converged {
        if lambda.amax() > 1e3 * config.lambda_cap.sqrt() {
            return Ok(ELEvaluation::infeasible(d, iterations));
        }
        return Err(Error::Numerical(format!("inner EL solve did not converge in {iterations} iterations")));
    }
    Ok(ELEvaluation {
        criterion: (2.0 * f).max(0.0),
        lambda: lambda.as_slice().to_vec(),
        converged,
        inner_iterations: iterations,
        feasible: true,
        gradient_norm: grad_norm,
    })
}

#[inline]
fn row_dot(u: &[f64], d: usize, i: usize, v: &[f64]) -> f64 {
    u[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum()
}

fn objective(u: &[f64], d: usize, lambda: &[f64], w: &mut [f64]) -> Option<f64> {
    let mut f = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let v = 1.0 + row_dot(u, d, i, lambda);
        if !(v > 0.0) {
            return None;
        }
        *wi = v;
        f += v.ln();
    }
    Some(f)
}

/// A coordinate whose values all share one sign (with at least one nonzero)
/// is a recession direction of the dual, so the supremum is infinite.
fn one_signed_coordinate(u: &[f64], d: usize) -> bool {
    (0..d).any(|j| {
        let (mut pos, mut neg) = (false, false);
        for row in u.chunks_exact(d) {
            pos |= row[j] > 0.0;
            neg |= row[j] < 0.0;
        }
        pos != neg
    })
}

/// Solves H x = g for symmetric positive semidefinite H, adding a growing
/// ridge when H is singular.
pub(crate) fn solve_psd(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        let x = ch.solve(g);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-12 * scale;
    for _ in 0..12 {
        let mut reg = h.clone();
        for a in 0..reg.nrows() {
            reg[(a, a)] += ridge;
        }
        if let Some(ch) = reg.cholesky() {
            let x = ch.solve(g);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        ridge *= 100.0;
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDiagnostics {
    pub starts_tried: usize,
    pub starts_feasible: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Criterion values reached from each feasible start.
    pub start_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResult {
    pub lr: f64,
    pub theta_hat: Vec<f64>,
    pub diagnostics: ProfileDiagnostics,
}

/// Profile machinery for one system under fixed weights. Building it once
/// amortizes the weighting across the many τ values of a CI search.
#[derive(Debug, Clone)]
pub struct Profiler<'a> {
    pub system: &'a MomentSystem,
    pub active: ActiveMoments,
    pub config: SolverConfig,
    sum_a: DVector<f64>,
    sum_b: DMatrix<f64>,
}

impl<'a> Profiler<'a> {
    pub fn new(system: &'a MomentSystem, weights: &WeightVector, config: SolverConfig) -> Self {
        let active = system.activate(weights);
        let sum_a = active.sum_a();
        let sum_b = active.sum_b();
        Profiler { system, active, config, sum_a, sum_b }
    }

    pub fn d(&self) -> usize {
        self.active.d
    }

    /// Just-identified weighted estimator β̌ = (Σ B_i)⁻¹ Σ a_i.
    pub fn beta_check(&self) -> Result<DVector<f64>> {
        self.sum_b
            .clone()
            .lu()
            .solve(&self.sum_a)
            .filter(|b| b.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Numerical("weighted moment matrix is singular".into()))
    }

    pub fn point_estimate(&self) -> Result<DVector<f64>> {
        Ok(self.system.constraint.evaluate(&self.beta_check()?))
    }

    pub fn criterion(&self, theta: &[f64], warm: Option<&[f64]>) -> Result<ELEvaluation> {
        let u = self.active.moments(theta);
        dual_solve(&u, self.active.d, warm, &self.config)
    }

    /// Envelope gradient dℓ/dθ = −2 Σ B_iᵀλ / (1 + λᵀu_i).
    fn gradient(&self, theta: &[f64], lambda: &[f64]) -> DVector<f64> {
        let d = self.active.d;
        let u = self.active.moments(theta);
        let mut g = DVector::zeros(d);
        for i in 0..self.active.m {
            let w = 1.0 + row_dot(&u, d, i, lambda);
            let b = self.active.b_block(i);
            for r in 0..d {
                let coef = -2.0 * lambda[r] / w;
                for c in 0..d {
                    g[c] += coef * b[r * d + c];
                }
            }
        }
        g
    }

    /// Second derivative of ℓ with respect to θ at the optimal λ.
    fn hessian(&self, theta: &[f64], lambda: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.active.d;
        let u = self.active.moments(theta);
        let mut s = DMatrix::<f64>::zeros(d, d);
        let mut f_tt = DMatrix::<f64>::zeros(d, d);
        let mut f_lt = DMatrix::<f64>::zeros(d, d);
        let lam = DVector::from_column_slice(lambda);
        for i in 0..self.active.m {
            let row = DVector::from_column_slice(&u[i * d..(i + 1) * d]);
            let w = 1.0 + row.dot(&lam);
            let b = DMatrix::from_row_slice(d, d, self.active.b_block(i));
            let btl = b.transpose() * &lam;
            s += &row * row.transpose() / (w * w);
            f_tt -= &btl * btl.transpose() / (w * w);
            f_lt += -&b / w + &row * btl.transpose() / (w * w);
        }
        let ch = s.cholesky()?;
        let correction = f_lt.transpose() * ch.solve(&f_lt);
        Some((f_tt + correction) * 2.0)
    }

    fn nuisance_to_theta(&self, tau: &DVector<f64>, omega: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (nuis, jac) = match self.system.reparam {
            Reparam::Identity => (omega.clone(), DMatrix::identity(omega.len(), omega.len())),
            Reparam::Logistic => logistic(omega),
        };
        (self.system.constraint.theta(tau, &nuis), jac)
    }

    fn omega_from_nuisance(&self, nuis: &DVector<f64>) -> DVector<f64> {
        match self.system.reparam {
            Reparam::Identity => nuis.clone(),
            Reparam::Logistic => inverse_logistic(nuis),
        }
    }

    /// Candidate nuisance starts: GMM-type projection of the moment fit onto
    /// the restriction, the projection of β̌, and β̌ ± 0.5 standard errors.
    fn starts(&self, tau: &DVector<f64>) -> Vec<DVector<f64>> {
        let cons = &self.system.constraint;
        let dr = cons.d_rho();
        let d = self.active.d;
        let p = d - dr;
        let Ok(beta) = self.beta_check() else {
            return vec![DVector::zeros(p)];
        };
        let beta_nuis = beta.rows(dr, p).into_owned();
        let mut out = Vec::new();

        let u = self.active.moments(beta.as_slice());
        let mut s = DMatrix::<f64>::zeros(d, d);
        for row in u.chunks_exact(d) {
            let r = DVector::from_column_slice(row);
            s += &r * r.transpose();
        }
        let ridge = 1e-10 * s.trace().max(1e-300);
        for a in 0..d {
            s[(a, a)] += ridge;
        }
        if let Some(sinv) = s.clone().try_inverse() {
            let delta = cons.delta();
            let theta0 = cons.theta(tau, &DVector::zeros(p));
            let bd = &self.sum_b * &delta;
            let lhs = bd.transpose() * &sinv * &bd;
            let rhs = bd.transpose() * &sinv * (&self.sum_a - &self.sum_b * theta0);
            if let Some(sol) = lhs.lu().solve(&rhs) {
                if sol.iter().all(|v| v.is_finite()) {
                    out.push(sol);
                }
            }
            out.push(beta_nuis.clone());
            if self.config.multi_start {
                if let Some(binv) = self.sum_b.clone().try_inverse() {
                    let cov = &binv * &s * binv.transpose();
                    let se = DVector::from_fn(p, |j, _| cov[(dr + j, dr + j)].max(0.0).sqrt());
                    out.push(&beta_nuis + &se * 0.5);
                    out.push(&beta_nuis - &se * 0.5);
                }
            }
        } else {
            out.push(beta_nuis);
        }
        out
    }

    /// LR(τ) = inf over θ with ρ(θ) = τ of ℓ(θ).
    pub fn profile(&self, tau: &[f64], init: Option<&[f64]>) -> Result<ProfileResult> {
        let cons = &self.system.constraint;
        let dr = cons.d_rho();
        if tau.len() != dr || tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::Input(format!("tau must have {dr} finite entries")));
        }
        let tau = DVector::from_column_slice(tau);
        let p = self.active.d - dr;

        let mut starts = Vec::new();
        if let Some(th) = init {
            if th.len() == self.active.d {
                starts.push(DVector::from_column_slice(&th[dr..]));
            }
        }
        starts.extend(self.starts(&tau));

        if p == 0 {
            let theta = cons.theta(&tau, &DVector::zeros(0));
            let ev = self.criterion(theta.as_slice(), None)?;
            return Ok(ProfileResult {
                lr: ev.criterion,
                theta_hat: theta.as_slice().to_vec(),
                diagnostics: ProfileDiagnostics {
                    starts_tried: 1,
                    starts_feasible: usize::from(ev.feasible),
                    outer_iterations: 0,
                    converged: true,
                    start_values: vec![ev.criterion],
                },
            });
        }

        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut diag = ProfileDiagnostics {
            starts_tried: starts.len(),
            starts_feasible: 0,
            outer_iterations: 0,
            converged: false,
            start_values: Vec::new(),
        };
        let mut last_err = None;
        for start in &starts {
            let omega0 = self.omega_from_nuisance(start);
            match self.bfgs(&tau, omega0) {
                Ok(Some((value, theta, iters, conv))) => {
                    diag.starts_feasible += 1;
                    diag.outer_iterations += iters;
                    diag.start_values.push(value);
                    if best.as_ref().is_none_or(|(b, _)| value < *b) {
                        diag.converged = conv;
                        best = Some((value, theta));
                    }
                }
                Ok(None) => {}
                Err(e) => last_err = Some(e),
            }
        }
        match best {
            Some((lr, theta)) => Ok(ProfileResult { lr: lr.max(0.0), theta_hat: theta.as_slice().to_vec(), diagnostics: diag }),
            None => match last_err {
                Some(e) if diag.starts_feasible == 0 && starts.len() == 1 => Err(e),
                _ => Ok(ProfileResult {
                    lr: f64::INFINITY,
                    theta_hat: cons.theta(&tau, &starts[0]).as_slice().to_vec(),
                    diagnostics: diag,
                }),
            },
        }
    }

    /// BFGS over ω. Returns None when the start is infeasible.
    #[allow(clippy::type_complexity)]
    fn bfgs(&self, tau: &DVector<f64>, omega0: DVector<f64>) -> Result<Option<(f64, DVector<f64>, usize, bool)>> {
        let delta = self.system.constraint.delta();
        let p = omega0.len();

        let eval = |omega: &DVector<f64>, warm: Option<&[f64]>| -> Result<Option<(f64, DVector<f64>, Vec<f64>, DVector<f64>, DMatrix<f64>)>> {
            if omega.iter().any(|v| !v.is_finite()) {
                return Ok(None);
            }
            let (theta, jac) = self.nuisance_to_theta(tau, omega);
            let ev = self.criterion(theta.as_slice(), warm)?;
            if !ev.feasible {
                return Ok(None);
            }
            let g_theta = self.gradient(theta.as_slice(), &ev.lambda);
            let g = jac.transpose() * (delta.transpose() * g_theta);
            Ok(Some((ev.criterion, g, ev.lambda, theta, jac)))
        };

        let Some((mut f, mut g, mut lam, mut theta, jac)) = eval(&omega0, None)? else {
            return Ok(None);
        };
        let mut omega = omega0;
        let mut hinv = match self.hessian(theta.as_slice(), &lam) {
            Some(h) => {
                let hw = jac.transpose() * (delta.transpose() * h * &delta) * &jac;
                hw.cholesky().map(|c| c.inverse())
            }
            None => None,
        }
        .unwrap_or_else(|| DMatrix::identity(p, p) * (1.0 / (1.0 + g.amax())));

        let mut converged = false;
        let mut iters = 0;
        while iters < self.config.max_outer_iter {
            iters += 1;
            if g.amax() <= 1e-10 * (1.0 + f) {
                converged = true;
                break;
            }
            let mut dir = -(&hinv * &g);
            let mut slope = g.dot(&dir);
            if !(slope < 0.0) {
                hinv = DMatrix::identity(p, p) * (1.0 / (1.0 + g.amax()));
                dir = -(&hinv * &g);
                slope = g.dot(&dir);
            }
            let mut t = 1.0;
            let mut next = None;
            for _ in 0..60 {
                let cand = &omega + &dir * t;
                if let Some(res) = eval(&cand, Some(&lam))? {
                    if res.0 <= f + 1e-4 * t * slope {
                        next = Some((cand, res));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((cand, (fn_, gn, lamn, thetan, _))) = next else {
                // line search exhausted: at the floor of attainable precision
                converged = g.amax() <= 1e-6 * (1.0 + f);
                break;
            };
            let s = &cand - &omega;
            let y = &gn - &g;
            let sy = s.dot(&y);
            if sy > 1e-14 * s.norm() * y.norm() {
                let rho = 1.0 / sy;
                let hy = &hinv * &y;
                let yhy = y.dot(&hy);
                hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                    - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            }
            let change = f - fn_;
            omega = cand;
            f = fn_;
            g = gn;
            lam = lamn;
            theta = thetan;
            if change.abs() <= self.config.outer_tol * 1e-4 * (1.0 + f) && s.amax() <= 1e-8 * (1.0 + omega.amax()) {
                converged = true;
                break;
            }
        }
        Ok(Some((f, theta, iters, converged)))
    }
}

fn logistic(omega: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let shift = omega.iter().copied().fold(0.0_f64, f64::max);
    let e: Vec<f64> = omega.iter().map(|&w| (w - shift).exp()).collect();
    let denom = (-shift).exp() + e.iter().sum::<f64>();
    let g = DVector::from_iterator(omega.len(), e.iter().map(|v| v / denom));
    let j = DMatrix::from_fn(omega.len(), omega.len(), |a, b| {
        if a == b {
            g[a] * (1.0 - g[a])
        } else {
            -g[a] * g[b]
        }
    });
    (g, j)
}

fn inverse_logistic(g: &DVector<f64>) -> DVector<f64> {
    let eps = 1e-6;
    let clamped: Vec<f64> = g.iter().map(|v| v.clamp(eps, 1.0 - eps)).collect();
    let total: f64 = clamped.iter().sum();
    let scale = if total >= 1.0 - eps { (1.0 - eps) / (total + eps) } else { 1.0 };
    let base = 1.0 - clamped.iter().map(|v| v * scale).sum::<f64>();
    DVector::from_iterator(g.len(), clamped.iter().map(|v| (v * scale / base).ln()))
}

/// LR(τ) for a system under fixed weights.
pub fn profile_lr(
    system: &MomentSystem,
    tau: &[f64],
    weights: &WeightVector,
    init: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<ProfileResult> {
    Profiler::new(system, weights, *config).profile(tau, init)
}
