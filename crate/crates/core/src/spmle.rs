//! Semiparametric MLE `(θ̃, F̃)` from two pooled NPMLEs.
//!
//! The two NPMLEs are merged into one weighted point set (origin kept per
//! atom) and every integral against `F̂`, `Ĝ` or `μ̂ = ρ0 F̂ + ρ1 Ĝ` below is an
//! exact finite sum over those atoms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TwoSampleData;
use crate::error::{Error, Result};
use crate::model::{BiasModel, Ratios};
use crate::npmle::{npmle, DiscreteDistribution, NpmleFit, NpmleOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledPoint {
    /// Support point `W_i`.
    pub w: f64,
    /// NPMLE mass `p̂_i` within its own sample.
    pub mass: f64,
    /// Pooled weight `ω_i = ρ p̂_i`.
    pub omega: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledData {
    pub points: Vec<PooledPoint>,
    pub n0: usize,
    pub n1: usize,
    pub rho0: f64,
    pub rho1: f64,
}

/// Merge `F̂` and `Ĝ` into pooled atoms. Only finite support points enter;
/// coincident points from the two samples stay separate.
pub fn pool(
    fhat: &DiscreteDistribution,
    ghat: &DiscreteDistribution,
    n0: usize,
    n1: usize,
) -> Result<PooledData> {
    if n0 == 0 || n1 == 0 {
        return Err(Error::EmptySample);
    }
    let n = (n0 + n1) as f64;
    let rho0 = n0 as f64 / n;
    let rho1 = n1 as f64 / n;
    let mut points = Vec::with_capacity(fhat.len() + ghat.len());
    for (dist, rho, origin) in [(fhat, rho0, Origin::X), (ghat, rho1, Origin::Y)] {
        let before = points.len();
        points.extend(dist.finite_atoms().map(|(w, mass)| PooledPoint {
            w,
            mass,
            omega: rho * mass,
            origin,
        }));
        if points.len() == before {
            return Err(Error::EmptyDistribution);
        }
    }
    Ok(PooledData {
        points,
        n0,
        n1,
        rho0,
        rho1,
    })
}

impl PooledData {
    pub fn n(&self) -> usize {
        self.n0 + self.n1
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }

    /// `F̂(∞)`, the finite mass of the first sample.
    pub fn fhat_total(&self) -> f64 {
        self.origin_total(Origin::X)
    }

    /// `Ĝ(∞)`.
    pub fn ghat_total(&self) -> f64 {
        self.origin_total(Origin::Y)
    }

    fn origin_total(&self, origin: Origin) -> f64 {
        self.points
            .iter()
            .filter(|p| p.origin == origin)
            .map(|p| p.mass)
            .sum()
    }

    pub fn omega_total(&self) -> f64 {
        self.points.iter().map(|p| p.omega).sum()
    }

    /// `μ̂(t) = Σ_{W_i ≤ t} ω_i`.
    pub fn mu_hat(&self, t: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.w <= t)
            .map(|p| p.omega)
            .sum()
    }

    pub fn distinct_support(&self) -> usize {
        let mut ws: Vec<f64> = self.points.iter().map(|p| p.w).collect();
        ws.sort_by(f64::total_cmp);
        ws.dedup();
        ws.len()
    }

    fn ratios(&self, model: &BiasModel, theta: &[f64]) -> Vec<Ratios> {
        self.points
            .iter()
            .map(|p| Ratios::new(model.log_phi_unchecked(p.w, theta), self.rho0, self.rho1))
            .collect()
    }
}

/// Estimating equations `g(θ)`; `θ̃` is their root.
pub fn g_vec(pooled: &PooledData, model: &BiasModel, theta: &[f64]) -> Result<Vec<f64>> {
    model.check_theta(theta)?;
    let q = model.dim();
    let mut g = vec![0.0; q];
    for (pt, r) in pooled.points.iter().zip(pooled.ratios(model, theta)) {
        let basis = model.score_basis(pt.w);
        let term = match pt.origin {
            Origin::X => pt.mass * r.ratio,
            Origin::Y => -pt.mass * r.inv,
        };
        for k in 0..q {
            g[k] += term * basis[k];
        }
    }
    Ok(g)
}

/// Convex objective whose gradient is `h1(θ) g(θ)`.
pub fn objective_rn(pooled: &PooledData, model: &BiasModel, theta: &[f64]) -> Result<f64> {
    model.check_theta(theta)?;
    let mut total = 0.0;
    for (pt, r) in pooled.points.iter().zip(pooled.ratios(model, theta)) {
        total += match pt.origin {
            Origin::X => pt.mass * r.log_denom / pooled.rho1,
            Origin::Y => pt.mass * (r.log_denom - r.log_phi) / pooled.rho0,
        };
    }
    Ok(total)
}

pub fn gradient_rn(pooled: &PooledData, model: &BiasModel, theta: &[f64]) -> Result<Vec<f64>> {
    let h1 = model.h1(theta);
    Ok(g_vec(pooled, model, theta)?
        .into_iter()
        .map(|g| h1 * g)
        .collect())
}

/// `h1(θ)^2 ∫ (1, h2)(1, h2)ᵀ φ / (ρ0 + ρ1 φ)^2 dμ̂`.
fn moment_matrix(pooled: &PooledData, model: &BiasModel, theta: &[f64]) -> DMatrix<f64> {
    let q = model.dim();
    let h1 = model.h1(theta);
    let mut m = DMatrix::zeros(q, q);
    for (pt, r) in pooled.points.iter().zip(pooled.ratios(model, theta)) {
        let basis = model.score_basis(pt.w);
        let c = pt.omega * r.ratio_sq();
        for a in 0..q {
            for b in 0..q {
                m[(a, b)] += c * basis[a] * basis[b];
            }
        }
    }
    m * (h1 * h1)
}

/// Hessian of the objective: `g (∇h1)ᵀ` plus the weighted moment matrix.
pub fn hessian_rn(pooled: &PooledData, model: &BiasModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    let g = g_vec(pooled, model, theta)?;
    let dh = model.grad_h1(theta);
    let q = model.dim();
    let mut h = moment_matrix(pooled, model, theta);
    for a in 0..q {
        for b in 0..q {
            h[(a, b)] += g[a] * dh[b];
        }
    }
    Ok(h)
}

/// Plug-in limit of the Hessian at the solution, with `μ̂` in place of `μ0`.
pub fn sigma1_hat(pooled: &PooledData, model: &BiasModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    model.check_theta(theta)?;
    Ok(moment_matrix(pooled, model, theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Target for `‖g(θ)‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point; the model default when absent.
    pub start: Option<Vec<f64>>,
    /// Doublings allowed while bracketing the scalar root.
    pub max_expand: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            start: None,
            max_expand: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSolution {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub rn_value: f64,
    pub g_norm: f64,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solve `g(θ) = 0`: bracketed safeguarded Newton for `q = 1`, damped
/// Newton on the convex objective for `q = 2`.
pub fn solve_theta(pooled: &PooledData, model: &BiasModel, opts: &SolveOptions) -> Result<ThetaSolution> {
    let has_x = pooled.points.iter().any(|p| p.origin == Origin::X);
    let has_y = pooled.points.iter().any(|p| p.origin == Origin::Y);
    if !has_x || !has_y {
        return Err(Error::EmptyDistribution);
    }
    let start = opts.start.clone().unwrap_or_else(|| model.default_start());
    model.check_theta(&start)?;
    match model.dim() {
        1 => solve_scalar(pooled, model, start[0], opts),
        _ => {
            check_overlap(pooled, model)?;
            solve_newton(pooled, model, start, opts)
        }
    }
}

/// The objective has a finite minimiser only when the `h2` values of the two
/// samples overlap; otherwise it decreases forever along a separating
/// direction, as in logistic regression with separated classes.
fn check_overlap(pooled: &PooledData, model: &BiasModel) -> Result<()> {
    let range = |origin: Origin| {
        pooled
            .points
            .iter()
            .filter(|p| p.origin == origin && p.mass > 0.0)
            .map(|p| model.h2(p.w))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| (lo.min(h), hi.max(h)))
    };
    let (xlo, xhi) = range(Origin::X);
    let (ylo, yhi) = range(Origin::Y);
    if xhi <= ylo || yhi <= xlo {
        return Err(Error::Infeasible(
            "the two samples are separated; the estimating equations have no finite root".into(),
        ));
    }
    Ok(())
}

fn solve_scalar(
    pooled: &PooledData,
    model: &BiasModel,
    start: f64,
    opts: &SolveOptions,
) -> Result<ThetaSolution> {
    let g = |t: f64| -> Result<f64> { Ok(g_vec(pooled, model, &[t])?[0]) };
    let dg = |t: f64| -> f64 { moment_matrix(pooled, model, &[t])[(0, 0)] };
    let finish = |t: f64, iterations: usize, converged: bool| -> Result<ThetaSolution> {
        let gv = g(t)?;
        Ok(ThetaSolution {
            theta: vec![t],
            iterations,
            converged,
            rn_value: objective_rn(pooled, model, &[t])?,
            g_norm: gv.abs(),
        })
    };

    let mut iterations = 0;
    let g0 = g(start)?;
    if g0.abs() < opts.tol {
        return finish(start, 0, true);
    }
    // g is increasing in θ: expand geometrically towards the sign change.
    let (mut lo, mut hi);
    let mut t = start;
    let mut gt = g0;
    let factor: f64 = if g0 < 0.0 { 2.0 } else { 0.5 };
    let mut expanded = 0;
    loop {
        let next = t * factor;
        let gn = g(next)?;
        expanded += 1;
        iterations += 1;
        // a small |g| far out is not a root unless the sign changes too:
        // g may only approach zero asymptotically
        if gn == 0.0 {
            return finish(next, iterations, true);
        }
        if (gn > 0.0) != (gt > 0.0) {
            lo = t.min(next);
            hi = t.max(next);
            break;
        }
        t = next;
        gt = gn;
        if expanded >= opts.max_expand || !next.is_finite() || next == 0.0 {
            return Err(Error::NoBracket);
        }
    }

    let mut theta = 0.5 * (lo + hi);
    for _ in 0..opts.max_iter {
        iterations += 1;
        let gv = g(theta)?;
        if gv.abs() < opts.tol {
            return finish(theta, iterations, true);
        }
        if gv < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return finish(theta, iterations, gv.abs() < opts.tol);
        }
        let slope = dg(theta);
        let newton = theta - gv / slope;
        theta = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            // bisect on the log scale; the bracket may span many decades
            (lo * hi).sqrt().clamp(lo, hi)
        };
    }
    Err(Error::NoConvergence {
        iterations,
        context: "scalar estimating equation".into(),
    })
}

fn solve_newton(
    pooled: &PooledData,
    model: &BiasModel,
    start: Vec<f64>,
    opts: &SolveOptions,
) -> Result<ThetaSolution> {
    let mut theta = start;
    let mut rn = objective_rn(pooled, model, &theta)?;
    for iter in 0..opts.max_iter {
        let grad = gradient_rn(pooled, model, &theta)?;
        let g = g_vec(pooled, model, &theta)?;
        if sup_norm(&g) < opts.tol {
            return Ok(ThetaSolution {
                theta,
                iterations: iter,
                converged: true,
                rn_value: rn,
                g_norm: sup_norm(&g),
            });
        }
        let hess = hessian_rn(pooled, model, &theta)?;
        let chol = hess.cholesky().ok_or(Error::SingularHessian)?;
        let step = chol.solve(&(-DVector::from_vec(grad.clone())));
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        if !slope.is_finite() || slope >= 0.0 {
            return Err(Error::SingularHessian);
        }
        if -slope < 1e-12 * rn.abs().max(1.0) {
            // predicted decrease is below the resolution of the objective:
            // the line search cannot discriminate, take the full step
            theta = theta.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
            rn = objective_rn(pooled, model, &theta)?;
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let value = objective_rn(pooled, model, &trial)?;
            if value.is_finite() && value <= rn + 1e-4 * t * slope {
                theta = trial;
                rn = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No decrease representable in floating point: we are at the
            // minimum to machine precision.
            let g = g_vec(pooled, model, &theta)?;
            return Ok(ThetaSolution {
                converged: sup_norm(&g) < opts.tol,
                g_norm: sup_norm(&g),
                theta,
                iterations: iter + 1,
                rn_value: rn,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        context: "Newton iteration on the profile objective".into(),
    })
}

/// `U_i(θ) − 1` for every pooled atom.
fn centered_u(pooled: &PooledData, model: &BiasModel, theta: &[f64]) -> Result<Vec<f64>> {
    pooled
        .points
        .iter()
        .map(|p| Ok(model.phi(p.w, theta)? - 1.0))
        .collect()
}

/// `Σ ω_i a_i / (1 + λ a_i)`.
pub(crate) fn lagrange_fn(omega: &[f64], a: &[f64], lambda: f64) -> f64 {
    omega
        .iter()
        .zip(a)
        .map(|(w, a)| w * a / (1.0 + lambda * a))
        .sum()
}

/// Unique root in `λ` of `Σ ω_i a_i / (1 + λ a_i)` on
/// `(−1/max a, −1/min a)`, which requires `a` to take both signs.
pub(crate) fn solve_lagrange(omega: &[f64], a: &[f64]) -> Result<f64> {
    let (amin, amax) = a
        .iter()
        .zip(omega)
        .filter(|(_, &w)| w > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&x, _)| {
            (lo.min(x), hi.max(x))
        });
    if !(amin < 0.0 && amax > 0.0) {
        return Err(Error::Infeasible(format!(
            "U - 1 must take both signs, range is [{amin}, {amax}]"
        )));
    }
    let mut lo = -1.0 / amax;
    let mut hi = -1.0 / amin;
    let slope = |l: f64| -> f64 {
        -omega
            .iter()
            .zip(a)
            .map(|(w, a)| {
                let d = 1.0 + l * a;
                w * a * a / (d * d)
            })
            .sum::<f64>()
    };
    let mut lambda = if lo < 0.0 && hi > 0.0 { 0.0 } else { 0.5 * (lo + hi) };
    for _ in 0..400 {
        let f = lagrange_fn(omega, a, lambda);
        if f == 0.0 {
            return Ok(lambda);
        }
        // decreasing in λ
        if f > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi - lo <= 2.0 * f64::EPSILON * lambda.abs().max(1e-300) {
            return Ok(lambda);
        }
        let newton = lambda - f / slope(lambda);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == lambda {
            return Ok(lambda);
        }
        lambda = next;
    }
    Ok(lambda)
}

/// `ψ(λ; θ) = Σ ω_i [U_i − 1] / (1 + λ [U_i − 1])`.
pub fn psi(pooled: &PooledData, model: &BiasModel, theta: &[f64], lambda: f64) -> Result<f64> {
    let a = centered_u(pooled, model, theta)?;
    let omega: Vec<f64> = pooled.points.iter().map(|p| p.omega).collect();
    Ok(lagrange_fn(&omega, &a, lambda))
}

/// Lagrange multiplier `λ(θ)` of the constrained mass problem.
pub fn solve_lambda(pooled: &PooledData, model: &BiasModel, theta: &[f64]) -> Result<f64> {
    let a = centered_u(pooled, model, theta)?;
    let omega: Vec<f64> = pooled.points.iter().map(|p| p.omega).collect();
    solve_lagrange(&omega, &a)
}

/// Masses `ω_i / (1 + λ(θ)[U_i − 1])` maximising the weighted likelihood
/// at fixed `θ`.
pub fn constrained_masses(pooled: &PooledData, model: &BiasModel, theta: &[f64]) -> Result<Vec<f64>> {
    let a = centered_u(pooled, model, theta)?;
    let omega: Vec<f64> = pooled.points.iter().map(|p| p.omega).collect();
    let lambda = solve_lagrange(&omega, &a)?;
    Ok(omega
        .iter()
        .zip(&a)
        .map(|(w, a)| w / (1.0 + lambda * a))
        .collect())
}

/// `p̃_i = ω_i / (ρ0 + ρ1 φ(W_i; θ))` and the step function they define.
pub fn p_tilde_and_f_tilde(
    pooled: &PooledData,
    model: &BiasModel,
    theta: &[f64],
) -> Result<(Vec<f64>, DiscreteDistribution)> {
    model.check_theta(theta)?;
    let p: Vec<f64> = pooled
        .points
        .iter()
        .zip(pooled.ratios(model, theta))
        .map(|(pt, r)| pt.omega * r.inv)
        .collect();
    let dist = DiscreteDistribution::from_atoms(pooled.points.iter().zip(&p).map(|(pt, &m)| (pt.w, m)))?;
    Ok((p, dist))
}

/// Log weighted empirical likelihood divided by `n`:
/// `Σ ω_i ln p_i + Σ_{Y atoms} ω_j ln φ(W_j; θ)`.
pub fn weighted_el_loglik(
    pooled: &PooledData,
    model: &BiasModel,
    theta: &[f64],
    masses: &[f64],
) -> Result<f64> {
    model.check_theta(theta)?;
    if masses.len() != pooled.m() {
        return Err(Error::Param("one mass per pooled atom required".into()));
    }
    let mut total = 0.0;
    for (pt, &p) in pooled.points.iter().zip(masses) {
        if pt.omega > 0.0 {
            if !(p > 0.0) {
                return Err(Error::Domain(format!("nonpositive mass {p} at {}", pt.w)));
            }
            total += pt.omega * p.ln();
        }
        if pt.origin == Origin::Y {
            total += pt.omega * model.log_phi_unchecked(pt.w, theta);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpmleFit {
    pub theta: Vec<f64>,
    pub p_tilde: Vec<f64>,
    pub f_tilde: DiscreteDistribution,
    pub rn_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub g_norm: f64,
    pub sigma1_hat: Vec<Vec<f64>>,
    /// `|λ(θ̃) − ρ1|`; absent when `θ̃` violates the feasibility condition.
    pub lambda_check: Option<f64>,
}

/// Solve for `θ̃` and assemble the full fit.
pub fn fit_pooled(pooled: &PooledData, model: &BiasModel, opts: &SolveOptions) -> Result<SpmleFit> {
    let sol = solve_theta(pooled, model, opts)?;
    let (p_tilde, f_tilde) = p_tilde_and_f_tilde(pooled, model, &sol.theta)?;
    let s1 = sigma1_hat(pooled, model, &sol.theta)?;
    let q = model.dim();
    let sigma1_hat = (0..q).map(|a| (0..q).map(|b| s1[(a, b)]).collect()).collect();
    let lambda_check = solve_lambda(pooled, model, &sol.theta)
        .ok()
        .map(|l| (l - pooled.rho1).abs());
    Ok(SpmleFit {
        theta: sol.theta,
        p_tilde,
        f_tilde,
        rn_value: sol.rn_value,
        iterations: sol.iterations,
        converged: sol.converged,
        g_norm: sol.g_norm,
        sigma1_hat,
        lambda_check,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpmleOptions {
    pub npmle: NpmleOptions,
    pub solve: SolveOptions,
}

/// Everything computed from one two-sample dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoSampleFit {
    pub fhat: NpmleFit,
    pub ghat: NpmleFit,
    pub pooled: PooledData,
    pub fit: SpmleFit,
}

/// NPMLEs for both samples, pooling, and the semiparametric fit.
pub fn fit_two_sample(data: &TwoSampleData, model: &BiasModel, opts: &SpmleOptions) -> Result<TwoSampleFit> {
    let fhat = npmle(data.sample_x(), data.scheme_x(), &opts.npmle)?;
    let ghat = npmle(data.sample_y(), data.scheme_y(), &opts.npmle)?;
    let pooled = pool(&fhat.distribution, &ghat.distribution, data.n0(), data.n1())?;
    let fit = fit_pooled(&pooled, model, &opts.solve)?;
    Ok(TwoSampleFit {
        fhat,
        ghat,
        pooled,
        fit,
    })
}
