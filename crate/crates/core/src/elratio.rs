//! Weighted empirical log-likelihood ratio for `θ` in a biased sampling
//! model, and the resulting confidence interval for `w0 = 1/θ0`.
//!
//! Under the null the statistic `−2 ln r(θ0)` behaves like `c0 χ²₁` for a
//! data-dependent scale `c0`, estimated here by the bootstrap.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bootstrap;
use crate::data::TwoSampleData;
use crate::error::{Error, Result};
use crate::model::BiasModel;
use crate::spmle::{fit_two_sample, lagrange_fn, solve_lagrange, PooledData, SpmleOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub theta0: f64,
    pub lambda0: f64,
    pub log_r: f64,
    /// `−2 ln r(θ0)`
    pub stat: f64,
}

fn require_biased(model: &BiasModel) -> Result<()> {
    if model.is_biased_sampling() {
        Ok(())
    } else {
        Err(Error::Param(
            "the likelihood ratio is defined for biased sampling models only".into(),
        ))
    }
}

fn weights(pooled: &PooledData, model: &BiasModel) -> Vec<f64> {
    let w = model.weight().expect("biased sampling model");
    pooled.points.iter().map(|p| w.eval(p.w)).collect()
}

fn omegas(pooled: &PooledData) -> Vec<f64> {
    pooled.points.iter().map(|p| p.omega).collect()
}

fn centered(ws: &[f64], theta0: f64) -> Vec<f64> {
    ws.iter().map(|w| theta0 * w - 1.0).collect()
}

/// `Σ ω_i U_i / (1 + λ U_i)` with `U_i = θ0 w(W_i) − 1`.
pub fn phi_lambda(pooled: &PooledData, model: &BiasModel, theta0: f64, lambda: f64) -> Result<f64> {
    require_biased(model)?;
    model.check_theta(&[theta0])?;
    let u = centered(&weights(pooled, model), theta0);
    Ok(lagrange_fn(&omegas(pooled), &u, lambda))
}

pub fn solve_lambda0(pooled: &PooledData, model: &BiasModel, theta0: f64) -> Result<f64> {
    require_biased(model)?;
    model.check_theta(&[theta0])?;
    let u = centered(&weights(pooled, model), theta0);
    solve_lagrange(&omegas(pooled), &u)
}

/// Open interval of `θ0` for which `θ0 w(W_i) − 1` takes both signs.
pub fn feasible_range(pooled: &PooledData, model: &BiasModel) -> Result<(f64, f64)> {
    require_biased(model)?;
    let (wmin, wmax) = pooled
        .points
        .iter()
        .zip(weights(pooled, model))
        .filter(|(p, _)| p.omega > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, w)| (lo.min(w), hi.max(w)));
    if !(wmax > wmin) || !(wmax > 0.0) {
        return Err(Error::Infeasible(
            "weights are constant on the pooled support".into(),
        ));
    }
    let hi = if wmin > 0.0 { 1.0 / wmin } else { f64::INFINITY };
    Ok((1.0 / wmax, hi))
}

/// `ln r(θ0) = −n Σ ω_i ln[(1 + λ0 U_i) / (ρ0 + ρ1 θ̃ w(W_i))] − n ρ1 ln(θ̃/θ0)`.
pub fn log_ratio(pooled: &PooledData, model: &BiasModel, theta_hat: f64, theta0: f64) -> Result<RatioResult> {
    require_biased(model)?;
    model.check_theta(&[theta_hat])?;
    model.check_theta(&[theta0])?;
    let ws = weights(pooled, model);
    let omega = omegas(pooled);
    let u = centered(&ws, theta0);
    let lambda0 = solve_lagrange(&omega, &u)?;
    let (rho0, rho1) = (pooled.rho0, pooled.rho1);
    let sum: f64 = omega
        .iter()
        .zip(&u)
        .zip(&ws)
        .filter(|((&om, _), _)| om > 0.0)
        .map(|((om, u), w)| om * ((1.0 + lambda0 * u).ln() - (rho0 + rho1 * theta_hat * w).ln()))
        .sum();
    let n = pooled.n() as f64;
    let log_r = -n * sum - n * rho1 * (theta_hat / theta0).ln();
    Ok(RatioResult {
        theta0,
        lambda0,
        log_r,
        stat: -2.0 * log_r,
    })
}

/// Curvature `κ` in `stat(θ) ≈ n κ (θ − θ̃)²`, by central differences.
pub fn curvature(pooled: &PooledData, model: &BiasModel, theta_hat: f64) -> Result<f64> {
    let h = 1e-4 * theta_hat;
    let s = |t: f64| -> Result<f64> { Ok(log_ratio(pooled, model, theta_hat, t)?.stat) };
    let second = (s(theta_hat + h)? - 2.0 * s(theta_hat)? + s(theta_hat - h)?) / (h * h);
    Ok(second / (2.0 * pooled.n() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C0Estimate {
    pub c0_hat: f64,
    pub b: usize,
    pub seed: u64,
    /// Bootstrap null statistics `−2 ln r*(θ̃)`.
    pub stats: Vec<f64>,
    /// Bootstrap estimates `θ̃*`.
    pub thetas: Vec<f64>,
    pub degenerate_replicates: usize,
    /// Cross-check `κ̂ · n · Var*(θ̃*)`; should be close to `c0_hat`.
    pub plugin_c0: Option<f64>,
}

/// Bootstrap estimate of the scale `c0` as the mean of the null statistic
/// over resamples of both samples.
pub fn estimate_c0(
    data: &TwoSampleData,
    model: &BiasModel,
    theta_hat: f64,
    opts: &SpmleOptions,
    b: usize,
    seed: u64,
) -> Result<C0Estimate> {
    require_biased(model)?;
    if b < 100 {
        return Err(Error::Param(format!("at least 100 bootstrap replicates required, got {b}")));
    }
    let reps = bootstrap::run(data, b, seed, |sample| {
        let fit = fit_two_sample(sample, model, opts)?;
        let t = fit.fit.theta[0];
        let r = log_ratio(&fit.pooled, model, t, theta_hat)?;
        Ok((r.stat, t))
    })?;
    let (stats, thetas): (Vec<f64>, Vec<f64>) = reps.values.into_iter().unzip();
    let c0_hat = stats.iter().sum::<f64>() / b as f64;

    let plugin_c0 = (|| -> Result<f64> {
        let fit = fit_two_sample(data, model, opts)?;
        let kappa = curvature(&fit.pooled, model, theta_hat)?;
        let mean = thetas.iter().sum::<f64>() / b as f64;
        let var = thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
        Ok(kappa * data.n() as f64 * var)
    })()
    .ok();

    Ok(C0Estimate {
        c0_hat,
        b,
        seed,
        stats,
        thetas,
        degenerate_replicates: reps.degenerate,
        plugin_c0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCI {
    /// `X_L = 1/θ_hi`
    pub lower: f64,
    /// `X_U = 1/θ_lo`
    pub upper: f64,
    pub w_hat: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub level: f64,
    pub threshold: f64,
    pub c0_hat: f64,
    /// The corresponding side never reached the threshold inside the
    /// feasible range and stops at its boundary.
    pub lower_at_boundary: bool,
    pub upper_at_boundary: bool,
    /// The scan detected a non-monotone statistic and used the dense grid.
    pub dense_fallback: bool,
    /// The statistic exceeds the threshold everywhere; the interval is the
    /// single point minimising it.
    pub degenerate: bool,
}

struct Side {
    theta: f64,
    at_boundary: bool,
    dense: bool,
}

fn search_side<F: Fn(f64) -> Result<f64>>(stat: &F, center: f64, bound: f64, threshold: f64) -> Result<Side> {
    let mut inside = center;
    let mut prev = stat(center)?;
    let mut monotone = true;
    let mut outside = None;
    let mut last = center;
    // geometric steps while far from a finite bound, then halve the gap
    let dir = (bound - center).signum();
    let mut step = 1e-3 * center;
    for _ in 0..400 {
        let t = if bound.is_finite() && step >= 0.5 * (bound - last).abs() {
            0.5 * (last + bound)
        } else {
            center + dir * step
        };
        step *= 2.0;
        if t == last || !t.is_finite() || t == bound {
            break;
        }
        last = t;
        let s = match stat(t) {
            Ok(s) if s.is_finite() => s,
            _ => break,
        };
        if s < prev - 1e-9 * prev.abs().max(1.0) {
            monotone = false;
        }
        prev = s;
        if s > threshold {
            outside = Some(t);
            break;
        }
        inside = t;
    }
    let Some(mut out) = outside else {
        return Ok(Side {
            theta: inside,
            at_boundary: true,
            dense: !monotone,
        });
    };
    let mut inn = inside;
    let mut dense = false;
    if !monotone {
        // take the outermost crossing on a dense grid
        dense = true;
        const GRID: usize = 2000;
        let mut prev_t = center;
        let mut prev_in = true;
        for i in 1..=GRID {
            let t = center + (out - center) * i as f64 / GRID as f64;
            let s_in = stat(t).map(|s| s <= threshold).unwrap_or(false);
            if prev_in && !s_in {
                inn = prev_t;
                out = t;
            }
            prev_t = t;
            prev_in = s_in;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (inn + out);
        if mid == inn || mid == out {
            break;
        }
        let s = stat(mid)?;
        if (s - threshold).abs() < 1e-10 * threshold.max(1.0) {
            inn = mid;
            break;
        }
        if s <= threshold {
            inn = mid;
        } else {
            out = mid;
        }
    }
    Ok(Side {
        theta: inn,
        at_boundary: false,
        dense,
    })
}

/// Minimise the statistic over the feasible range by golden-section search
/// on the log scale, starting from a bracket around `theta_hat`.
fn minimise_stat<F: Fn(f64) -> Result<f64>>(stat: &F, theta_hat: f64, range: (f64, f64)) -> f64 {
    let eval = |t: f64| stat(t).unwrap_or(f64::INFINITY);
    let shrink = |t: f64| t.clamp(range.0 + 1e-12 * range.0.abs(), range.1 - 1e-12 * range.1.abs());
    let mut a = shrink(theta_hat * 0.5).ln();
    let mut b = if range.1.is_finite() { shrink(theta_hat * 2.0) } else { theta_hat * 2.0 }.ln();
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (eval(c.exp()), eval(d.exp()));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d.exp());
        }
        if (b - a).abs() < 1e-12 {
            break;
        }
    }
    (0.5 * (a + b)).exp()
}

/// Level set `{θ : −2 ln r(θ) ≤ c0 χ²₁(level)}` mapped to `w0 = 1/θ`.
pub fn ci_w0(
    pooled: &PooledData,
    model: &BiasModel,
    theta_hat: f64,
    level: f64,
    c0_hat: f64,
) -> Result<WeightCI> {
    require_biased(model)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Param(format!("level must lie in (0, 1), got {level}")));
    }
    if !(c0_hat > 0.0 && c0_hat.is_finite()) {
        return Err(Error::Param(format!("c0 must be positive, got {c0_hat}")));
    }
    let chi = ChiSquared::new(1.0).map_err(|e| Error::Param(e.to_string()))?;
    let threshold = c0_hat * chi.inverse_cdf(level);
    let range = feasible_range(pooled, model)?;
    if !(theta_hat > range.0 && theta_hat < range.1) {
        return Err(Error::Infeasible(format!(
            "estimate {theta_hat} outside the feasible range ({}, {})",
            range.0, range.1
        )));
    }
    let stat = |t: f64| -> Result<f64> { Ok(log_ratio(pooled, model, theta_hat, t)?.stat) };

    let mut center = theta_hat;
    let mut degenerate = false;
    if stat(theta_hat)? > threshold + 1e-9 {
        // improper inputs can lift the statistic off zero at θ̃
        center = minimise_stat(&stat, theta_hat, range);
        degenerate = stat(center)? > threshold;
    }
    let (lo, hi) = if degenerate {
        (
            Side { theta: center, at_boundary: false, dense: false },
            Side { theta: center, at_boundary: false, dense: false },
        )
    } else {
        (
            search_side(&stat, center, range.0, threshold)?,
            search_side(&stat, center, range.1, threshold)?,
        )
    };
    Ok(WeightCI {
        lower: 1.0 / hi.theta,
        upper: 1.0 / lo.theta,
        w_hat: 1.0 / theta_hat,
        theta_lo: lo.theta,
        theta_hi: hi.theta,
        level,
        threshold,
        c0_hat,
        lower_at_boundary: hi.at_boundary,
        upper_at_boundary: lo.at_boundary,
        dense_fallback: lo.dense || hi.dense,
        degenerate,
    })
}
